//! Window planning, standardization, and snapshot construction.
//!
//! Two routes produce the same training data:
//!
//! * the **index** route keeps the standardized signal plus a start-index
//!   array and serves each snapshot as a pair of borrowed views, and
//! * the **materialized** route stacks a standardized copy of every window
//!   pair, exactly as the classic preprocessing pipeline does.
//!
//! The second exists as an oracle for the first: for every window ordinal
//! the view and the stacked row must be bit-identical.

use crate::dataset::TemporalSignal;
use crate::memory::{AllocLedger, Stage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("signal has {entries} entries but windows need at least {min} (input_len + output_len)")]
    TooFewEntries { entries: usize, min: usize },
    #[error("{name} must be at least 1")]
    ZeroLength { name: &'static str },
    #[error("split fraction {name}={value} must lie in (0, 1)")]
    BadFraction { name: &'static str, value: f64 },
    #[error("split fractions sum to {sum}, must be below 1")]
    FractionSum { sum: f64 },
    #[error("training split is empty; stats need at least one training window")]
    EmptyTrainSplit,
    #[error("training region has zero variance; constant data cannot be standardized")]
    ZeroVariance,
    #[error("sigma must be positive and finite, got {0}")]
    NonPositiveSigma(f64),
    #[error("window ordinal {ordinal} out of range, plan holds {count} windows")]
    OrdinalOutOfRange { ordinal: usize, count: usize },
    #[error("plan does not match signal: {detail}")]
    PlanSignalMismatch { detail: String },
    #[error("materialized stacks would need {requested_bytes} bytes, beyond what can be allocated")]
    SizedAllocation { requested_bytes: u128 },
    #[error("sidecar field `{field}`: {detail}")]
    BadMetadata { field: &'static str, detail: String },
    #[error(transparent)]
    Data(#[from] crate::dataset::DataError),
}

/// Window geometry plus split boundaries: the index pipeline's entire
/// preprocessing output besides the standardized signal itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    entries: usize,
    step_len: usize,
    input_len: usize,
    output_len: usize,
    starts: Vec<u64>,
    train_end: usize,
    val_end: usize,
}

/// Dataset split, expressed over window ordinals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl WindowPlan {
    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    /// Number of valid window placements.
    pub fn count(&self) -> usize {
        self.starts.len()
    }

    pub fn starts(&self) -> &[u64] {
        &self.starts
    }

    pub fn train_end(&self) -> usize {
        self.train_end
    }

    pub fn val_end(&self) -> usize {
        self.val_end
    }

    pub fn entries(&self) -> usize {
        self.entries
    }

    /// Window ordinals `[lo, hi)` belonging to a split.
    pub fn split_bounds(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => (0, self.train_end),
            Split::Val => (self.train_end, self.val_end),
            Split::Test => (self.val_end, self.count()),
        }
    }

    pub fn split_len(&self, split: Split) -> usize {
        let (lo, hi) = self.split_bounds(split);
        hi - lo
    }

    /// Bytes held by the start-index array (8 bytes per entry).
    pub fn index_bytes(&self) -> u64 {
        self.starts.len() as u64 * 8
    }

    fn check_signal(&self, signal: &TemporalSignal) -> Result<(), PlanError> {
        if signal.entries() != self.entries || signal.step_len() != self.step_len {
            return Err(PlanError::PlanSignalMismatch {
                detail: format!(
                    "plan built for {}x{} steps, signal is {}x{}",
                    self.entries,
                    self.step_len,
                    signal.entries(),
                    signal.step_len()
                ),
            });
        }
        Ok(())
    }
}

/// Half-away-from-zero rounding of `count * frac`, the split convention the
/// reference pipeline uses.
fn round_split(count: usize, frac: f64) -> usize {
    (count as f64 * frac).round() as usize
}

/// Enumerate every valid window start and fix the split boundaries.
pub fn plan_windows(
    signal: &TemporalSignal,
    input_len: usize,
    output_len: usize,
    split: (f64, f64),
) -> Result<WindowPlan, PlanError> {
    if input_len == 0 {
        return Err(PlanError::ZeroLength { name: "input_len" });
    }
    if output_len == 0 {
        return Err(PlanError::ZeroLength { name: "output_len" });
    }
    let (train_frac, val_frac) = split;
    for (name, value) in [("train_frac", train_frac), ("val_frac", val_frac)] {
        if value <= 0.0 || value >= 1.0 || value.is_nan() {
            return Err(PlanError::BadFraction { name, value });
        }
    }
    if train_frac + val_frac >= 1.0 {
        return Err(PlanError::FractionSum { sum: train_frac + val_frac });
    }

    let min = input_len + output_len;
    let entries = signal.entries();
    if entries < min {
        return Err(PlanError::TooFewEntries { entries, min });
    }
    let count = entries - min + 1;
    let starts: Vec<u64> = (0..count as u64).collect();
    let train_end = round_split(count, train_frac);
    let val_end = train_end + round_split(count, val_frac);
    debug_assert!(val_end <= count);

    Ok(WindowPlan {
        entries,
        step_len: signal.step_len(),
        input_len,
        output_len,
        starts,
        train_end,
        val_end,
    })
}

impl WindowPlan {
    /// Rebuild a plan from persisted bounds, revalidating every invariant
    /// against the signal it will serve.
    pub fn from_bounds(
        signal: &TemporalSignal,
        input_len: usize,
        output_len: usize,
        train_end: usize,
        val_end: usize,
    ) -> Result<Self, PlanError> {
        if input_len == 0 {
            return Err(PlanError::ZeroLength { name: "input_len" });
        }
        if output_len == 0 {
            return Err(PlanError::ZeroLength { name: "output_len" });
        }
        let min = input_len + output_len;
        let entries = signal.entries();
        if entries < min {
            return Err(PlanError::TooFewEntries { entries, min });
        }
        let count = entries - min + 1;
        if train_end > val_end || val_end > count {
            return Err(PlanError::BadMetadata {
                field: "train_end/val_end",
                detail: format!("bounds {train_end}/{val_end} exceed {count} windows"),
            });
        }
        Ok(Self {
            entries,
            step_len: signal.step_len(),
            input_len,
            output_len,
            starts: (0..count as u64).collect(),
            train_end,
            val_end,
        })
    }
}

/// How the training mean and deviation are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsMode {
    /// Match the materialized pipeline exactly: every raw time step is
    /// weighted by the number of training windows whose x-slice covers it.
    WindowWeighted,
    /// Unweighted moments over the raw steps the training x-windows span.
    RawRegion,
}

/// Scalar standardization statistics of the training region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardizationStats {
    pub mu: f64,
    pub sigma: f64,
    pub mode: StatsMode,
}

impl StandardizationStats {
    pub fn new(mu: f64, sigma: f64, mode: StatsMode) -> Result<Self, PlanError> {
        if sigma <= 0.0 || !sigma.is_finite() || !mu.is_finite() {
            return Err(PlanError::NonPositiveSigma(sigma));
        }
        Ok(Self { mu, sigma, mode })
    }
}

/// The one standardization expression, shared by the in-place pass and the
/// materialized copy so both routes produce identical bits.
#[inline]
pub(crate) fn standardize_value(v: f64, mu: f64, sigma: f64) -> f64 {
    (v - mu) / sigma
}

/// Training-region mean and population standard deviation, computed without
/// materializing any window.
pub fn compute_stats(
    signal: &TemporalSignal,
    plan: &WindowPlan,
    mode: StatsMode,
) -> Result<StandardizationStats, PlanError> {
    plan.check_signal(signal)?;
    if plan.train_end == 0 {
        return Err(PlanError::EmptyTrainSplit);
    }
    let t_in = plan.input_len;
    let train_end = plan.train_end;
    let last_step = (train_end - 1) + t_in; // exclusive
    let step_len = signal.step_len();
    let values = signal.values();

    let weight = |t: usize| -> f64 {
        match mode {
            StatsMode::WindowWeighted => {
                let lo = t.saturating_sub(t_in - 1);
                let hi = (train_end - 1).min(t);
                (hi + 1 - lo) as f64
            }
            StatsMode::RawRegion => 1.0,
        }
    };
    let total: f64 = match mode {
        StatsMode::WindowWeighted => (train_end * t_in * step_len) as f64,
        StatsMode::RawRegion => (last_step * step_len) as f64,
    };

    let mut sum = 0.0;
    for t in 0..last_step {
        let w = weight(t);
        let mut step_sum = 0.0;
        for &v in &values[t * step_len..(t + 1) * step_len] {
            step_sum += v;
        }
        sum += w * step_sum;
    }
    let mu = sum / total;

    let mut sq = 0.0;
    for t in 0..last_step {
        let w = weight(t);
        let mut step_sq = 0.0;
        for &v in &values[t * step_len..(t + 1) * step_len] {
            let d = v - mu;
            step_sq += d * d;
        }
        sq += w * step_sq;
    }
    let variance = sq / total;
    let sigma = variance.sqrt();
    if sigma <= 0.0 || sigma.is_nan() {
        return Err(PlanError::ZeroVariance);
    }
    StandardizationStats::new(mu, sigma, mode)
}

/// Map every value through `(v - mu) / sigma`, mutating the signal once.
/// After this pass the index route's views match the oracle's standardized
/// stacks bit for bit.
pub fn standardize_in_place(
    signal: &mut TemporalSignal,
    stats: &StandardizationStats,
) -> Result<(), PlanError> {
    if stats.sigma <= 0.0 || !stats.sigma.is_finite() {
        return Err(PlanError::NonPositiveSigma(stats.sigma));
    }
    let (mu, sigma) = (stats.mu, stats.sigma);
    for v in signal.values_mut() {
        *v = standardize_value(*v, mu, sigma);
    }
    Ok(())
}

/// One `(x, y)` window pair, borrowed straight out of the backing signal.
///
/// `x` covers time steps `[s, s+T')` and `y` covers `[s+T', s+T'+T)`; both
/// are views, so construction copies nothing.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub input_len: usize,
    pub output_len: usize,
    pub nodes: usize,
    pub features: usize,
}

/// Reconstruct the `i`-th snapshot as views into the (standardized) signal.
/// O(1) and copy-free.
pub fn snapshot<'a>(
    signal: &'a TemporalSignal,
    plan: &WindowPlan,
    i: usize,
) -> Result<Snapshot<'a>, PlanError> {
    plan.check_signal(signal)?;
    if i >= plan.count() {
        return Err(PlanError::OrdinalOutOfRange { ordinal: i, count: plan.count() });
    }
    let s = plan.starts[i] as usize;
    let mid = s + plan.input_len;
    let end = mid + plan.output_len;
    Ok(Snapshot {
        x: signal.step_range(s, mid),
        y: signal.step_range(mid, end),
        input_len: plan.input_len,
        output_len: plan.output_len,
        nodes: signal.nodes(),
        features: signal.features(),
    })
}

/// The classic pipeline's output: standardized copies of every window pair,
/// stacked in start order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedDataset {
    x_stack: Vec<f64>,
    y_stack: Vec<f64>,
    pub stats: StandardizationStats,
    count: usize,
    input_len: usize,
    output_len: usize,
    nodes: usize,
    features: usize,
}

impl MaterializedDataset {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        let w = self.input_len * self.step_len();
        &self.x_stack[i * w..(i + 1) * w]
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        let w = self.output_len * self.step_len();
        &self.y_stack[i * w..(i + 1) * w]
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn step_len(&self) -> usize {
        self.nodes * self.features
    }

    /// Total stacked elements across both stacks.
    pub fn elements(&self) -> u64 {
        (self.x_stack.len() + self.y_stack.len()) as u64
    }
}

/// In-memory bytes the stacks will request. Split out so the overflow guard
/// is testable without provoking a real allocation failure.
pub fn materialized_request_bytes(
    count: usize,
    input_len: usize,
    output_len: usize,
    step_len: usize,
) -> Result<(usize, usize), PlanError> {
    let elements = (count as u128) * ((input_len + output_len) as u128) * (step_len as u128);
    let bytes = elements * 8;
    if bytes > isize::MAX as u128 {
        return Err(PlanError::SizedAllocation { requested_bytes: bytes });
    }
    Ok((elements as usize, bytes as usize))
}

/// Run the materialized pipeline: copy every window pair out of the raw
/// signal, standardizing on the way. The raw signal is retained by the
/// caller; only the stack allocation is charged to the ledger.
pub fn build_materialized(
    signal: &TemporalSignal,
    plan: &WindowPlan,
    stats: &StandardizationStats,
    ledger: &AllocLedger,
) -> Result<MaterializedDataset, PlanError> {
    plan.check_signal(signal)?;
    if stats.sigma <= 0.0 || !stats.sigma.is_finite() {
        return Err(PlanError::NonPositiveSigma(stats.sigma));
    }
    let count = plan.count();
    let step_len = signal.step_len();
    let (elements, bytes) =
        materialized_request_bytes(count, plan.input_len, plan.output_len, step_len)?;

    let x_len = count * plan.input_len * step_len;
    let y_len = elements - x_len;
    let mut x_stack: Vec<f64> = Vec::new();
    let mut y_stack: Vec<f64> = Vec::new();
    x_stack
        .try_reserve_exact(x_len)
        .and_then(|_| y_stack.try_reserve_exact(y_len))
        .map_err(|_| PlanError::SizedAllocation { requested_bytes: bytes as u128 })?;

    let (mu, sigma) = (stats.mu, stats.sigma);
    for &s in &plan.starts {
        let s = s as usize;
        let mid = s + plan.input_len;
        let end = mid + plan.output_len;
        for &v in signal.step_range(s, mid) {
            x_stack.push(standardize_value(v, mu, sigma));
        }
        for &v in signal.step_range(mid, end) {
            y_stack.push(standardize_value(v, mu, sigma));
        }
    }

    // account stacked elements at the signal's declared width
    ledger.record_alloc(
        Stage::MaterializedStack,
        elements as u64 * signal.element_width().bytes(),
    );
    ledger.record_copies(Stage::MaterializedStack, elements as u64);

    Ok(MaterializedDataset {
        x_stack,
        y_stack,
        stats: *stats,
        count,
        input_len: plan.input_len,
        output_len: plan.output_len,
        nodes: signal.nodes(),
        features: signal.features(),
    })
}

impl StatsMode {
    pub fn name(self) -> &'static str {
        match self {
            StatsMode::WindowWeighted => "window_weighted",
            StatsMode::RawRegion => "raw_region",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "window_weighted" => Some(StatsMode::WindowWeighted),
            "raw_region" => Some(StatsMode::RawRegion),
            _ => None,
        }
    }
}

/// Persist a preprocessed signal: the stb payload next to a `key=value`
/// sidecar holding the standardization stats and window/split geometry.
pub fn save_preprocessed(
    signal: &TemporalSignal,
    plan: &WindowPlan,
    stats: &StandardizationStats,
    stb_path: impl AsRef<std::path::Path>,
    meta_path: impl AsRef<std::path::Path>,
) -> Result<(), PlanError> {
    plan.check_signal(signal)?;
    crate::dataset::save_signal(signal, stb_path, crate::dataset::SignalFormat::Stb)?;
    let meta = format!(
        "# stib preprocessed v1\nmu={:.17e}\nsigma={:.17e}\nstats_mode={}\ninput_len={}\noutput_len={}\ntrain_end={}\nval_end={}\n",
        stats.mu,
        stats.sigma,
        stats.mode.name(),
        plan.input_len(),
        plan.output_len(),
        plan.train_end(),
        plan.val_end(),
    );
    std::fs::write(meta_path, meta).map_err(crate::dataset::DataError::Io)?;
    Ok(())
}

/// Load a signal + plan + stats persisted by [`save_preprocessed`].
pub fn load_preprocessed(
    stb_path: impl AsRef<std::path::Path>,
    meta_path: impl AsRef<std::path::Path>,
) -> Result<(TemporalSignal, WindowPlan, StandardizationStats), PlanError> {
    let signal = crate::dataset::load_signal(stb_path, crate::dataset::SignalFormat::Stb)?;
    let text = std::fs::read_to_string(meta_path).map_err(crate::dataset::DataError::Io)?;
    let lookup = |field: &'static str| -> Result<&str, PlanError> {
        text.lines()
            .filter(|l| !l.starts_with('#'))
            .find_map(|l| l.strip_prefix(field).and_then(|r| r.strip_prefix('=')))
            .ok_or(PlanError::BadMetadata { field, detail: "missing".to_string() })
    };
    let num = |field: &'static str| -> Result<f64, PlanError> {
        lookup(field)?.trim().parse().map_err(|e| PlanError::BadMetadata {
            field,
            detail: format!("{e}"),
        })
    };
    let int = |field: &'static str| -> Result<usize, PlanError> {
        lookup(field)?.trim().parse().map_err(|e| PlanError::BadMetadata {
            field,
            detail: format!("{e}"),
        })
    };
    let mode_name = lookup("stats_mode")?.trim().to_string();
    let mode = StatsMode::parse(&mode_name).ok_or(PlanError::BadMetadata {
        field: "stats_mode",
        detail: mode_name,
    })?;
    let stats = StandardizationStats::new(num("mu")?, num("sigma")?, mode)?;
    let plan = WindowPlan::from_bounds(
        &signal,
        int("input_len")?,
        int("output_len")?,
        int("train_end")?,
        int("val_end")?,
    )?;
    Ok((signal, plan, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, Dynamics};

    fn ramp_signal(entries: usize) -> TemporalSignal {
        let values: Vec<f64> = (0..entries).map(|v| v as f64).collect();
        TemporalSignal::new(entries, 1, 1, values).unwrap()
    }

    /// Brute-force reference: stack the raw training windows per the classic
    /// algorithm and take two-pass moments over the stack.
    fn oracle_stats(signal: &TemporalSignal, plan: &WindowPlan) -> (f64, f64) {
        let step = signal.step_len();
        let mut stacked = Vec::new();
        for i in 0..plan.train_end() {
            let s = plan.starts()[i] as usize;
            stacked.extend_from_slice(signal.step_range(s, s + plan.input_len()));
        }
        let n = stacked.len() as f64;
        let mu: f64 = stacked.iter().sum::<f64>() / n;
        let var: f64 = stacked.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let _ = step;
        (mu, var.sqrt())
    }

    #[test]
    fn plan_single_window() {
        let s = ramp_signal(6);
        let plan = plan_windows(&s, 3, 3, (0.7, 0.1)).unwrap();
        assert_eq!(plan.count(), 1);
        assert_eq!(plan.starts(), &[0]);
        let snap = snapshot(&s, &plan, 0).unwrap();
        assert_eq!(snap.x, &[0.0, 1.0, 2.0]);
        assert_eq!(snap.y, &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn plan_window_count_law() {
        let s = TemporalSignal::new(105_120, 1, 1, vec![0.0; 105_120])
            .unwrap();
        // constant values are fine for planning; stats would reject them
        let plan = plan_windows(&s, 12, 12, (0.7, 0.1)).unwrap();
        assert_eq!(plan.count(), 105_097);
    }

    #[test]
    fn plan_too_short_names_minimum() {
        let s = ramp_signal(5);
        match plan_windows(&s, 3, 3, (0.7, 0.1)) {
            Err(PlanError::TooFewEntries { entries: 5, min: 6 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn plan_rejects_bad_fractions() {
        let s = ramp_signal(10);
        assert!(matches!(
            plan_windows(&s, 2, 2, (0.0, 0.1)),
            Err(PlanError::BadFraction { .. })
        ));
        assert!(matches!(
            plan_windows(&s, 2, 2, (0.7, 0.3)),
            Err(PlanError::FractionSum { .. })
        ));
    }

    #[test]
    fn split_rounding_half_away_from_zero() {
        let s = ramp_signal(6);
        let plan = plan_windows(&s, 1, 1, (0.7, 0.1)).unwrap();
        assert_eq!(plan.count(), 5);
        assert_eq!(plan.train_end(), 4); // round(3.5)
        assert_eq!(plan.val_end(), 5); // 4 + round(0.5)
        assert_eq!(plan.split_bounds(Split::Test), (5, 5));
    }

    #[test]
    fn stats_match_hand_computed_example() {
        let s = ramp_signal(6);
        let plan = plan_windows(&s, 1, 1, (0.7, 0.1)).unwrap();
        let stats = compute_stats(&s, &plan, StatsMode::WindowWeighted).unwrap();
        assert!((stats.mu - 1.5).abs() < 1e-15);
        assert!((stats.sigma - 1.25f64.sqrt()).abs() < 1e-15);

        let (mu_o, sigma_o) = oracle_stats(&s, &plan);
        assert!((stats.mu - mu_o).abs() < 1e-15);
        assert!((stats.sigma - sigma_o).abs() < 1e-15);
    }

    #[test]
    fn constant_signal_is_rejected() {
        let s = TemporalSignal::new(8, 2, 1, vec![3.0; 16]).unwrap();
        let plan = plan_windows(&s, 2, 2, (0.7, 0.1)).unwrap();
        match compute_stats(&s, &plan, StatsMode::WindowWeighted) {
            Err(PlanError::ZeroVariance) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn weighted_stats_match_oracle_across_configs() {
        for (seed, entries, nodes, features, t_in, t_out) in [
            (0u64, 40usize, 3usize, 2usize, 4usize, 4usize),
            (1, 25, 5, 1, 2, 3),
            (2, 100, 2, 2, 8, 8),
            (3, 12, 4, 3, 1, 1),
            (4, 64, 1, 1, 5, 2),
        ] {
            let (signal, _) =
                gen_synthetic(entries, nodes, features, seed, Dynamics::RandomWalk { step: 1.0 })
                    .unwrap();
            let plan = plan_windows(&signal, t_in, t_out, (0.7, 0.1)).unwrap();
            let stats = compute_stats(&signal, &plan, StatsMode::WindowWeighted).unwrap();
            let (mu_o, sigma_o) = oracle_stats(&signal, &plan);
            assert!(
                ((stats.mu - mu_o) / mu_o).abs() < 1e-12,
                "mu mismatch seed {seed}: {} vs {mu_o}",
                stats.mu
            );
            assert!(
                ((stats.sigma - sigma_o) / sigma_o).abs() < 1e-12,
                "sigma mismatch seed {seed}: {} vs {sigma_o}",
                stats.sigma
            );
        }
    }

    #[test]
    fn raw_region_mode_covers_training_span() {
        let s = ramp_signal(10);
        let plan = plan_windows(&s, 2, 2, (0.7, 0.1)).unwrap();
        // train_end = round(7*0.7) = 5, spanning raw steps [0, 6)
        assert_eq!(plan.train_end(), 5);
        let stats = compute_stats(&s, &plan, StatsMode::RawRegion).unwrap();
        let mu = (0..6).sum::<usize>() as f64 / 6.0;
        let var = (0..6).map(|v| (v as f64 - mu) * (v as f64 - mu)).sum::<f64>() / 6.0;
        assert!((stats.mu - mu).abs() < 1e-15);
        assert!((stats.sigma - var.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn standardize_examples() {
        let mut s = TemporalSignal::new(2, 1, 1, vec![2.0, 4.0]).unwrap();
        let stats = StandardizationStats::new(3.0, 1.0, StatsMode::WindowWeighted).unwrap();
        standardize_in_place(&mut s, &stats).unwrap();
        assert_eq!(s.values(), &[-1.0, 1.0]);

        let mut s = TemporalSignal::new(2, 1, 1, vec![2.0, 4.0]).unwrap();
        let identity = StandardizationStats::new(0.0, 1.0, StatsMode::WindowWeighted).unwrap();
        standardize_in_place(&mut s, &identity).unwrap();
        assert_eq!(s.values(), &[2.0, 4.0]);
    }

    #[test]
    fn standardized_train_region_has_unit_moments() {
        let (signal, _) =
            gen_synthetic(300, 4, 2, 5, Dynamics::Diffusion { noise: 0.5 }).unwrap();
        let plan = plan_windows(&signal, 6, 6, (0.7, 0.1)).unwrap();
        let stats = compute_stats(&signal, &plan, StatsMode::WindowWeighted).unwrap();
        let mut std_signal = signal.clone();
        standardize_in_place(&mut std_signal, &stats).unwrap();
        let post = compute_stats(&std_signal, &plan, StatsMode::WindowWeighted).unwrap();
        assert!(post.mu.abs() <= 1e-10, "mean {}", post.mu);
        assert!((post.sigma * post.sigma - 1.0).abs() <= 1e-10, "var {}", post.sigma * post.sigma);
    }

    #[test]
    fn views_match_materialized_rows_bitwise() {
        let (signal, _) =
            gen_synthetic(200, 5, 1, 11, Dynamics::Diffusion { noise: 0.5 }).unwrap();
        for (t_in, t_out) in [(3usize, 3usize), (4, 2)] {
            let plan = plan_windows(&signal, t_in, t_out, (0.7, 0.1)).unwrap();
            let stats = compute_stats(&signal, &plan, StatsMode::WindowWeighted).unwrap();
            let ledger = AllocLedger::new();
            let mds = build_materialized(&signal, &plan, &stats, &ledger).unwrap();

            let mut std_signal = signal.clone();
            standardize_in_place(&mut std_signal, &stats).unwrap();

            for i in 0..plan.count() {
                let snap = snapshot(&std_signal, &plan, i).unwrap();
                let bits = |s: &[f64]| -> Vec<u64> { s.iter().map(|v| v.to_bits()).collect() };
                assert_eq!(bits(snap.x), bits(mds.x_row(i)), "x row {i}");
                assert_eq!(bits(snap.y), bits(mds.y_row(i)), "y row {i}");
            }
        }
    }

    #[test]
    fn materialized_element_count_matches_formula() {
        // E=100, h=4, N=3, F=2 -> 2*(100-7)*4*3*2 = 4464 elements
        let (signal, _) = gen_synthetic(100, 3, 2, 0, Dynamics::RandomWalk { step: 1.0 }).unwrap();
        let plan = plan_windows(&signal, 4, 4, (0.7, 0.1)).unwrap();
        let stats = compute_stats(&signal, &plan, StatsMode::WindowWeighted).unwrap();
        let ledger = AllocLedger::new();
        let mds = build_materialized(&signal, &plan, &stats, &ledger).unwrap();
        assert_eq!(mds.elements(), 4464);
        assert_eq!(ledger.bytes(Stage::MaterializedStack), 4464 * 8);
        assert_eq!(ledger.copies(Stage::MaterializedStack), 4464);
    }

    #[test]
    fn snapshot_boundaries_and_errors() {
        let s = ramp_signal(10);
        let plan = plan_windows(&s, 3, 3, (0.7, 0.1)).unwrap();
        assert_eq!(plan.count(), 5);
        let last = snapshot(&s, &plan, 4).unwrap();
        assert_eq!(*last.y.last().unwrap(), 9.0); // y ends exactly at step E-1
        assert!(matches!(
            snapshot(&s, &plan, 5),
            Err(PlanError::OrdinalOutOfRange { ordinal: 5, count: 5 })
        ));
    }

    #[test]
    fn preprocessed_artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stb = dir.path().join("pre.stb");
        let meta = dir.path().join("pre.meta");

        let (raw, _) = gen_synthetic(60, 3, 2, 8, Dynamics::Diffusion { noise: 0.5 }).unwrap();
        let plan = plan_windows(&raw, 4, 4, (0.7, 0.1)).unwrap();
        let stats = compute_stats(&raw, &plan, StatsMode::WindowWeighted).unwrap();
        let mut signal = raw;
        standardize_in_place(&mut signal, &stats).unwrap();

        save_preprocessed(&signal, &plan, &stats, &stb, &meta).unwrap();
        let (loaded, plan2, stats2) = load_preprocessed(&stb, &meta).unwrap();
        assert_eq!(signal, loaded);
        assert_eq!(plan, plan2);
        assert_eq!(stats.mu.to_bits(), stats2.mu.to_bits());
        assert_eq!(stats.sigma.to_bits(), stats2.sigma.to_bits());
        assert_eq!(stats.mode, stats2.mode);

        // snapshots served from the reloaded artifact are identical
        for i in [0usize, plan.count() - 1] {
            let a = snapshot(&signal, &plan, i).unwrap();
            let b = snapshot(&loaded, &plan2, i).unwrap();
            let bits = |s: &[f64]| -> Vec<u64> { s.iter().map(|v| v.to_bits()).collect() };
            assert_eq!(bits(a.x), bits(b.x));
            assert_eq!(bits(a.y), bits(b.y));
        }
    }

    #[test]
    fn sidecar_rejects_inconsistent_bounds() {
        let (raw, _) = gen_synthetic(20, 2, 1, 0, Dynamics::RandomWalk { step: 1.0 }).unwrap();
        assert!(matches!(
            WindowPlan::from_bounds(&raw, 3, 3, 9, 20),
            Err(PlanError::BadMetadata { .. })
        ));
        assert!(matches!(
            WindowPlan::from_bounds(&raw, 3, 3, 9, 5),
            Err(PlanError::BadMetadata { .. })
        ));
    }

    #[test]
    fn oversized_materialization_reports_requested_bytes() {
        match materialized_request_bytes(usize::MAX / 2, 8, 8, 100) {
            Err(PlanError::SizedAllocation { requested_bytes }) => {
                assert!(requested_bytes > isize::MAX as u128);
            }
            other => panic!("unexpected: {other:?}"),
        }
    }
}
