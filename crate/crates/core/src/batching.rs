//! Per-epoch batch streams under the supported shuffling disciplines.
//!
//! Permutations come from a counter-based generator seeded by
//! `hash(base_seed, epoch)`, so any number of workers derive the identical
//! global order with zero communication. Batch assembly is the index
//! pipeline's only copy: each selected window is copied exactly once into
//! the batch block.

use crate::dataset::TemporalSignal;
use crate::memory::{AllocLedger, Stage};
use crate::preprocess::{snapshot, MaterializedDataset, Split, WindowPlan};
use crate::seed::{mix, TAG_BATCH_SHUFFLE, TAG_EPOCH_SHUFFLE};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("permutation domain is empty")]
    EmptyDomain,
    #[error("split `{0}` holds no windows")]
    EmptySplit(&'static str),
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("shuffle mode `{mode}` cannot drive {requested}")]
    ShuffleModeMismatch {
        requested: &'static str,
        mode: &'static str,
    },
    #[error(transparent)]
    Plan(#[from] crate::preprocess::PlanError),
}

/// How window order is drawn each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShuffleMode {
    /// Identity order (validation and test default).
    None,
    /// Permute individual windows across the whole split each epoch.
    Global,
    /// Keep batch membership fixed, permute only batch order.
    LocalBatch,
}

impl ShuffleMode {
    pub fn name(self) -> &'static str {
        match self {
            ShuffleMode::None => "none",
            ShuffleMode::Global => "global",
            ShuffleMode::LocalBatch => "local_batch",
        }
    }
}

/// Shuffle discipline plus the seed every permutation derives from.
///
/// Permutations are a pure function of `(base_seed, epoch)` and never of
/// worker identity; that is what makes replicated-data shuffling
/// communication-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShuffleSpec {
    pub mode: ShuffleMode,
    pub base_seed: u64,
}

impl ShuffleSpec {
    pub fn new(mode: ShuffleMode, base_seed: u64) -> Self {
        Self { mode, base_seed }
    }
}

/// Permutation of window positions `[0, count)` for one epoch.
pub fn epoch_permutation(
    spec: &ShuffleSpec,
    epoch: u64,
    count: usize,
) -> Result<Vec<u64>, BatchError> {
    if count == 0 {
        return Err(BatchError::EmptyDomain);
    }
    match spec.mode {
        ShuffleMode::None => Ok((0..count as u64).collect()),
        ShuffleMode::Global => {
            let mut order: Vec<u64> = (0..count as u64).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix(&[spec.base_seed, epoch, TAG_EPOCH_SHUFFLE]));
            order.shuffle(&mut rng);
            Ok(order)
        }
        ShuffleMode::LocalBatch => Err(BatchError::ShuffleModeMismatch {
            requested: "a window permutation",
            mode: "local_batch",
        }),
    }
}

/// Permutation of batch ordinals `[0, n_batches)` for one epoch. Batch
/// membership is frozen at partition time; only the order moves.
pub fn local_batch_permutation(
    spec: &ShuffleSpec,
    epoch: u64,
    n_batches: usize,
) -> Result<Vec<u64>, BatchError> {
    if n_batches == 0 {
        return Err(BatchError::EmptyDomain);
    }
    match spec.mode {
        ShuffleMode::None => Ok((0..n_batches as u64).collect()),
        ShuffleMode::LocalBatch => {
            let mut order: Vec<u64> = (0..n_batches as u64).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix(&[spec.base_seed, epoch, TAG_BATCH_SHUFFLE]));
            order.shuffle(&mut rng);
            Ok(order)
        }
        ShuffleMode::Global => Err(BatchError::ShuffleModeMismatch {
            requested: "a batch-order permutation",
            mode: "global",
        }),
    }
}

/// Where batch blocks are copied from: standardized-signal views (index
/// pipeline) or pre-stacked rows (materialized pipeline).
#[derive(Debug, Clone, Copy)]
pub enum BatchSource<'a> {
    Index {
        signal: &'a TemporalSignal,
        plan: &'a WindowPlan,
    },
    Materialized { data: &'a MaterializedDataset },
}

impl<'a> BatchSource<'a> {
    pub fn input_len(&self) -> usize {
        match self {
            BatchSource::Index { plan, .. } => plan.input_len(),
            BatchSource::Materialized { data } => data.input_len(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            BatchSource::Index { plan, .. } => plan.output_len(),
            BatchSource::Materialized { data } => data.output_len(),
        }
    }

    pub fn nodes(&self) -> usize {
        match self {
            BatchSource::Index { signal, .. } => signal.nodes(),
            BatchSource::Materialized { data } => data.nodes(),
        }
    }

    pub fn features(&self) -> usize {
        match self {
            BatchSource::Index { signal, .. } => signal.features(),
            BatchSource::Materialized { data } => data.features(),
        }
    }

    fn step_len(&self) -> usize {
        self.nodes() * self.features()
    }

    /// Copy the selected windows into one contiguous block pair.
    pub fn assemble(&self, ordinals: &[u64], ledger: &AllocLedger) -> Batch {
        let step = self.step_len();
        let mut x = Vec::with_capacity(ordinals.len() * self.input_len() * step);
        let mut y = Vec::with_capacity(ordinals.len() * self.output_len() * step);
        match self {
            BatchSource::Index { signal, plan } => {
                for &o in ordinals {
                    let snap = snapshot(signal, plan, o as usize)
                        .expect("stream construction validated ordinals");
                    x.extend_from_slice(snap.x);
                    y.extend_from_slice(snap.y);
                }
            }
            BatchSource::Materialized { data } => {
                for &o in ordinals {
                    x.extend_from_slice(data.x_row(o as usize));
                    y.extend_from_slice(data.y_row(o as usize));
                }
            }
        }
        let elements = (x.len() + y.len()) as u64;
        ledger.record_alloc(Stage::BatchAssembly, elements * 8);
        ledger.record_copies(Stage::BatchAssembly, elements);
        Batch {
            window_ordinals: ordinals.to_vec(),
            x,
            y,
            input_len: self.input_len(),
            output_len: self.output_len(),
            nodes: self.nodes(),
            features: self.features(),
        }
    }
}

/// An assembled batch: `x` is `B x T' x N x F`, `y` is `B x T x N x F`,
/// both owned, so a batch can move freely between workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub window_ordinals: Vec<u64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub input_len: usize,
    pub output_len: usize,
    pub nodes: usize,
    pub features: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.window_ordinals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_ordinals.is_empty()
    }

    pub fn x_sample(&self, j: usize) -> &[f64] {
        let w = self.input_len * self.nodes * self.features;
        &self.x[j * w..(j + 1) * w]
    }

    pub fn y_sample(&self, j: usize) -> &[f64] {
        let w = self.output_len * self.nodes * self.features;
        &self.y[j * w..(j + 1) * w]
    }
}

/// Lazy batch iterator: one block pair lives at a time.
pub struct BatchStream<'a> {
    source: BatchSource<'a>,
    order: Vec<u64>,
    batch_size: usize,
    drop_last: bool,
    pos: usize,
    ledger: &'a AllocLedger,
}

impl<'a> BatchStream<'a> {
    pub(crate) fn from_order(
        source: BatchSource<'a>,
        order: Vec<u64>,
        batch_size: usize,
        drop_last: bool,
        ledger: &'a AllocLedger,
    ) -> Self {
        Self {
            source,
            order,
            batch_size,
            drop_last,
            pos: 0,
            ledger,
        }
    }

    pub fn n_batches(&self) -> usize {
        if self.drop_last {
            self.order.len() / self.batch_size
        } else {
            self.order.len().div_ceil(self.batch_size)
        }
    }
}

impl<'a> Iterator for BatchStream<'a> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        if self.drop_last && end - self.pos < self.batch_size {
            self.pos = self.order.len();
            return None;
        }
        let batch = self.source.assemble(&self.order[self.pos..end], self.ledger);
        self.pos = end;
        Some(batch)
    }
}

/// Stream the split's windows for one epoch: permuted (or identity) order,
/// chunked into consecutive groups of `batch_size`.
#[allow(clippy::too_many_arguments)]
pub fn batch_stream<'a>(
    source: BatchSource<'a>,
    plan: &WindowPlan,
    split: Split,
    spec: &ShuffleSpec,
    epoch: u64,
    batch_size: usize,
    drop_last: bool,
    ledger: &'a AllocLedger,
) -> Result<BatchStream<'a>, BatchError> {
    if batch_size == 0 {
        return Err(BatchError::ZeroBatchSize);
    }
    let (lo, hi) = plan.split_bounds(split);
    if lo == hi {
        return Err(BatchError::EmptySplit(split.name()));
    }
    if let BatchSource::Index { signal, plan: p } = source {
        // surface plan/signal mismatches at construction, not mid-stream
        snapshot(signal, p, lo)?;
    }
    let local = epoch_permutation(spec, epoch, hi - lo)?;
    let order: Vec<u64> = local.into_iter().map(|p| p + lo as u64).collect();
    Ok(BatchStream::from_order(source, order, batch_size, drop_last, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, Dynamics};
    use crate::preprocess::{
        build_materialized, compute_stats, plan_windows, standardize_in_place, StatsMode,
    };

    #[test]
    fn none_mode_is_identity() {
        let spec = ShuffleSpec::new(ShuffleMode::None, 9);
        assert_eq!(epoch_permutation(&spec, 3, 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn same_seed_and_epoch_agree_across_workers() {
        let spec = ShuffleSpec::new(ShuffleMode::Global, 1234);
        let a = epoch_permutation(&spec, 7, 100).unwrap();
        let b = epoch_permutation(&spec, 7, 100).unwrap();
        assert_eq!(a, b);
        let c = epoch_permutation(&spec, 8, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn permutations_are_uniform_over_s4() {
        // lehmer-code bucketing of 10k epoch permutations of 4 items
        let spec = ShuffleSpec::new(ShuffleMode::Global, 42);
        let mut counts = [0u32; 24];
        for epoch in 0..10_000u64 {
            let p = epoch_permutation(&spec, epoch, 4).unwrap();
            let mut code = 0usize;
            let mut items: Vec<u64> = (0..4).collect();
            for (i, &v) in p.iter().enumerate() {
                let pos = items.iter().position(|&x| x == v).unwrap();
                code += pos * [6, 2, 1, 1][i];
                items.remove(pos);
            }
            counts[code] += 1;
        }
        let expected = 10_000.0 / 24.0;
        let sigma = (10_000.0f64 * (1.0 / 24.0) * (23.0 / 24.0)).sqrt();
        for (code, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() <= 3.0 * sigma,
                "permutation {code} occurred {c} times, expected {expected:.1} +/- {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn local_batch_permutation_modes() {
        let spec = ShuffleSpec::new(ShuffleMode::LocalBatch, 5);
        assert_eq!(local_batch_permutation(&spec, 0, 1).unwrap(), vec![0]);
        let p = local_batch_permutation(&spec, 1, 50).unwrap();
        let mut sorted = p.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<u64>>());

        let global = ShuffleSpec::new(ShuffleMode::Global, 5);
        assert!(matches!(
            local_batch_permutation(&global, 0, 4),
            Err(BatchError::ShuffleModeMismatch { .. })
        ));
        assert!(matches!(
            epoch_permutation(&spec, 0, 4),
            Err(BatchError::ShuffleModeMismatch { .. })
        ));
    }

    fn small_pipeline() -> (TemporalSignal, WindowPlan) {
        let (signal, _) = gen_synthetic(12, 2, 1, 3, Dynamics::RandomWalk { step: 1.0 }).unwrap();
        // count = 12 - 4 + 1 = 9, train_end = round(9*0.6) = 5
        let plan = plan_windows(&signal, 2, 2, (0.6, 0.2)).unwrap();
        let stats = compute_stats(&signal, &plan, StatsMode::WindowWeighted).unwrap();
        let mut std_signal = signal;
        standardize_in_place(&mut std_signal, &stats).unwrap();
        (std_signal, plan)
    }

    #[test]
    fn unshuffled_chunking_keeps_or_drops_the_tail() {
        let (signal, plan) = small_pipeline();
        let ledger = AllocLedger::new();
        let source = BatchSource::Index { signal: &signal, plan: &plan };
        let spec = ShuffleSpec::new(ShuffleMode::None, 0);

        let batches: Vec<Batch> =
            batch_stream(source, &plan, Split::Train, &spec, 0, 2, false, &ledger)
                .unwrap()
                .collect();
        let ordinals: Vec<Vec<u64>> = batches.iter().map(|b| b.window_ordinals.clone()).collect();
        assert_eq!(ordinals, vec![vec![0, 1], vec![2, 3], vec![4]]);

        let batches: Vec<Batch> =
            batch_stream(source, &plan, Split::Train, &spec, 0, 2, true, &ledger)
                .unwrap()
                .collect();
        let ordinals: Vec<Vec<u64>> = batches.iter().map(|b| b.window_ordinals.clone()).collect();
        assert_eq!(ordinals, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn global_shuffle_covers_split_exactly_once() {
        let (signal, plan) = small_pipeline();
        let ledger = AllocLedger::new();
        let source = BatchSource::Index { signal: &signal, plan: &plan };
        let spec = ShuffleSpec::new(ShuffleMode::Global, 77);
        for epoch in 0..20 {
            let mut seen: Vec<u64> =
                batch_stream(source, &plan, Split::Train, &spec, epoch, 2, false, &ledger)
                    .unwrap()
                    .flat_map(|b| b.window_ordinals)
                    .collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..plan.train_end() as u64).collect::<Vec<u64>>());
        }
    }

    #[test]
    fn index_and_materialized_streams_agree_bitwise() {
        let (raw, _) = gen_synthetic(40, 3, 2, 21, Dynamics::Diffusion { noise: 0.5 }).unwrap();
        let plan = plan_windows(&raw, 3, 3, (0.7, 0.1)).unwrap();
        let stats = compute_stats(&raw, &plan, StatsMode::WindowWeighted).unwrap();
        let ledger = AllocLedger::new();
        let mds = build_materialized(&raw, &plan, &stats, &ledger).unwrap();
        let mut std_signal = raw;
        standardize_in_place(&mut std_signal, &stats).unwrap();

        let spec = ShuffleSpec::new(ShuffleMode::Global, 4);
        for split in [Split::Train, Split::Val, Split::Test] {
            let idx: Vec<Batch> = batch_stream(
                BatchSource::Index { signal: &std_signal, plan: &plan },
                &plan, split, &spec, 2, 3, false, &ledger,
            )
            .unwrap()
            .collect();
            let mat: Vec<Batch> = batch_stream(
                BatchSource::Materialized { data: &mds },
                &plan, split, &spec, 2, 3, false, &ledger,
            )
            .unwrap()
            .collect();
            assert_eq!(idx.len(), mat.len());
            for (a, b) in idx.iter().zip(&mat) {
                assert_eq!(a.window_ordinals, b.window_ordinals);
                let bits = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };
                assert_eq!(bits(&a.x), bits(&b.x));
                assert_eq!(bits(&a.y), bits(&b.y));
            }
        }
    }

    #[test]
    fn empty_split_and_zero_batch_are_errors() {
        let (signal, _) = gen_synthetic(6, 1, 1, 0, Dynamics::RandomWalk { step: 1.0 }).unwrap();
        // count = 3, train_end = round(3*0.4) = 1, val_end = 1 + round(3*0.2) = 2
        let plan = plan_windows(&signal, 2, 2, (0.4, 0.2)).unwrap();
        let ledger = AllocLedger::new();
        let source = BatchSource::Index { signal: &signal, plan: &plan };
        let spec = ShuffleSpec::new(ShuffleMode::None, 0);
        assert!(matches!(
            batch_stream(source, &plan, Split::Train, &spec, 0, 0, false, &ledger),
            Err(BatchError::ZeroBatchSize)
        ));
        // test split: val_end..count = 2..3 is nonempty; shrink to make train empty
        let plan2 = plan_windows(&signal, 2, 2, (0.1, 0.2)).unwrap();
        assert_eq!(plan2.train_end(), 0);
        assert!(matches!(
            batch_stream(source, &plan2, Split::Train, &spec, 0, 1, false, &ledger),
            Err(BatchError::EmptySplit("train"))
        ));
    }

    #[test]
    fn streams_are_pure_functions_of_their_arguments() {
        let (signal, plan) = small_pipeline();
        let ledger = AllocLedger::new();
        let source = BatchSource::Index { signal: &signal, plan: &plan };
        let spec = ShuffleSpec::new(ShuffleMode::Global, 123);
        let collect = || -> Vec<Batch> {
            batch_stream(source, &plan, Split::Train, &spec, 6, 2, true, &ledger)
                .unwrap()
                .collect()
        };
        let a = collect();
        let b = collect();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_assembly_is_the_only_copy_charge() {
        let (signal, plan) = small_pipeline();
        let ledger = AllocLedger::new();
        // snapshots alone charge nothing
        for i in 0..plan.count() {
            let _ = snapshot(&signal, &plan, i).unwrap();
        }
        assert_eq!(ledger.total_copies(), 0);

        let source = BatchSource::Index { signal: &signal, plan: &plan };
        let spec = ShuffleSpec::new(ShuffleMode::None, 0);
        let batches: Vec<Batch> =
            batch_stream(source, &plan, Split::Train, &spec, 0, 2, true, &ledger)
                .unwrap()
                .collect();
        let expected: u64 = batches
            .iter()
            .map(|b| (b.len() * (b.input_len + b.output_len) * b.nodes * b.features) as u64)
            .sum();
        assert_eq!(ledger.copies(Stage::BatchAssembly), expected);
        assert_eq!(ledger.copies(Stage::MaterializedStack), 0);
    }
}
