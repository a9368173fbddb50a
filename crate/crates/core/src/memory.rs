//! Closed-form size estimators for the two pipelines and the allocation
//! ledger that makes the footprint contracts checkable.
//!
//! The materialized pipeline stacks every overlapping window pair, growing
//! the data to `2 * (E - (2h - 1)) * h * N * F` elements. The index pipeline
//! keeps the `E * N * F` signal plus one 8-byte start index per window. The
//! ledger records what the pipelines actually allocate and copy so tests can
//! hold the implementations to those formulas exactly.

use crate::dataset::ElementWidth;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SizeError {
    #[error("entries must be at least 2*horizon = {min}, got {entries}")]
    EntriesTooSmall { entries: u64, min: u64 },
    #[error("{name} must be at least 1")]
    ZeroDimension { name: &'static str },
    #[error("size arithmetic overflows u64")]
    Overflow,
}

/// Closed-form footprint comparison for one dataset shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeEstimate {
    pub entries: u64,
    pub nodes: u64,
    pub features: u64,
    pub horizon: u64,
    pub element_width: u64,
    /// Elements after materializing every `(x, y)` window pair.
    pub materialized_elements: u64,
    /// Elements of the single retained signal copy.
    pub index_data_elements: u64,
    /// Window start indices, one per valid placement.
    pub index_count: u64,
    pub materialized_bytes: u64,
    /// Signal bytes plus 8 bytes per start index.
    pub index_bytes: u64,
    pub reduction_fraction: f64,
}

/// Evaluate both pipeline footprints with exact integer arithmetic.
pub fn estimate(
    entries: u64,
    nodes: u64,
    features: u64,
    horizon: u64,
    element_width: ElementWidth,
) -> Result<SizeEstimate, SizeError> {
    for (name, v) in [
        ("entries", entries),
        ("nodes", nodes),
        ("features", features),
        ("horizon", horizon),
    ] {
        if v == 0 {
            return Err(SizeError::ZeroDimension { name });
        }
    }
    let min = 2 * horizon;
    if entries < min {
        return Err(SizeError::EntriesTooSmall { entries, min });
    }

    let width = element_width.bytes();
    let index_count = entries - (2 * horizon - 1);
    let checked = || -> Option<(u64, u64, u64, u64)> {
        let per_window = horizon.checked_mul(nodes)?.checked_mul(features)?;
        let materialized_elements = index_count.checked_mul(per_window)?.checked_mul(2)?;
        let index_data_elements = entries.checked_mul(nodes)?.checked_mul(features)?;
        let materialized_bytes = materialized_elements.checked_mul(width)?;
        let index_bytes = index_data_elements
            .checked_mul(width)?
            .checked_add(index_count.checked_mul(8)?)?;
        Some((
            materialized_elements,
            index_data_elements,
            materialized_bytes,
            index_bytes,
        ))
    };
    let (materialized_elements, index_data_elements, materialized_bytes, index_bytes) =
        checked().ok_or(SizeError::Overflow)?;

    Ok(SizeEstimate {
        entries,
        nodes,
        features,
        horizon,
        element_width: width,
        materialized_elements,
        index_data_elements,
        index_count,
        materialized_bytes,
        index_bytes,
        reduction_fraction: 1.0 - index_bytes as f64 / materialized_bytes as f64,
    })
}

/// Render a byte count in decimal units (KB = 1000 bytes).
pub fn format_decimal(bytes: u64) -> String {
    format_units(bytes, 1000.0, &["B", "KB", "MB", "GB", "TB", "PB"])
}

/// Render a byte count in binary units (KiB = 1024 bytes).
pub fn format_binary(bytes: u64) -> String {
    format_units(bytes, 1024.0, &["B", "KiB", "MiB", "GiB", "TiB", "PiB"])
}

fn format_units(bytes: u64, base: f64, units: &[&str]) -> String {
    let mut value = bytes as f64;
    let mut unit = units[0];
    for u in &units[1..] {
        if value < base {
            break;
        }
        value /= base;
        unit = u;
    }
    if unit == "B" {
        format!("{bytes} B")
    } else {
        format!("{value:.2} {unit}")
    }
}

impl fmt::Display for SizeEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "shape: entries={} nodes={} features={} horizon={} width={}B",
            self.entries, self.nodes, self.features, self.horizon, self.element_width
        )?;
        writeln!(
            f,
            "materialized: {} elements, {} bytes ({} / {})",
            self.materialized_elements,
            self.materialized_bytes,
            format_decimal(self.materialized_bytes),
            format_binary(self.materialized_bytes),
        )?;
        writeln!(
            f,
            "index:        {} data elements + {} indices, {} bytes ({} / {})",
            self.index_data_elements,
            self.index_count,
            self.index_bytes,
            format_decimal(self.index_bytes),
            format_binary(self.index_bytes),
        )?;
        write!(f, "reduction:    {:.2}%", self.reduction_fraction * 100.0)
    }
}

/// Shape parameters of the six benchmark datasets, for size math without the
/// data itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub entries: u64,
    pub nodes: u64,
    pub features: u64,
    pub horizon: u64,
}

pub const PRESETS: [DatasetPreset; 6] = [
    DatasetPreset { name: "chickenpox-hungary", entries: 522, nodes: 20, features: 1, horizon: 4 },
    DatasetPreset { name: "windmill-large", entries: 17_472, nodes: 319, features: 1, horizon: 8 },
    DatasetPreset { name: "metr-la", entries: 34_272, nodes: 207, features: 2, horizon: 12 },
    DatasetPreset { name: "pems-bay", entries: 52_105, nodes: 325, features: 2, horizon: 12 },
    DatasetPreset { name: "pems-all-la", entries: 105_120, nodes: 2_716, features: 2, horizon: 12 },
    DatasetPreset { name: "pems", entries: 105_120, nodes: 11_160, features: 2, horizon: 12 },
];

/// Look up a preset by name, case-insensitively.
pub fn preset(name: &str) -> Option<&'static DatasetPreset> {
    let lower = name.to_ascii_lowercase();
    PRESETS.iter().find(|p| p.name == lower)
}

/// All presets in ascending size order.
pub fn presets() -> &'static [DatasetPreset] {
    &PRESETS
}

/// Pipeline stages the ledger distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// The retained raw/standardized signal.
    RawSignal,
    /// The window start index array.
    IndexArray,
    /// Stacked `(x, y)` copies built by the materialized pipeline.
    MaterializedStack,
    /// Per-batch blocks assembled for the model.
    BatchAssembly,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::RawSignal,
        Stage::IndexArray,
        Stage::MaterializedStack,
        Stage::BatchAssembly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::RawSignal => "raw_signal",
            Stage::IndexArray => "index_array",
            Stage::MaterializedStack => "materialized_stack",
            Stage::BatchAssembly => "batch_assembly",
        }
    }

    fn idx(self) -> usize {
        match self {
            Stage::RawSignal => 0,
            Stage::IndexArray => 1,
            Stage::MaterializedStack => 2,
            Stage::BatchAssembly => 3,
        }
    }
}

/// Monotone counters of bytes allocated and elements copied per stage.
///
/// Counters are atomics so concurrent workers can charge the same ledger;
/// only pipeline-owned structures are instrumented, never allocator or
/// runtime overhead.
#[derive(Debug, Default)]
pub struct AllocLedger {
    bytes: [AtomicU64; 4],
    copies: [AtomicU64; 4],
}

impl AllocLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_alloc(&self, stage: Stage, bytes: u64) {
        self.bytes[stage.idx()].fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn record_copies(&self, stage: Stage, elements: u64) {
        self.copies[stage.idx()].fetch_add(elements, Ordering::Relaxed);
    }

    pub fn bytes(&self, stage: Stage) -> u64 {
        self.bytes[stage.idx()].load(Ordering::Relaxed)
    }

    pub fn copies(&self, stage: Stage) -> u64 {
        self.copies[stage.idx()].load(Ordering::Relaxed)
    }

    /// Bytes of the persistent backing structures: signal + index array +
    /// materialized stacks. Batch blocks are transient and excluded.
    pub fn backing_bytes(&self) -> u64 {
        self.bytes(Stage::RawSignal) + self.bytes(Stage::IndexArray) + self.bytes(Stage::MaterializedStack)
    }

    /// Signal plus index bytes: what the index pipeline keeps resident.
    pub fn data_bytes(&self) -> u64 {
        self.bytes(Stage::RawSignal) + self.bytes(Stage::IndexArray)
    }

    pub fn total_copies(&self) -> u64 {
        Stage::ALL.iter().map(|s| self.copies(*s)).sum()
    }
}

/// Immutable snapshot of a ledger, one row per stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerReport {
    pub rows: Vec<StageReport>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReport {
    pub stage: Stage,
    pub bytes_allocated: u64,
    pub elements_copied: u64,
}

/// Snapshot the ledger for reporting.
pub fn ledger_report(ledger: &AllocLedger) -> LedgerReport {
    LedgerReport {
        rows: Stage::ALL
            .iter()
            .map(|&stage| StageReport {
                stage,
                bytes_allocated: ledger.bytes(stage),
                elements_copied: ledger.copies(stage),
            })
            .collect(),
    }
}

impl LedgerReport {
    pub fn bytes(&self, stage: Stage) -> u64 {
        self.rows
            .iter()
            .find(|r| r.stage == stage)
            .map_or(0, |r| r.bytes_allocated)
    }

    pub fn copies(&self, stage: Stage) -> u64 {
        self.rows
            .iter()
            .find(|r| r.stage == stage)
            .map_or(0, |r| r.elements_copied)
    }

    pub fn backing_bytes(&self) -> u64 {
        self.bytes(Stage::RawSignal) + self.bytes(Stage::IndexArray) + self.bytes(Stage::MaterializedStack)
    }

    /// CSV rows `stage,bytes_allocated,elements_copied`, no header.
    pub fn to_csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                r.stage.name(),
                r.bytes_allocated,
                r.elements_copied
            ));
        }
        out
    }
}

impl fmt::Display for LedgerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>16} {:>16}", "stage", "bytes", "copies")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<20} {:>16} {:>16}",
                r.stage.name(),
                r.bytes_allocated,
                r.elements_copied
            )?;
        }
        write!(f, "{:<20} {:>16}", "backing total", self.backing_bytes())
    }
}
