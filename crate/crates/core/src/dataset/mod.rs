//! Raw spatiotemporal signals, graph topology, file I/O, and synthetic data.
//!
//! The signal is stored once, row-major `(time, node, feature)`, so any run
//! of consecutive time steps is a single contiguous slab. Everything
//! downstream (snapshot views, zero-copy batching) depends on that layout.

mod stb;
mod synthetic;

pub use synthetic::{gen_synthetic, Dynamics};

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Errors raised by signal/graph construction and file I/O.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header at byte {offset}: {detail}")]
    MalformedHeader { offset: u64, detail: String },
    #[error("truncated payload at byte {offset}: expected {expected} payload bytes, found {found}")]
    TruncatedPayload { offset: u64, expected: u64, found: u64 },
    #[error("non-finite value at element {index} (byte offset {offset})")]
    NonFinite { index: usize, offset: u64 },
    #[error("csv row {row}: {detail} (column {col})")]
    CsvParse { row: usize, col: usize, detail: String },
    #[error("csv row {row} has {found} columns, expected {expected}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("csv row {row}, column {col}: non-finite value")]
    CsvNonFinite { row: usize, col: usize },
    #[error("dimension `{name}` must be at least 1, got {value}")]
    EmptyDimension { name: &'static str, value: usize },
    #[error("value buffer holds {found} elements, expected entries*nodes*features = {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("adjacency matrix holds {found} entries, expected nodes^2 = {expected}")]
    AdjacencyShape { expected: usize, found: usize },
    #[error("adjacency weight at ({i},{j}) is {value}, outside [0, 1]")]
    WeightOutOfRange { i: usize, j: usize, value: f64 },
    #[error("unknown node id `{0}` in edge list")]
    UnknownNode(String),
    #[error("kernel width must be positive and finite, got {0}")]
    NonPositiveKernelWidth(f64),
    #[error("kernel threshold must lie in [0, 1), got {0}")]
    BadThreshold(f64),
    #[error("edge ({from},{to}) has negative distance {distance}")]
    NegativeDistance { from: String, to: String, distance: f64 },
    #[error("format `{0}` is not supported for this operation")]
    UnsupportedFormat(&'static str),
}

/// Bytes per stored element. Values are held as `f64` in memory; the width
/// declares how they are persisted and accounted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementWidth {
    F64,
    F32,
}

impl ElementWidth {
    pub fn bytes(self) -> u64 {
        match self {
            ElementWidth::F64 => 8,
            ElementWidth::F32 => 4,
        }
    }
}

impl fmt::Display for ElementWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bytes())
    }
}

/// File formats understood by [`load_signal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalFormat {
    Stb,
    Csv,
}

/// The raw `entries × nodes × features` time series: the single stored copy
/// in the index pipeline.
///
/// Layout is row-major `(time, node, feature)`, so the window starting at
/// step `s` of length `w` is exactly `values[s*N*F .. (s+w)*N*F]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSignal {
    entries: usize,
    nodes: usize,
    features: usize,
    element_width: ElementWidth,
    values: Vec<f64>,
}

impl TemporalSignal {
    pub fn new(
        entries: usize,
        nodes: usize,
        features: usize,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        check_dim("entries", entries)?;
        check_dim("nodes", nodes)?;
        check_dim("features", features)?;
        let expected = entries * nodes * features;
        if values.len() != expected {
            return Err(DataError::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            entries,
            nodes,
            features,
            element_width: ElementWidth::F64,
            values,
        })
    }

    pub fn entries(&self) -> usize {
        self.entries
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn element_width(&self) -> ElementWidth {
        self.element_width
    }

    /// Elements per time step (`nodes × features`).
    pub fn step_len(&self) -> usize {
        self.nodes * self.features
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value(&self, t: usize, n: usize, f: usize) -> f64 {
        self.values[(t * self.nodes + n) * self.features + f]
    }

    /// Contiguous slab covering time steps `[t0, t1)`.
    pub fn step_range(&self, t0: usize, t1: usize) -> &[f64] {
        let w = self.step_len();
        &self.values[t0 * w..t1 * w]
    }

    /// Bytes the signal occupies at its declared element width.
    pub fn byte_size(&self) -> u64 {
        self.values.len() as u64 * self.element_width.bytes()
    }

    /// Re-declare the element width. Narrowing to 4 bytes rounds every value
    /// through `f32` so that a later save/load round-trip is bit-exact.
    pub fn with_element_width(mut self, width: ElementWidth) -> Self {
        if width == ElementWidth::F32 && self.element_width == ElementWidth::F64 {
            for v in &mut self.values {
                *v = *v as f32 as f64;
            }
        }
        self.element_width = width;
        self
    }

    pub(crate) fn from_parts(
        entries: usize,
        nodes: usize,
        features: usize,
        element_width: ElementWidth,
        values: Vec<f64>,
    ) -> Self {
        Self {
            entries,
            nodes,
            features,
            element_width,
            values,
        }
    }
}

fn check_dim(name: &'static str, value: usize) -> Result<(), DataError> {
    if value == 0 {
        Err(DataError::EmptyDimension { name, value })
    } else {
        Ok(())
    }
}

/// A directed edge with a physical distance, the input to kernel weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub distance: f64,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>, distance: f64) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            distance,
        }
    }
}

/// Node set, edge list, and dense weighted adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    node_ids: Vec<String>,
    edges: Vec<Edge>,
    weighted_adjacency: Vec<f64>,
}

impl GraphSpec {
    /// Validates that the matrix is `N×N` with all weights in `[0, 1]`.
    pub fn new(
        node_ids: Vec<String>,
        edges: Vec<Edge>,
        weighted_adjacency: Vec<f64>,
    ) -> Result<Self, DataError> {
        let n = node_ids.len();
        check_dim("nodes", n)?;
        if weighted_adjacency.len() != n * n {
            return Err(DataError::AdjacencyShape {
                expected: n * n,
                found: weighted_adjacency.len(),
            });
        }
        for (k, &w) in weighted_adjacency.iter().enumerate() {
            if !(0.0..=1.0).contains(&w) || !w.is_finite() {
                return Err(DataError::WeightOutOfRange {
                    i: k / n,
                    j: k % n,
                    value: w,
                });
            }
        }
        Ok(Self {
            node_ids,
            edges,
            weighted_adjacency,
        })
    }

    /// Graph with no connections: adjacency is the identity (self-loops only).
    pub fn edgeless(n: usize) -> Self {
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            adj[i * n + i] = 1.0;
        }
        Self {
            node_ids: (0..n).map(|i| i.to_string()).collect(),
            edges: Vec::new(),
            weighted_adjacency: adj,
        }
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn adjacency(&self) -> &[f64] {
        &self.weighted_adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weighted_adjacency[i * self.n() + j]
    }

    /// Row-normalized random-walk matrix. Rows with zero mass stay zero;
    /// kernel-built graphs never produce one because of the self-loops.
    pub fn random_walk_matrix(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let row = &self.weighted_adjacency[i * n..(i + 1) * n];
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                for j in 0..n {
                    out[i * n + j] = row[j] / sum;
                }
            }
        }
        out
    }
}

/// Thresholded Gaussian kernel adjacency:
/// `A[i][j] = exp(-dist^2 / width^2)` when that value reaches `threshold`,
/// else 0, with `A[i][i] = 1` for every node.
///
/// Duplicate `(from, to)` pairs keep the shortest distance, so the result is
/// independent of edge-list order.
pub fn build_weighted_adjacency(
    edges: &[Edge],
    node_ids: &[String],
    kernel_width: f64,
    threshold: f64,
) -> Result<GraphSpec, DataError> {
    if kernel_width <= 0.0 || !kernel_width.is_finite() {
        return Err(DataError::NonPositiveKernelWidth(kernel_width));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(DataError::BadThreshold(threshold));
    }
    let n = node_ids.len();
    check_dim("nodes", n)?;
    let index: HashMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut shortest: HashMap<(usize, usize), f64> = HashMap::new();
    for e in edges {
        let i = *index
            .get(e.from.as_str())
            .ok_or_else(|| DataError::UnknownNode(e.from.clone()))?;
        let j = *index
            .get(e.to.as_str())
            .ok_or_else(|| DataError::UnknownNode(e.to.clone()))?;
        if e.distance < 0.0 || e.distance.is_nan() {
            return Err(DataError::NegativeDistance {
                from: e.from.clone(),
                to: e.to.clone(),
                distance: e.distance,
            });
        }
        shortest
            .entry((i, j))
            .and_modify(|d| *d = d.min(e.distance))
            .or_insert(e.distance);
    }

    let mut adj = vec![0.0; n * n];
    for (&(i, j), &dist) in &shortest {
        let w = (-(dist * dist) / (kernel_width * kernel_width)).exp();
        if w >= threshold {
            adj[i * n + j] = w;
        }
    }
    for i in 0..n {
        adj[i * n + i] = 1.0;
    }
    GraphSpec::new(node_ids.to_vec(), edges.to_vec(), adj)
}

/// Load a signal from disk. `Stb` files carry their own shape and element
/// width; `Csv` files are header-free with rows as time steps, columns as
/// nodes, and a single feature.
pub fn load_signal(path: impl AsRef<Path>, format: SignalFormat) -> Result<TemporalSignal, DataError> {
    match format {
        SignalFormat::Stb => stb::read(path.as_ref()),
        SignalFormat::Csv => load_csv(path.as_ref()),
    }
}

/// Persist a signal. Only the stb binary format can round-trip a signal
/// bit-exactly, so it is the only accepted target.
pub fn save_signal(
    signal: &TemporalSignal,
    path: impl AsRef<Path>,
    format: SignalFormat,
) -> Result<(), DataError> {
    match format {
        SignalFormat::Stb => stb::write(signal, path.as_ref()),
        SignalFormat::Csv => Err(DataError::UnsupportedFormat("csv")),
    }
}

fn load_csv(path: &Path) -> Result<TemporalSignal, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    let mut nodes = None;
    let mut rows = 0usize;
    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0usize;
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|e| DataError::CsvParse {
                row,
                col,
                detail: format!("{e}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::CsvNonFinite { row, col });
            }
            values.push(v);
            count += 1;
        }
        match nodes {
            None => nodes = Some(count),
            Some(expected) if expected != count => {
                return Err(DataError::DimensionMismatch {
                    row,
                    expected,
                    found: count,
                });
            }
            _ => {}
        }
        rows += 1;
    }
    let nodes = nodes.ok_or(DataError::EmptyDimension {
        name: "entries",
        value: 0,
    })?;
    TemporalSignal::new(rows, nodes, 1, values)
}

/// Parse an adjacency edge list: one `from,to,distance` triple per line.
pub fn load_edges(path: impl AsRef<Path>) -> Result<Vec<Edge>, DataError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut edges = Vec::new();
    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(DataError::DimensionMismatch {
                row,
                expected: 3,
                found: fields.len(),
            });
        }
        let distance: f64 = fields[2].trim().parse().map_err(|e| DataError::CsvParse {
            row,
            col: 2,
            detail: format!("{e}"),
        })?;
        edges.push(Edge::new(fields[0].trim(), fields[1].trim(), distance));
    }
    Ok(edges)
}
