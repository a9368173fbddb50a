//! Duplication-free sliding-window batching for spatiotemporal
//! sequence-to-sequence training.
//!
//! A spatiotemporal signal (`entries × nodes × features`) is normally turned
//! into training data by materializing every overlapping window pair, which
//! multiplies the footprint by roughly `2 × horizon`. This crate keeps a
//! single standardized copy of the signal plus an array of window start
//! indices and reconstructs each `(x, y)` snapshot as a pair of borrowed
//! views at batch-assembly time. The classic materialized pipeline is kept
//! alongside as an oracle so every batch stream can be checked bit-for-bit.
//!
//! The crate also ships closed-form size estimators for both pipelines, an
//! allocation/copy ledger that makes the footprint claims testable, small
//! sequence-to-sequence models (a per-node affine map and a graph-convolutional
//! GRU) with hand-written reverse-mode gradients, and a deterministic
//! multi-worker data-parallel training simulator covering replicated,
//! partitioned, and on-demand data placement.

pub mod batching;
pub mod dataset;
pub mod distsim;
pub mod memory;
pub mod model;
pub mod preprocess;
pub(crate) mod seed;

pub use batching::{batch_stream, epoch_permutation, local_batch_permutation};
pub use batching::{Batch, BatchError, BatchSource, ShuffleMode, ShuffleSpec};
pub use dataset::{
    build_weighted_adjacency, gen_synthetic, load_edges, load_signal, save_signal, DataError,
    Dynamics, Edge, ElementWidth, GraphSpec, SignalFormat, TemporalSignal,
};
pub use distsim::{
    allreduce_mean, metrics_csv, run_distributed, shard_epoch, CommLedger, DistError, DistPlan,
    EpochComm, EpochMetric, PipelineMode, Placement, RunOutcome, TrainSpec,
};
pub use memory::{
    estimate, format_binary, format_decimal, ledger_report, preset, presets, AllocLedger,
    DatasetPreset, LedgerReport, SizeError, SizeEstimate, Stage,
};
pub use model::{
    adam_step, loss_mae, save_checkpoint, AdamState, AnyModel, Gcgru, LinearSeq2Seq, ModelConfig,
    ModelError, SequenceModel,
};
pub use preprocess::{
    build_materialized, compute_stats, load_preprocessed, plan_windows, save_preprocessed,
    snapshot, standardize_in_place, MaterializedDataset, PlanError, Snapshot, Split,
    StandardizationStats, StatsMode, WindowPlan,
};
