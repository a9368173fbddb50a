//! Deterministic multi-worker data-parallel training simulator.
//!
//! Workers are execution contexts inside one process: each owns a model
//! replica and optimizer state, assembles its own batches, and joins a
//! fixed-order all-reduce every step. Data never actually moves between
//! workers; placement modes differ in shard construction and in what the
//! communication ledger charges, which is exactly the part the contracts
//! pin down. Sequential execution and thread-parallel execution produce
//! bitwise-identical results.

use crate::batching::{
    batch_stream, epoch_permutation, local_batch_permutation, BatchError, BatchSource,
    ShuffleMode, ShuffleSpec,
};
use crate::dataset::{GraphSpec, TemporalSignal};
use crate::memory::{AllocLedger, Stage};
use crate::model::{adam_step, AdamState, AnyModel, ModelConfig, ModelError, SequenceModel};
use crate::preprocess::{
    build_materialized, compute_stats, standardize_in_place, MaterializedDataset, PlanError,
    Split, StandardizationStats, StatsMode, WindowPlan,
};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DistError {
    #[error("placement `{placement}` cannot run with shuffle `{shuffle}`")]
    PlacementShuffleMismatch {
        placement: &'static str,
        shuffle: &'static str,
    },
    #[error("workers must be at least 1")]
    ZeroWorkers,
    #[error("per-worker batch size must be at least 1")]
    ZeroBatch,
    #[error("train split holds {windows} windows, needs at least workers*batch = {required}")]
    TooFewWindows { windows: usize, required: usize },
    #[error("gradient dimension mismatch: rank {rank} has {found}, rank 0 has {expected}")]
    GradientDim {
        rank: usize,
        expected: usize,
        found: usize,
    },
    #[error("empty gradient list")]
    NoGradients,
    #[error("non-finite loss at epoch {epoch}, step {step} on worker {rank}")]
    NonFiniteLoss { epoch: u64, step: usize, rank: usize },
    #[error("configuration mismatch: {0}")]
    Config(String),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where each worker's training data notionally lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Every worker holds the full signal; the shared-seed global shuffle
    /// costs zero data communication.
    Replicated,
    /// Each worker permanently owns a contiguous slice of windows,
    /// pre-chunked into fixed batches; only batch order moves per epoch.
    Partitioned,
    /// Windows are owned in contiguous blocks, the global shuffle assigns
    /// them anywhere, and every foreign window is charged as a remote fetch.
    OnDemand,
}

impl Placement {
    pub fn name(self) -> &'static str {
        match self {
            Placement::Replicated => "replicated",
            Placement::Partitioned => "partitioned",
            Placement::OnDemand => "on_demand",
        }
    }

    /// The shuffle discipline this placement pairs with.
    pub fn default_shuffle(self) -> ShuffleMode {
        match self {
            Placement::Replicated | Placement::OnDemand => ShuffleMode::Global,
            Placement::Partitioned => ShuffleMode::LocalBatch,
        }
    }
}

/// Worker count, batch geometry, placement, and shuffle for one run.
/// The global batch is `workers * per_worker_batch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistPlan {
    pub workers: usize,
    pub per_worker_batch: usize,
    pub placement: Placement,
    pub shuffle: ShuffleMode,
    pub base_seed: u64,
    pub epochs: usize,
}

impl DistPlan {
    pub fn validate(&self) -> Result<(), DistError> {
        if self.workers == 0 {
            return Err(DistError::ZeroWorkers);
        }
        if self.per_worker_batch == 0 {
            return Err(DistError::ZeroBatch);
        }
        let ok = match self.placement {
            // `None` is the degenerate identity order, accepted everywhere
            // for reproducible debugging
            Placement::Replicated | Placement::OnDemand => self.shuffle != ShuffleMode::LocalBatch,
            Placement::Partitioned => self.shuffle != ShuffleMode::Global,
        };
        if !ok {
            return Err(DistError::PlacementShuffleMismatch {
                placement: self.placement.name(),
                shuffle: self.shuffle.name(),
            });
        }
        Ok(())
    }

    pub fn global_batch(&self) -> usize {
        self.workers * self.per_worker_batch
    }

    pub fn shuffle_spec(&self) -> ShuffleSpec {
        ShuffleSpec::new(self.shuffle, self.base_seed)
    }
}

/// Exact communication counters for one epoch.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct EpochComm {
    pub data_bytes_fetched_remote: u64,
    pub gradient_bytes_reduced: u64,
    pub allreduce_calls: u64,
}

/// Per-epoch communication history for a whole run.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct CommLedger {
    pub epochs: Vec<EpochComm>,
}

impl CommLedger {
    pub fn total_remote_data_bytes(&self) -> u64 {
        self.epochs.iter().map(|e| e.data_bytes_fetched_remote).sum()
    }

    pub fn total_gradient_bytes(&self) -> u64 {
        self.epochs.iter().map(|e| e.gradient_bytes_reduced).sum()
    }
}

/// Per-worker ordered window ordinals for one epoch. Every list has the
/// same length, a multiple of the per-worker batch, so all workers run the
/// same number of lockstep steps.
pub fn shard_epoch(
    plan: &WindowPlan,
    dist: &DistPlan,
    epoch: u64,
) -> Result<Vec<Vec<u64>>, DistError> {
    dist.validate()?;
    let (lo, hi) = plan.split_bounds(Split::Train);
    let n = hi - lo;
    let global = dist.global_batch();
    if n < global {
        return Err(DistError::TooFewWindows { windows: n, required: global });
    }
    let steps = n / global;
    let per_worker = steps * dist.per_worker_batch;
    let spec = dist.shuffle_spec();

    match dist.placement {
        Placement::Replicated | Placement::OnDemand => {
            let perm = epoch_permutation(&spec, epoch, n)?;
            Ok((0..dist.workers)
                .map(|w| {
                    perm[w * per_worker..(w + 1) * per_worker]
                        .iter()
                        .map(|p| p + lo as u64)
                        .collect()
                })
                .collect())
        }
        Placement::Partitioned => {
            let order = local_batch_permutation(&spec, epoch, steps)?;
            let b = dist.per_worker_batch as u64;
            Ok((0..dist.workers as u64)
                .map(|w| {
                    let slice_lo = lo as u64 + w * per_worker as u64;
                    let mut list = Vec::with_capacity(per_worker);
                    for &batch_ord in &order {
                        let start = slice_lo + batch_ord * b;
                        list.extend(start..start + b);
                    }
                    list
                })
                .collect())
        }
    }
}

/// Fixed-order mean of per-worker gradients: sum ascending by rank, divide
/// by the worker count. The fixed order is what makes replicated training
/// bitwise deterministic.
pub fn allreduce_mean(grads: &[Vec<f64>], comm: &mut EpochComm) -> Result<Vec<f64>, DistError> {
    let first = grads.first().ok_or(DistError::NoGradients)?;
    let dim = first.len();
    for (rank, g) in grads.iter().enumerate() {
        if g.len() != dim {
            return Err(DistError::GradientDim { rank, expected: dim, found: g.len() });
        }
    }
    let k = grads.len() as f64;
    let mut out = vec![0.0; dim];
    for g in grads {
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= k;
    }
    comm.gradient_bytes_reduced += grads.len() as u64 * dim as u64 * 8;
    comm.allreduce_calls += 1;
    Ok(out)
}

/// Which pipeline backs batch assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineMode {
    Index,
    Materialized,
}

impl PipelineMode {
    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::Index => "index",
            PipelineMode::Materialized => "materialized",
        }
    }
}

/// Everything about a training run that is not batch/placement geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub mode: PipelineMode,
    pub model: ModelConfig,
    pub lr: f64,
    pub stats_mode: StatsMode,
    /// Worker threads to run concurrently; 1 is the sequential reference
    /// mode and produces identical results.
    pub threads: usize,
}

/// One metrics row: training rows carry the epoch's mean step MAE, the
/// validation row the full-split MAE, both destandardized.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetric {
    pub epoch: u64,
    pub split: Split,
    pub mae: f64,
    pub steps: usize,
    pub data_bytes_remote: u64,
    pub grad_bytes: u64,
    pub wall_ms: u128,
}

/// Final state and measurements of a simulated run.
#[derive(Debug)]
pub struct RunOutcome {
    pub model: AnyModel,
    pub stats: StandardizationStats,
    pub metrics: Vec<EpochMetric>,
    pub comm: CommLedger,
    pub ledger: AllocLedger,
}

struct WorkerStep {
    loss: f64,
    grad: Vec<f64>,
    remote_bytes: u64,
}

/// Run the full pipeline: stats, standardization (or materialization),
/// then `epochs` of lockstep data-parallel training with a validation pass
/// after each epoch. Metrics row `epoch 0` is the untrained model's
/// validation MAE.
pub fn run_distributed(
    signal: TemporalSignal,
    graph: &GraphSpec,
    plan: &WindowPlan,
    dist: &DistPlan,
    spec: &TrainSpec,
) -> Result<RunOutcome, DistError> {
    dist.validate()?;
    if graph.n() != signal.nodes() {
        return Err(DistError::Config(format!(
            "graph has {} nodes, signal has {}",
            graph.n(),
            signal.nodes()
        )));
    }
    let (lo, hi) = plan.split_bounds(Split::Train);
    if hi - lo < dist.global_batch() {
        return Err(DistError::TooFewWindows {
            windows: hi - lo,
            required: dist.global_batch(),
        });
    }

    let ledger = AllocLedger::new();
    let stats = compute_stats(&signal, plan, spec.stats_mode)?;
    ledger.record_alloc(Stage::RawSignal, signal.byte_size());
    ledger.record_alloc(Stage::IndexArray, plan.index_bytes());

    let mut signal = signal;
    let materialized: Option<MaterializedDataset> = match spec.mode {
        PipelineMode::Index => {
            standardize_in_place(&mut signal, &stats)?;
            None
        }
        PipelineMode::Materialized => Some(build_materialized(&signal, plan, &stats, &ledger)?),
    };
    let source = match &materialized {
        Some(data) => BatchSource::Materialized { data },
        None => BatchSource::Index { signal: &signal, plan },
    };

    let workers = dist.workers;
    let features = signal.features();
    let mut models: Vec<AnyModel> =
        (0..workers).map(|_| spec.model.build(features, dist.base_seed)).collect();
    let dim = models[0].params().len();
    let mut adams: Vec<AdamState> = (0..workers).map(|_| AdamState::new(dim, spec.lr)).collect();
    let threads = spec.threads.max(1).min(workers);

    // static ownership blocks for on-demand accounting
    let n_train = hi - lo;
    let own_chunk = n_train.div_ceil(workers);
    let window_bytes =
        ((plan.input_len() + plan.output_len()) * signal.step_len()) as u64
            * signal.element_width().bytes();

    let mut comm = CommLedger::default();
    let mut metrics = Vec::new();

    // epoch 0: untrained validation baseline
    {
        let t0 = Instant::now();
        let mae = validation_mae(&models[0], source, plan, dist, &stats, graph, &ledger)?;
        metrics.push(EpochMetric {
            epoch: 0,
            split: Split::Val,
            mae,
            steps: 0,
            data_bytes_remote: 0,
            grad_bytes: 0,
            wall_ms: t0.elapsed().as_millis(),
        });
    }

    for epoch in 1..=dist.epochs as u64 {
        let t0 = Instant::now();
        let shards = shard_epoch(plan, dist, epoch)?;
        let steps = shards[0].len() / dist.per_worker_batch;
        let mut epoch_comm = EpochComm::default();
        let mut loss_sum = 0.0;

        for step in 0..steps {
            let b = dist.per_worker_batch;
            let run_worker = |rank: usize, model: &AnyModel| -> Result<WorkerStep, DistError> {
                let ordinals = &shards[rank][step * b..(step + 1) * b];
                let batch = source.assemble(ordinals, &ledger);
                let remote_bytes = if dist.placement == Placement::OnDemand {
                    let foreign = ordinals
                        .iter()
                        .filter(|&&o| {
                            let pos = o as usize - lo;
                            (pos / own_chunk).min(workers - 1) != rank
                        })
                        .count();
                    foreign as u64 * window_bytes
                } else {
                    0
                };
                let (loss, grad) = model.backward(&batch, graph)?;
                if !loss.is_finite() {
                    return Err(DistError::NonFiniteLoss { epoch, step, rank });
                }
                Ok(WorkerStep { loss, grad, remote_bytes })
            };

            let results: Vec<WorkerStep> = if threads <= 1 || workers == 1 {
                let mut out = Vec::with_capacity(workers);
                for (rank, model) in models.iter().enumerate() {
                    out.push(run_worker(rank, model)?);
                }
                out
            } else {
                parallel_workers(&models, threads, &run_worker)?
            };

            let mut grads = Vec::with_capacity(workers);
            for r in results {
                epoch_comm.data_bytes_fetched_remote += r.remote_bytes;
                loss_sum += r.loss;
                grads.push(r.grad);
            }
            let avg = allreduce_mean(&grads, &mut epoch_comm)?;
            for (model, adam) in models.iter_mut().zip(&mut adams) {
                adam_step(adam, model.params_mut(), &avg)?;
            }
        }

        let train_mae = loss_sum / (steps * workers) as f64 * stats.sigma;
        metrics.push(EpochMetric {
            epoch,
            split: Split::Train,
            mae: train_mae,
            steps,
            data_bytes_remote: epoch_comm.data_bytes_fetched_remote,
            grad_bytes: epoch_comm.gradient_bytes_reduced,
            wall_ms: t0.elapsed().as_millis(),
        });

        // every worker evaluates the full validation split; replicas are
        // identical so one value is reported
        let t_val = Instant::now();
        let mut val = f64::NAN;
        for model in &models {
            let v = validation_mae(model, source, plan, dist, &stats, graph, &ledger)?;
            if val.is_nan() {
                val = v;
            } else {
                debug_assert_eq!(val.to_bits(), v.to_bits(), "worker replicas diverged");
            }
        }
        metrics.push(EpochMetric {
            epoch,
            split: Split::Val,
            mae: val,
            steps: 0,
            data_bytes_remote: 0,
            grad_bytes: 0,
            wall_ms: t_val.elapsed().as_millis(),
        });
        comm.epochs.push(epoch_comm);
    }

    let model = models.swap_remove(0);
    Ok(RunOutcome { model, stats, metrics, comm, ledger })
}

/// Destandardized MAE over the whole validation split, identity order.
fn validation_mae(
    model: &AnyModel,
    source: BatchSource<'_>,
    plan: &WindowPlan,
    dist: &DistPlan,
    stats: &StandardizationStats,
    graph: &GraphSpec,
    ledger: &AllocLedger,
) -> Result<f64, DistError> {
    let spec = ShuffleSpec::new(ShuffleMode::None, dist.base_seed);
    let stream = batch_stream(
        source,
        plan,
        Split::Val,
        &spec,
        0,
        dist.per_worker_batch,
        false,
        ledger,
    )?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for batch in stream {
        for j in 0..batch.len() {
            let y_hat = model.forward(batch.x_sample(j), batch.input_len, graph)?;
            for (a, b) in y_hat.iter().zip(batch.y_sample(j)) {
                let da = a * stats.sigma + stats.mu;
                let db = b * stats.sigma + stats.mu;
                sum += (da - db).abs();
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// Fan the per-step worker closures over a bounded pool of scoped threads.
/// Output order is by rank, so results are identical to the sequential path.
fn parallel_workers<F>(
    models: &[AnyModel],
    threads: usize,
    run_worker: &F,
) -> Result<Vec<WorkerStep>, DistError>
where
    F: Fn(usize, &AnyModel) -> Result<WorkerStep, DistError> + Sync,
{
    let workers = models.len();
    let mut slots: Vec<Option<Result<WorkerStep, DistError>>> = Vec::new();
    slots.resize_with(workers, || None);
    let chunk = workers.div_ceil(threads);
    std::thread::scope(|scope| {
        for (chunk_idx, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
            let base = chunk_idx * chunk;
            scope.spawn(move || {
                for (off, slot) in slot_chunk.iter_mut().enumerate() {
                    let rank = base + off;
                    *slot = Some(run_worker(rank, &models[rank]));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("worker thread filled its slot"))
        .collect()
}

/// Render metrics as the run CSV: `epoch,split,mae,steps,data_bytes_remote,
/// grad_bytes,wall_ms`, after `# `-prefixed provenance lines.
pub fn metrics_csv(header_lines: &[String], metrics: &[EpochMetric]) -> String {
    let mut out = String::new();
    for line in header_lines {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("epoch,split,mae,steps,data_bytes_remote,grad_bytes,wall_ms\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{:.17e},{},{},{},{}\n",
            m.epoch, m.split.name(), m.mae, m.steps, m.data_bytes_remote, m.grad_bytes, m.wall_ms
        ));
    }
    out
}
