//! Flag surface of the `stib` binary. Every run echoes its resolved
//! configuration into the header of each output file, so a CSV always
//! carries the exact flags that produced it.

use clap::{Args, Parser, Subcommand, ValueEnum};
use stib_core::{Dynamics, ElementWidth, ModelConfig, PipelineMode, Placement, ShuffleMode, StatsMode};

#[derive(Parser, Debug)]
#[command(name = "stib", version, about = "Sliding-window batching benchmarks: size math, training runs, pipeline comparisons")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Closed-form footprint comparison of the two pipelines.
    Sizecalc(SizecalcArgs),
    /// Run the full pipeline once and write metrics, ledger, and checkpoint.
    Train(TrainArgs),
    /// Sweep mode/workers/placement configurations and compare them.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SizecalcArgs {
    /// Named dataset shape (chickenpox-hungary, windmill-large, metr-la,
    /// pems-bay, pems-all-la, pems).
    #[arg(long)]
    pub preset: Option<String>,

    /// Evaluate every built-in preset.
    #[arg(long, default_value_t = false)]
    pub all_presets: bool,

    #[arg(long)]
    pub entries: Option<u64>,
    #[arg(long)]
    pub nodes: Option<u64>,
    #[arg(long)]
    pub features: Option<u64>,
    #[arg(long)]
    pub horizon: Option<u64>,

    /// Element width in bytes (8 or 4).
    #[arg(long, default_value_t = 8)]
    pub width: u64,

    /// Also write the commented CSV to this file.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Generate data: `ENTRIESxNODESxFEATURES`, e.g. `2000x25x1`.
    #[arg(long)]
    pub synthetic: Option<String>,

    /// Synthetic dynamics.
    #[arg(long, value_enum, default_value_t = DynamicsArg::Diffusion)]
    pub dynamics: DynamicsArg,

    /// Noise scale (diffusion) or step scale (random walk).
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,

    /// Load a signal file instead of generating one.
    #[arg(long)]
    pub data: Option<std::path::PathBuf>,

    /// Signal file format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,

    /// Edge list `from,to,distance` for file-loaded data.
    #[arg(long)]
    pub adjacency: Option<std::path::PathBuf>,

    /// Gaussian kernel width for the adjacency build.
    #[arg(long, default_value_t = 1.0)]
    pub kernel_width: f64,

    /// Kernel threshold below which edges are dropped.
    #[arg(long, default_value_t = 0.0)]
    pub kernel_threshold: f64,
}

#[derive(Args, Debug, Clone)]
pub struct TrainCommonArgs {
    #[arg(long)]
    pub horizon: usize,

    /// Per-worker batch size.
    #[arg(long)]
    pub batch_size: usize,

    #[arg(long)]
    pub epochs: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_enum, default_value_t = ModelArg::Gcgru)]
    pub model: ModelArg,

    #[arg(long, default_value_t = 16)]
    pub hidden: usize,

    #[arg(long, default_value_t = 2)]
    pub diffusion_order: usize,

    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,

    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,

    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,

    #[arg(long, value_enum, default_value_t = StatsModeArg::WindowWeighted)]
    pub stats_mode: StatsModeArg,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub common: TrainCommonArgs,

    #[arg(long, value_enum, default_value_t = ModeArg::Index)]
    pub mode: ModeArg,

    #[arg(long, default_value_t = 1)]
    pub workers: usize,

    #[arg(long, value_enum, default_value_t = PlacementArg::Replicated)]
    pub placement: PlacementArg,

    /// Defaults to the placement's natural discipline
    /// (replicated/on-demand: global, partitioned: local-batch).
    #[arg(long, value_enum)]
    pub shuffle: Option<ShuffleArg>,

    /// Output directory for metrics.csv, ledger.csv, checkpoint.stb/.cfg.
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub common: TrainCommonArgs,

    /// Comma-separated pipeline modes to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![ModeArg::Index, ModeArg::Materialized])]
    pub modes: Vec<ModeArg>,

    /// Comma-separated worker counts to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1])]
    pub workers_list: Vec<usize>,

    /// Comma-separated placements to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![PlacementArg::Replicated])]
    pub placements: Vec<PlacementArg>,

    /// Also render metric-vs-workers SVG charts.
    #[arg(long, default_value_t = false)]
    pub svg: bool,

    /// Output directory for bench.csv and charts.
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Index,
    Materialized,
}

impl ModeArg {
    pub fn to_mode(self) -> PipelineMode {
        match self {
            ModeArg::Index => PipelineMode::Index,
            ModeArg::Materialized => PipelineMode::Materialized,
        }
    }
}

impl std::fmt::Display for ModeArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.to_mode().name())
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementArg {
    Replicated,
    Partitioned,
    OnDemand,
}

impl PlacementArg {
    pub fn to_placement(self) -> Placement {
        match self {
            PlacementArg::Replicated => Placement::Replicated,
            PlacementArg::Partitioned => Placement::Partitioned,
            PlacementArg::OnDemand => Placement::OnDemand,
        }
    }
}

impl std::fmt::Display for PlacementArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.to_placement().name())
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShuffleArg {
    Global,
    LocalBatch,
    None,
}

impl ShuffleArg {
    pub fn to_mode(self) -> ShuffleMode {
        match self {
            ShuffleArg::Global => ShuffleMode::Global,
            ShuffleArg::LocalBatch => ShuffleMode::LocalBatch,
            ShuffleArg::None => ShuffleMode::None,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelArg {
    Gcgru,
    Linear,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicsArg {
    Diffusion,
    RandomWalk,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatArg {
    Stb,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsModeArg {
    WindowWeighted,
    RawRegion,
}

impl StatsModeArg {
    pub fn to_mode(self) -> StatsMode {
        match self {
            StatsModeArg::WindowWeighted => StatsMode::WindowWeighted,
            StatsModeArg::RawRegion => StatsMode::RawRegion,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StatsModeArg::WindowWeighted => "window-weighted",
            StatsModeArg::RawRegion => "raw-region",
        }
    }
}

impl TrainCommonArgs {
    pub fn model_config(&self) -> ModelConfig {
        match self.model {
            ModelArg::Gcgru => ModelConfig::Gcgru {
                hidden: self.hidden,
                diffusion_order: self.diffusion_order,
            },
            ModelArg::Linear => ModelConfig::Linear,
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self.model {
            ModelArg::Gcgru => "gcgru",
            ModelArg::Linear => "linear",
        }
    }
}

impl DataArgs {
    pub fn dynamics(&self) -> Dynamics {
        match self.dynamics {
            DynamicsArg::Diffusion => Dynamics::Diffusion { noise: self.noise },
            DynamicsArg::RandomWalk => Dynamics::RandomWalk { step: self.noise },
        }
    }

    pub fn dynamics_name(&self) -> &'static str {
        match self.dynamics {
            DynamicsArg::Diffusion => "diffusion",
            DynamicsArg::RandomWalk => "random-walk",
        }
    }

    /// Canonical flag echo for provenance headers.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        if let Some(sp) = &self.synthetic {
            s.push_str(&format!(
                "--synthetic {sp} --dynamics {} --noise {}",
                self.dynamics_name(),
                self.noise
            ));
        }
        if let Some(p) = &self.data {
            s.push_str(&format!(" --data {}", p.display()));
            if let Some(f) = self.format {
                let name = match f {
                    FormatArg::Stb => "stb",
                    FormatArg::Csv => "csv",
                };
                s.push_str(&format!(" --format {name}"));
            }
        }
        if let Some(p) = &self.adjacency {
            s.push_str(&format!(
                " --adjacency {} --kernel-width {} --kernel-threshold {}",
                p.display(),
                self.kernel_width,
                self.kernel_threshold
            ));
        }
        s.trim().to_string()
    }
}

pub fn element_width(width: u64) -> Option<ElementWidth> {
    match width {
        8 => Some(ElementWidth::F64),
        4 => Some(ElementWidth::F32),
        _ => None,
    }
}
