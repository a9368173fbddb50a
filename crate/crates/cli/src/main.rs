//! `stib`: size math, reproducible training runs, and pipeline benchmarks
//! for duplication-free sliding-window batching.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod args;
mod svg;

use args::*;
use clap::Parser;
use std::fmt;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;
use stib_core::{
    estimate, format_binary, format_decimal, ledger_report, load_edges, load_signal,
    build_weighted_adjacency, gen_synthetic, metrics_csv, plan_windows, preset, presets,
    run_distributed, save_checkpoint, DistPlan, EpochMetric, GraphSpec, RunOutcome, SignalFormat,
    Split, TemporalSignal, TrainSpec, WindowPlan,
};

const THREADS_ENV: &str = "STIB_WORKER_THREADS";

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sizecalc(a) => cmd_sizecalc(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

// ---------------------------------------------------------------- sizecalc

fn cmd_sizecalc(a: SizecalcArgs) -> Result<(), CliError> {
    let width = element_width(a.width)
        .ok_or_else(|| CliError::usage(format!("--width must be 8 or 4, got {}", a.width)))?;

    let dims_given =
        [a.entries, a.nodes, a.features, a.horizon].iter().filter(|v| v.is_some()).count();
    let shapes: Vec<(String, u64, u64, u64, u64)> = if a.all_presets {
        presets()
            .iter()
            .map(|p| (p.name.to_string(), p.entries, p.nodes, p.features, p.horizon))
            .collect()
    } else if let Some(name) = &a.preset {
        let p = preset(name)
            .ok_or_else(|| CliError::usage(format!("unknown preset `{name}`")))?;
        vec![(p.name.to_string(), p.entries, p.nodes, p.features, p.horizon)]
    } else if dims_given == 4 {
        vec![(
            "custom".to_string(),
            a.entries.unwrap(),
            a.nodes.unwrap(),
            a.features.unwrap(),
            a.horizon.unwrap(),
        )]
    } else if dims_given > 0 {
        return Err(CliError::usage(
            "--entries, --nodes, --features, and --horizon must all be given together",
        ));
    } else {
        return Err(CliError::usage(
            "pass --preset NAME, --all-presets, or the full --entries/--nodes/--features/--horizon shape",
        ));
    };

    let mut out = String::new();
    out.push_str("# stib sizecalc v1\n");
    out.push_str(&format!("# config: sizecalc {} --width {}\n", echo_shapes(&a), a.width));
    out.push_str("dataset,E,N,F,h,width,materialized_bytes,index_bytes,reduction_pct\n");
    let mut notes = String::new();
    for (name, e, n, f, h) in &shapes {
        let est = estimate(*e, *n, *f, *h, width)?;
        out.push_str(&format!(
            "{name},{e},{n},{f},{h},{},{},{},{:.3}\n",
            width.bytes(),
            est.materialized_bytes,
            est.index_bytes,
            est.reduction_fraction * 100.0
        ));
        notes.push_str(&format!(
            "# {name}: materialized {} elements, {} bytes ({} / {}); index {} data elements + {} indices, {} bytes ({} / {})\n",
            est.materialized_elements,
            est.materialized_bytes,
            format_decimal(est.materialized_bytes),
            format_binary(est.materialized_bytes),
            est.index_data_elements,
            est.index_count,
            est.index_bytes,
            format_decimal(est.index_bytes),
            format_binary(est.index_bytes),
        ));
    }
    out.push_str(&notes);

    print!("{out}");
    if let Some(path) = &a.out {
        std::fs::write(path, &out)?;
    }
    Ok(())
}

fn echo_shapes(a: &SizecalcArgs) -> String {
    if a.all_presets {
        "--all-presets".to_string()
    } else if let Some(p) = &a.preset {
        format!("--preset {p}")
    } else {
        format!(
            "--entries {} --nodes {} --features {} --horizon {}",
            a.entries.unwrap_or(0),
            a.nodes.unwrap_or(0),
            a.features.unwrap_or(0),
            a.horizon.unwrap_or(0)
        )
    }
}

// ------------------------------------------------------------------- train

/// Everything a train/bench run needs before the simulator takes over.
struct PreparedRun {
    signal: TemporalSignal,
    graph: GraphSpec,
    plan: WindowPlan,
}

fn prepare(data: &DataArgs, common: &TrainCommonArgs) -> Result<PreparedRun, CliError> {
    if common.horizon == 0 {
        return Err(CliError::usage("--horizon must be at least 1"));
    }
    if common.batch_size == 0 {
        return Err(CliError::usage("--batch-size must be at least 1"));
    }
    if common.model_name() == "gcgru" && (common.hidden == 0 || common.diffusion_order == 0) {
        return Err(CliError::usage(
            "--hidden and --diffusion-order must be at least 1 for the gcgru model",
        ));
    }

    let (signal, graph) = match (&data.synthetic, &data.data) {
        (Some(shape), None) => {
            let (e, n, f) = parse_shape(shape)?;
            gen_synthetic(e, n, f, common.seed, data.dynamics())?
        }
        (None, Some(path)) => {
            let format = match data.format {
                Some(FormatArg::Stb) => SignalFormat::Stb,
                Some(FormatArg::Csv) => SignalFormat::Csv,
                None => infer_format(path)?,
            };
            let signal = load_signal(path, format)?;
            let graph = match &data.adjacency {
                Some(adj_path) => {
                    let edges = load_edges(adj_path)?;
                    let ids: Vec<String> = (0..signal.nodes()).map(|i| i.to_string()).collect();
                    build_weighted_adjacency(&edges, &ids, data.kernel_width, data.kernel_threshold)?
                }
                None => {
                    if common.model_name() == "gcgru" {
                        return Err(CliError::usage(
                            "--adjacency is required for the gcgru model on file data",
                        ));
                    }
                    GraphSpec::edgeless(signal.nodes())
                }
            };
            (signal, graph)
        }
        (Some(_), Some(_)) => {
            return Err(CliError::usage("--synthetic and --data are mutually exclusive"))
        }
        (None, None) => return Err(CliError::usage("pass --synthetic ExNxF or --data PATH")),
    };

    let plan = plan_windows(
        &signal,
        common.horizon,
        common.horizon,
        (common.train_frac, common.val_frac),
    )?;
    Ok(PreparedRun { signal, graph, plan })
}

fn worker_threads(workers: usize) -> usize {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.parse::<usize>().ok().filter(|&t| t >= 1).unwrap_or(1).min(workers),
        Err(_) => workers,
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let shuffle = a
        .shuffle
        .map(|s| s.to_mode())
        .unwrap_or_else(|| a.placement.to_placement().default_shuffle());
    let dist = DistPlan {
        workers: a.workers,
        per_worker_batch: a.common.batch_size,
        placement: a.placement.to_placement(),
        shuffle,
        base_seed: a.common.seed,
        epochs: a.common.epochs,
    };
    dist.validate().map_err(|e| CliError::usage(e.to_string()))?;

    let spec = TrainSpec {
        mode: a.mode.to_mode(),
        model: a.common.model_config(),
        lr: a.common.lr,
        stats_mode: a.common.stats_mode.to_mode(),
        threads: worker_threads(a.workers),
    };
    let config_echo = format!(
        "train {} --horizon {} --batch-size {} --epochs {} --mode {} --workers {} --placement {} --shuffle {} --seed {} --model {} --hidden {} --diffusion-order {} --lr {} --train-frac {} --val-frac {} --stats-mode {}",
        a.data.echo(),
        a.common.horizon,
        a.common.batch_size,
        a.common.epochs,
        a.mode,
        a.workers,
        a.placement,
        shuffle.name(),
        a.common.seed,
        a.common.model_name(),
        a.common.hidden,
        a.common.diffusion_order,
        a.common.lr,
        a.common.train_frac,
        a.common.val_frac,
        a.common.stats_mode.name(),
    );

    let run = prepare(&a.data, &a.common)?;
    let outcome = run_distributed(run.signal, &run.graph, &run.plan, &dist, &spec)?;

    std::fs::create_dir_all(&a.out)?;
    write_run_outputs(&a.out, &config_echo, &outcome, &a.common)?;

    let final_val = last_val_mae(&outcome.metrics);
    println!("run complete: {} epochs, final validation MAE {:.6}", a.common.epochs, final_val);
    println!(
        "backing bytes: {} ({} raw + {} index + {} stacks)",
        outcome.ledger.backing_bytes(),
        outcome.ledger.bytes(stib_core::Stage::RawSignal),
        outcome.ledger.bytes(stib_core::Stage::IndexArray),
        outcome.ledger.bytes(stib_core::Stage::MaterializedStack),
    );
    println!(
        "remote data bytes: {}, gradient bytes: {}",
        outcome.comm.total_remote_data_bytes(),
        outcome.comm.total_gradient_bytes()
    );
    println!("outputs in {}", a.out.display());
    Ok(())
}

fn write_run_outputs(
    dir: &Path,
    config_echo: &str,
    outcome: &RunOutcome,
    common: &TrainCommonArgs,
) -> Result<(), CliError> {
    let header = vec!["stib metrics v1".to_string(), format!("config: {config_echo}")];
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&header, &outcome.metrics))?;

    let report = ledger_report(&outcome.ledger);
    let mut ledger_out = String::new();
    ledger_out.push_str("# stib ledger v1\n");
    ledger_out.push_str(&format!("# config: {config_echo}\n"));
    ledger_out.push_str("stage,bytes_allocated,elements_copied\n");
    ledger_out.push_str(&report.to_csv_rows());
    ledger_out.push_str(&format!("# backing_bytes={}\n", report.backing_bytes()));
    std::fs::write(dir.join("ledger.csv"), ledger_out)?;

    let extra = vec![
        ("lr".to_string(), common.lr.to_string()),
        ("seed".to_string(), common.seed.to_string()),
        ("horizon".to_string(), common.horizon.to_string()),
        ("mu".to_string(), format!("{:.17e}", outcome.stats.mu)),
        ("sigma".to_string(), format!("{:.17e}", outcome.stats.sigma)),
        ("config".to_string(), config_echo.to_string()),
    ];
    save_checkpoint(
        &outcome.model,
        &extra,
        dir.join("checkpoint.stb"),
        dir.join("checkpoint.cfg"),
    )?;
    Ok(())
}

fn last_val_mae(metrics: &[EpochMetric]) -> f64 {
    metrics
        .iter()
        .rev()
        .find(|m| m.split == Split::Val)
        .map(|m| m.mae)
        .unwrap_or(f64::NAN)
}

// ------------------------------------------------------------------- bench

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    if a.modes.is_empty() || a.workers_list.is_empty() || a.placements.is_empty() {
        return Err(CliError::usage(
            "--modes, --workers-list, and --placements must each name at least one configuration",
        ));
    }
    if a.workers_list.contains(&0) {
        return Err(CliError::usage("worker counts must be at least 1"));
    }
    let run = prepare(&a.data, &a.common)?;
    let config_echo = format!(
        "bench {} --horizon {} --batch-size {} --epochs {} --seed {} --model {} --modes {} --workers-list {} --placements {}",
        a.data.echo(),
        a.common.horizon,
        a.common.batch_size,
        a.common.epochs,
        a.common.seed,
        a.common.model_name(),
        a.modes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
        a.workers_list.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
        a.placements.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","),
    );

    let mut rows = Vec::new();
    let mut csv = String::new();
    csv.push_str("# stib bench v1\n");
    csv.push_str(&format!("# config: {config_echo}\n"));
    csv.push_str(
        "mode,workers,placement,status,runtime_ms,backing_bytes,remote_data_bytes,grad_bytes,final_val_mae\n",
    );

    for &mode in &a.modes {
        for &workers in &a.workers_list {
            for &placement in &a.placements {
                let dist = DistPlan {
                    workers,
                    per_worker_batch: a.common.batch_size,
                    placement: placement.to_placement(),
                    shuffle: placement.to_placement().default_shuffle(),
                    base_seed: a.common.seed,
                    epochs: a.common.epochs,
                };
                let spec = TrainSpec {
                    mode: mode.to_mode(),
                    model: a.common.model_config(),
                    lr: a.common.lr,
                    stats_mode: a.common.stats_mode.to_mode(),
                    threads: worker_threads(workers),
                };
                let started = Instant::now();
                let result = dist
                    .validate()
                    .map_err(|e| e.to_string())
                    .and_then(|_| {
                        run_distributed(run.signal.clone(), &run.graph, &run.plan, &dist, &spec)
                            .map_err(|e| e.to_string())
                    });
                let runtime_ms = started.elapsed().as_millis();
                match result {
                    Ok(outcome) => {
                        let row = BenchRow {
                            mode: mode.to_string(),
                            workers,
                            placement: placement.to_string(),
                            runtime_ms,
                            backing_bytes: outcome.ledger.backing_bytes(),
                            remote_bytes: outcome.comm.total_remote_data_bytes(),
                            grad_bytes: outcome.comm.total_gradient_bytes(),
                            final_val_mae: last_val_mae(&outcome.metrics),
                        };
                        csv.push_str(&format!(
                            "{},{},{},ok,{},{},{},{},{:.9}\n",
                            row.mode,
                            row.workers,
                            row.placement,
                            row.runtime_ms,
                            row.backing_bytes,
                            row.remote_bytes,
                            row.grad_bytes,
                            row.final_val_mae
                        ));
                        rows.push(row);
                    }
                    Err(msg) => {
                        csv.push_str(&format!(
                            "{mode},{workers},{placement},error: {},{runtime_ms},0,0,0,nan\n",
                            msg.replace(',', ";")
                        ));
                    }
                }
            }
        }
    }

    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("bench.csv"), &csv)?;
    print!("{csv}");

    if a.svg {
        let provenance = format!("<!-- stib bench v1 -->\n<!-- config: {config_echo} -->\n");
        let charts = [
            ("bench_runtime.svg", "runtime vs workers", "runtime (ms)",
             series_by(&rows, |r| r.runtime_ms as f64)),
            ("bench_bytes.svg", "backing bytes vs workers", "bytes",
             series_by(&rows, |r| r.backing_bytes as f64)),
            ("bench_remote.svg", "remote data bytes vs workers", "bytes",
             series_by(&rows, |r| r.remote_bytes as f64)),
        ];
        for (file, title, y_label, series) in charts {
            let body = svg::line_chart(title, "workers", y_label, &series);
            std::fs::write(a.out.join(file), format!("{provenance}{body}"))?;
        }
    }
    println!("# bench outputs in {}", a.out.display());
    Ok(())
}

struct BenchRow {
    mode: String,
    workers: usize,
    placement: String,
    runtime_ms: u128,
    backing_bytes: u64,
    remote_bytes: u64,
    grad_bytes: u64,
    final_val_mae: f64,
}

fn series_by(rows: &[BenchRow], metric: impl Fn(&BenchRow) -> f64) -> Vec<svg::Series> {
    let mut series: Vec<svg::Series> = Vec::new();
    for row in rows {
        let label = format!("{} / {}", row.mode, row.placement);
        let value = (row.workers as f64, metric(row));
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push(value),
            None => series.push(svg::Series { label, points: vec![value] }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    series
}

// ------------------------------------------------------------------ shared

fn parse_shape(spec: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<&str> = spec.split('x').collect();
    if parts.len() != 3 {
        return Err(CliError::usage(format!(
            "--synthetic expects ENTRIESxNODESxFEATURES, got `{spec}`"
        )));
    }
    let parse = |s: &str, name: &str| -> Result<usize, CliError> {
        s.parse::<usize>()
            .map_err(|_| CliError::usage(format!("bad {name} `{s}` in --synthetic")))
    };
    Ok((
        parse(parts[0], "entries")?,
        parse(parts[1], "nodes")?,
        parse(parts[2], "features")?,
    ))
}

fn infer_format(path: &Path) -> Result<SignalFormat, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("stb") => Ok(SignalFormat::Stb),
        Some("csv") => Ok(SignalFormat::Csv),
        _ => Err(CliError::usage(format!(
            "cannot infer format of `{}`; pass --format stb|csv",
            path.display()
        ))),
    }
}
