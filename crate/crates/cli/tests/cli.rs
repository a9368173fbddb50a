//! End-to-end checks of the `stib` binary: exit codes, output files, and
//! the cross-run equivalences the CLI is supposed to expose.

use std::path::Path;
use std::process::{Command, Output};

fn stib(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stib"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_theta(path: &Path) -> Vec<f64> {
    let raw = std::fs::read(path).unwrap();
    let n = u64::from_le_bytes(raw[8..16].try_into().unwrap()) as usize;
    raw[40..40 + 8 * n]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Drop the trailing wall_ms field from each metrics row.
fn strip_wall(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            if line.starts_with('#') || line.starts_with("epoch,") {
                line.to_string()
            } else {
                match line.rfind(',') {
                    Some(pos) => line[..pos].to_string(),
                    None => line.to_string(),
                }
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn sizecalc_preset_reproduces_published_bytes() {
    let out = stib(&["sizecalc", "--preset", "pems-all-la"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("109610285568"), "{text}");
    assert!(text.contains("102.08 GiB"), "{text}");
    assert!(text.contains("95.832"), "{text}");
}

#[test]
fn sizecalc_custom_shape_reports_elements() {
    let out = stib(&[
        "sizecalc", "--entries", "100", "--nodes", "3", "--features", "2", "--horizon", "4",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("materialized 4464 elements"), "{text}");
    assert!(text.contains(",35712,"), "{text}");
}

#[test]
fn sizecalc_usage_errors_exit_2() {
    let out = stib(&["sizecalc"]);
    assert_eq!(out.status.code(), Some(2));

    let out = stib(&["sizecalc", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(2));

    let out = stib(&["sizecalc", "--entries", "10", "--nodes", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_is_deterministic_modulo_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let args = |d: &Path| -> Vec<String> {
        [
            "train", "--synthetic", "200x6x1", "--horizon", "3", "--batch-size", "8",
            "--epochs", "3", "--seed", "4", "--hidden", "4",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain(["--out".to_string(), d.display().to_string()])
        .collect()
    };
    let run = |d: &Path| -> String {
        let argv: Vec<String> = args(d);
        let argv: Vec<&str> = argv.iter().map(|s| s.as_str()).collect();
        let out = stib(&argv);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(d.join("metrics.csv")).unwrap()
    };
    let first = run(&out_dir);
    let second = run(&out_dir);
    assert_eq!(strip_wall(&first), strip_wall(&second));
}

#[test]
fn train_modes_agree_on_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let run = |mode: &str, sub: &str| -> String {
        let out_dir = dir.path().join(sub);
        let out = stib(&[
            "train", "--synthetic", "240x5x1", "--horizon", "4", "--batch-size", "8",
            "--epochs", "3", "--seed", "1", "--hidden", "4", "--mode", mode,
            "--out", out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap()
    };
    let index = run("index", "idx");
    let materialized = run("materialized", "mat");
    // identical mae columns; only headers and wall times may differ
    let maes = |csv: &str| -> Vec<String> {
        csv.lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("epoch,"))
            .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(maes(&index), maes(&materialized));
}

#[test]
fn train_worker_scaling_matches_single_process() {
    let dir = tempfile::tempdir().unwrap();
    let run = |workers: &str, batch: &str, sub: &str| -> Vec<f64> {
        let out_dir = dir.path().join(sub);
        let out = stib(&[
            "train", "--synthetic", "50x6x1", "--horizon", "2", "--batch-size", batch,
            "--epochs", "5", "--seed", "9", "--hidden", "4", "--workers", workers,
            "--out", out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        read_theta(&out_dir.join("checkpoint.stb"))
    };
    // one optimizer step per epoch on both sides (train split of 33 windows)
    let single = run("1", "24", "w1");
    let dual = run("2", "12", "w2");
    let max_delta = single
        .iter()
        .zip(&dual)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_delta <= 1e-9, "max |delta theta| = {max_delta:.3e}");
}

#[test]
fn train_rejects_contradictory_shuffle() {
    let dir = tempfile::tempdir().unwrap();
    let out = stib(&[
        "train", "--synthetic", "100x4x1", "--horizon", "2", "--batch-size", "4",
        "--epochs", "1", "--placement", "partitioned", "--shuffle", "global",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = stib(&[
        "train", "--data", "/nonexistent/data.stb", "--horizon", "2", "--batch-size", "4",
        "--epochs", "1", "--model", "linear", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_sweeps_and_reports_zero_remote_for_replicated() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bench");
    let out = stib(&[
        "bench", "--synthetic", "300x5x1", "--horizon", "3", "--batch-size", "4",
        "--epochs", "2", "--model", "linear", "--workers-list", "1,2,4",
        "--placements", "replicated", "--svg", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("mode,"))
        .collect();
    assert_eq!(rows.len(), 6); // 2 modes x 3 worker counts x 1 placement
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[3], "ok", "{row}");
        assert_eq!(fields[6], "0", "replicated remote bytes must be zero: {row}");
    }
    assert!(out_dir.join("bench_runtime.svg").exists());
    assert!(out_dir.join("bench_bytes.svg").exists());
    let svg = std::fs::read_to_string(out_dir.join("bench_runtime.svg")).unwrap();
    assert!(svg.contains("<polyline"));
}

#[test]
fn bench_ledger_ratio_tracks_size_formulas() {
    // index vs materialized backing bytes on a mid-sized synthetic set must
    // sit within 10% of the closed-form prediction ratio
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bench");
    let out = stib(&[
        "bench", "--synthetic", "10000x50x2", "--horizon", "12", "--batch-size", "64",
        "--epochs", "1", "--model", "linear", "--workers-list", "1",
        "--placements", "replicated", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    let mut index_bytes = 0f64;
    let mut mat_bytes = 0f64;
    for row in csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("mode,")) {
        let fields: Vec<&str> = row.split(',').collect();
        let backing: f64 = fields[5].parse().unwrap();
        match fields[0] {
            "index" => index_bytes = backing,
            "materialized" => mat_bytes = backing,
            _ => {}
        }
    }
    // closed form: Eq-style predictions for E=10000, N=50, F=2, h=12
    let count = 10_000f64 - 23.0;
    let predicted_index = 10_000.0 * 100.0 * 8.0 + count * 8.0;
    let predicted_mat = 2.0 * count * 12.0 * 100.0 * 8.0;
    let measured_ratio = index_bytes / mat_bytes;
    let predicted_ratio = predicted_index / predicted_mat;
    let rel = (measured_ratio - predicted_ratio).abs() / predicted_ratio;
    assert!(
        rel < 0.10,
        "measured ratio {measured_ratio:.5} vs predicted {predicted_ratio:.5} ({rel:.3})"
    );
}

#[test]
fn thread_cap_env_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: Option<&str>, sub: &str| -> String {
        let out_dir = dir.path().join(sub);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_stib"));
        cmd.args([
            "train", "--synthetic", "200x5x1", "--horizon", "3", "--batch-size", "6",
            "--epochs", "3", "--workers", "4", "--hidden", "4", "--seed", "2",
            "--out", out_dir.to_str().unwrap(),
        ]);
        if let Some(t) = threads {
            cmd.env("STIB_WORKER_THREADS", t);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap()
    };
    let parallel = run(None, "par");
    let sequential = run(Some("1"), "seq");
    assert_eq!(strip_wall(&parallel), strip_wall(&sequential));
}

#[test]
fn csv_data_files_round_trip_through_train() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("signal.csv");
    let mut rows = String::new();
    for t in 0..120 {
        rows.push_str(&format!("{},{}\n", t as f64 * 0.1, 50.0 + (t as f64 * 0.3).sin()));
    }
    std::fs::write(&data, rows).unwrap();

    let adjacency = dir.path().join("adj.csv");
    std::fs::write(&adjacency, "0,1,1.0\n1,0,1.0\n").unwrap();

    let out_dir = dir.path().join("run");
    let out = stib(&[
        "train", "--data", data.to_str().unwrap(), "--adjacency", adjacency.to_str().unwrap(),
        "--horizon", "3", "--batch-size", "4", "--epochs", "2", "--hidden", "4",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("metrics.csv").exists());
    assert!(out_dir.join("checkpoint.cfg").exists());
}
