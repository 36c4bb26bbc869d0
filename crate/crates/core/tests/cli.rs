//! End-to-end runs of the `structcov` binary.
mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use common::rng;
use nalgebra::DMatrix;
use rand::Rng;
use serde_json::Value;
use structcov::covstruct::ParameterVector;
use structcov::identify::Witness;
use structcov::io::{read_json, read_mask, read_matrix, read_table, write_table, ModelConfig};
use structcov::mle::{fit_sce_errors, Dataset, FitOptions};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_structcov"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_args(dir: &Path) -> Vec<String> {
    let p = |f: &str| dir.join(f).display().to_string();
    vec![
        "--data".into(),
        p("data.csv"),
        "--model".into(),
        p("model.json"),
        "--mask".into(),
        p("mask.csv"),
        "--mu".into(),
        p("mu.csv"),
        "--sigma".into(),
        p("sigma.csv"),
    ]
}

fn free(v: &Value) -> Vec<f64> {
    let th: ParameterVector = serde_json::from_value(v.clone()).unwrap();
    th.free()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn known_mode_fit_reproduces_golden_estimate() {
    let dir = fixture("golden");
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fit.json");
    let mut args: Vec<String> = vec!["fit".into()];
    args.extend(data_args(&dir));
    args.extend(["--no-wsce".into(), "--out".into(), out.display().to_string()]);
    let o = bin().args(&args).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got: Value = read_json(&out).unwrap();
    let want: Value = read_json(&dir.join("expected_fit.json")).unwrap();
    assert_eq!(got["names"], want["names"]);
    let d = max_diff(&free(&got["theta"]), &free(&want["theta"]));
    assert!(d < 1e-6, "golden mismatch {d:.3e}");

    // A tighter fit from another start lands on the same point.
    let cfg = ModelConfig::load(&dir.join("model.json")).unwrap();
    let set = cfg.build_set(cfg.dim.unwrap()).unwrap();
    let ds = Dataset::known(
        read_matrix(&dir.join("data.csv")).unwrap(),
        read_mask(&dir.join("mask.csv")).unwrap(),
        read_matrix(&dir.join("mu.csv")).unwrap(),
        read_matrix(&dir.join("sigma.csv")).unwrap(),
    )
    .unwrap();
    let start = ParameterVector::from_weights(&[0.1, 0.1, 0.2, 0.2, 0.4], true, Some(0.7)).unwrap();
    let opts = FitOptions {
        max_iter: 5000,
        grad_tol: 1e-10,
    };
    let fit = fit_sce_errors(&ds.errors().unwrap(), &set, &start, &opts).unwrap();
    let d = max_diff(&fit.theta.free(), &free(&want["theta"]));
    assert!(d < 1e-6, "independent rerun differs by {d:.3e}");
}

#[test]
fn simulate_then_fit_with_and_without_shrinkage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sim");
    let o = run(&[
        "simulate", "--setting", "structured", "--d", "20", "--t", "25", "--seed", "5", "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let full = tmp.path().join("full.json");
    let mut args: Vec<String> = vec!["fit".into()];
    args.extend(data_args(&dir));
    args.extend(["--out".into(), full.display().to_string(), "--seed".into(), "3".into()]);
    let o = bin().args(&args).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = read_json(&full).unwrap();
    let lambda = v["lambda"].as_f64().expect("lambda reported");
    assert!((0.0..=1.0).contains(&lambda));
    let rw: Vec<Vec<f64>> = serde_json::from_value(v["r_wsce"].clone()).unwrap();
    assert_eq!(rw.len(), 20);
    for (i, row) in rw.iter().enumerate() {
        assert!((row[i] - 1.0).abs() < 1e-12);
    }

    let bare = tmp.path().join("bare.json");
    let mut args: Vec<String> = vec!["fit".into()];
    args.extend(data_args(&dir));
    args.extend(["--no-wsce".into(), "--out".into(), bare.display().to_string()]);
    let o = bin().args(&args).output().unwrap();
    assert_eq!(code(&o), 0);
    let b: Value = read_json(&bare).unwrap();
    assert!(b.get("lambda").is_none() && b.get("r_wsce").is_none());
    assert_eq!(b["theta"], v["theta"]);
}

#[test]
fn known_mode_without_mu_is_an_input_error() {
    let dir = fixture("golden");
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent_mu.csv");
    let mut args: Vec<String> = vec!["fit".into()];
    args.extend(data_args(&dir));
    let pos = args.iter().position(|a| a == "--mu").unwrap();
    args[pos + 1] = missing.display().to_string();
    let o = bin().args(&args).output().unwrap();
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("absent_mu.csv"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_input_code() {
    assert_eq!(code(&run(&["fit"])), 3);
    assert_eq!(code(&run(&["no-such-command"])), 3);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn check_id_flags_the_two_node_model() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("id.json");
    let model = fixture("nonident").join("model.json");
    let o = run(&["check-id", "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let v: Value = read_json(&out).unwrap();
    assert_eq!(v["report"]["identifiable"], false);
    let ws: Vec<Witness> = serde_json::from_value(v["report"]["witnesses"].clone()).unwrap();
    assert!(!ws.is_empty());
    // R = (α₀ + α_g) on the diagonal and α_g + δβ off it, by hand.
    for w in &ws {
        let off = w.alpha[1] + w.delta * w.beta;
        let off2 = w.alpha_prime[1] + w.delta_prime * w.beta_prime;
        let diag = w.alpha[0] + w.alpha[1] + w.delta;
        let diag2 = w.alpha_prime[0] + w.alpha_prime[1] + w.delta_prime;
        assert!((off - off2).abs() < 1e-6 && (diag - diag2).abs() < 1e-6);
        assert!(w.delta + w.delta_prime > 1e-7);
    }

    let ok = run(&["check-id", "--model", fixture("golden").join("model.json").to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
}

#[test]
fn select_ranks_the_full_roster() {
    let dir = fixture("golden");
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sel.json");
    let mut args: Vec<String> = vec!["select".into()];
    args.extend(data_args(&dir));
    let pos = args.iter().position(|a| a == "--model").unwrap();
    args[pos + 1] = dir.join("roster.json").display().to_string();
    args.extend(["--out".into(), out.display().to_string()]);
    let o = bin().args(&args).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = read_json(&out).unwrap();
    let c = v["candidates"].as_array().unwrap();
    assert_eq!(c.len(), 35);
    let bics: Vec<f64> = c.iter().map(|x| x["bic"].as_f64().unwrap_or(f64::INFINITY)).collect();
    assert!(bics.windows(2).all(|w| w[0] <= w[1]));
}

fn benchmark_report(threads: &str, extra: &[&str]) -> Value {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec![
        "benchmark", "--setting", "structured", "--d", "20", "--t", "15", "--reps", "4", "--seed",
        "9", "--threads", threads, "--out",
    ];
    let out = tmp.path().to_str().unwrap().to_string();
    args.push(&out);
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut v: Value = read_json(&tmp.path().join("report.json")).unwrap();
    v.as_object_mut().unwrap().remove("seconds");
    v
}

#[test]
fn benchmark_output_does_not_depend_on_thread_count() {
    for extra in [
        &[][..],
        &["--missing", "monotone"][..],
        &["--shrinkage", "bootstrap", "--bootstrap-b", "8", "--xi", "0.5"][..],
    ] {
        assert_eq!(benchmark_report("1", extra), benchmark_report("4", extra), "{extra:?}");
    }
}

#[test]
fn single_threaded_fss_benchmark_fits_the_time_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = run(&[
        "benchmark", "--setting", "fss", "--d", "50", "--reps", "10", "--threads", "1", "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(start.elapsed().as_secs() < 600);
    let csv = std::fs::read_to_string(tmp.path().join("replicates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 * 5);
}

#[test]
fn csv_tables_round_trip_with_missing_entries() {
    let mut r = rng(77);
    let tmp = tempfile::tempdir().unwrap();
    for k in 0..20 {
        let (t, d) = (r.random_range(1..12), r.random_range(1..7));
        let m = DMatrix::from_fn(t, d, |_, _| r.random_range(-1e3..1e3) * 10f64.powi(r.random_range(-8..8)));
        let mask = DMatrix::from_fn(t, d, |_, _| r.random::<f64>() < 0.8);
        let p = tmp.path().join(format!("t{k}.csv"));
        write_table(&p, &m, &mask).unwrap();
        let back = read_table(&p).unwrap();
        assert_eq!(back.observed, mask);
        for i in 0..t {
            for j in 0..d {
                if mask[(i, j)] {
                    assert_eq!(back.values[(i, j)], m[(i, j)]);
                }
            }
        }
    }
}
