use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn smartcpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smartcpd"))
        .args(args)
        .env_remove("SMARTCPD_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = smartcpd(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "synth",
        "--shape",
        "12,10,8",
        "--rank",
        "2",
        "--seed",
        "7",
        "--out",
        p(dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    dir.to_path_buf()
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

/// Rows of the trace with the wall-clock column dropped.
fn trace_without_time(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("trace.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(2);
            f.join(",")
        })
        .collect()
}

fn costs(dir: &Path) -> Vec<f64> {
    fs::read_to_string(dir.join("trace.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn synth_poisson_has_integer_entries_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = synth(&tmp.path().join("a"), &["--obs", "poisson"]);
    let b = synth(&tmp.path().join("b"), &["--obs", "poisson"]);
    let text = fs::read_to_string(a.join("tensor.tns")).unwrap();
    for line in text.lines().skip(2) {
        let v: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
        assert!(v >= 0.0 && v.fract() == 0.0, "{line}");
    }
    for f in [
        "tensor.tns",
        "manifest.json",
        "truth/factor_1.csv",
        "truth/factor_2.csv",
        "truth/factor_3.csv",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn synth_gamma_records_the_realized_snr() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("g");
    ok(&[
        "synth",
        "--shape",
        "100,100,100",
        "--rank",
        "3",
        "--obs",
        "gamma",
        "--snr-db",
        "20",
        "--out",
        p(&dir),
    ]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let snr = m["realized_snr_db"].as_f64().unwrap();
    assert!((snr - 20.0).abs() <= 0.5, "{snr}");
}

#[test]
fn fit_descends_and_writes_the_trace() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp.path().join("data"), &[]);
    let out = tmp.path().join("fit");
    ok(&[
        "fit",
        "--tensor",
        p(&data.join("tensor.tns")),
        "--rank",
        "2",
        "--loss",
        "gen-kl",
        "--mirror",
        "entropy",
        "--constraint",
        "nonneg",
        "--schedule",
        "adagrad:b=1e-5",
        "--batch-fibers",
        "auto",
        "--seed",
        "1",
        "--max-epochs",
        "30",
        "--truth",
        p(&data.join("truth")),
        "--out",
        p(&out),
    ]);
    let text = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "iter,samples,seconds,cost,mse,stationarity"
    );
    let c = costs(&out);
    assert!(c.last().unwrap() < &c[0]);
    // MSE is filled in, stationarity is not.
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert!(last[4].parse::<f64>().is_ok());
    assert_eq!(last[5], "");
    assert_eq!(read_matrix(&out.join("factors/factor_1.csv")).len(), 12);
}

#[test]
fn zero_epochs_write_the_starting_factors() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp.path().join("data"), &[]);
    let out = tmp.path().join("fit");
    ok(&[
        "fit",
        "--tensor",
        p(&data.join("tensor.tns")),
        "--rank",
        "2",
        "--max-epochs",
        "0",
        "--init",
        p(&data.join("truth")),
        "--out",
        p(&out),
    ]);
    for n in 1..=3 {
        let f = format!("factor_{n}.csv");
        assert_eq!(
            read_matrix(&out.join("factors").join(&f)),
            read_matrix(&data.join("truth").join(&f))
        );
    }
}

#[test]
fn simplex_factors_have_unit_column_sums() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp.path().join("data"), &["--simplex", "--obs", "none"]);
    let out = tmp.path().join("fit");
    ok(&[
        "fit",
        "--tensor",
        p(&data.join("tensor.tns")),
        "--rank",
        "2",
        "--mirror",
        "entropy",
        "--constraint",
        "simplex",
        "--max-epochs",
        "10",
        "--out",
        p(&out),
    ]);
    for n in 1..=3 {
        let a = read_matrix(&out.join(format!("factors/factor_{n}.csv")));
        for r in 0..2 {
            let s: f64 = a.iter().map(|row| row[r]).sum();
            assert!((s - 1.0).abs() <= 1e-12, "mode {n} column {r}: {s}");
        }
    }
}

#[test]
fn manifest_relaunch_reproduces_the_trace() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp.path().join("data"), &[]);
    let first = tmp.path().join("first");
    ok(&[
        "fit",
        "--tensor",
        p(&data.join("tensor.tns")),
        "--rank",
        "2",
        "--schedule",
        "adagrad",
        "--seed",
        "3",
        "--max-epochs",
        "15",
        "--eval-every",
        "10",
        "--truth",
        p(&data.join("truth")),
        "--out",
        p(&first),
    ]);
    let second = tmp.path().join("second");
    ok(&["fit", "--manifest", p(&first.join("run.json")), "--out", p(&second)]);
    assert_eq!(trace_without_time(&first), trace_without_time(&second));
    for n in 1..=3 {
        let f = format!("factors/factor_{n}.csv");
        assert_eq!(fs::read(first.join(&f)).unwrap(), fs::read(second.join(&f)).unwrap());
    }
}

#[test]
fn incompatible_pair_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp.path().join("data"), &["--obs", "bernoulli"]);
    let out = smartcpd(&[
        "fit",
        "--tensor",
        p(&data.join("tensor.tns")),
        "--rank",
        "2",
        "--loss",
        "logistic",
        "--mirror",
        "entropy",
        "--out",
        p(&tmp.path().join("fit")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("logistic") && err.contains("entropy"), "{err}");
}

#[test]
fn domain_exit_mid_run_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp.path().join("data"), &[]);
    let fit = tmp.path().join("fit");
    let out = smartcpd(&[
        "fit",
        "--tensor",
        p(&data.join("tensor.tns")),
        "--rank",
        "2",
        "--mirror",
        "neglog",
        "--schedule",
        "constant:1e3",
        "--max-retries",
        "0",
        "--out",
        p(&fit),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("iteration"), "{err}");
    // The rows written before the failure remain readable.
    assert!(!costs(&fit).is_empty());
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(smartcpd(&["fit", "--rank", "2"]).status.code(), Some(2));
    assert_eq!(
        smartcpd(&["synth", "--shape", "3,3", "--rank", "0", "--out", p(tmp.path())])
            .status
            .code(),
        Some(2)
    );
    let missing = tmp.path().join("missing.tns");
    let out = smartcpd(&[
        "fit",
        "--tensor",
        p(&missing),
        "--rank",
        "2",
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = smartcpd(&[
        "synth",
        "--shape",
        "3,3",
        "--rank",
        "1",
        "--out",
        p(&blocker.join("sub")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_smartcpd"))
            .args(["synth", "--shape", "4,4,4", "--rank", "1", "--out", p(tmp.path())])
            .env("SMARTCPD_THREADS", threads)
            .output()
            .unwrap()
    };
    assert!(run("2").status.success());
    assert_eq!(run("zero").status.code(), Some(2));
}

#[test]
fn surrogate_grid_majorizes_the_loss() {
    let out = ok(&["surrogate-grid"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "phi,a1,a2,loss,surrogate");
    let mut anchors = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let v: Vec<f64> = f[1..].iter().map(|s| s.parse().unwrap()).collect();
        assert!(v[3] >= v[2] - 1e-12, "{line}");
        if v[0] == 5.0 && v[1] == 5.0 {
            assert!((v[3] - v[2]).abs() <= 1e-9, "{line}");
            anchors += 1;
        }
        if v[0] == 1.5 && v[1] == 1.5 {
            assert!((v[2] - (3.0 - 3.0 * 3f64.ln())).abs() < 1e-6);
        }
    }
    assert_eq!(anchors, 3);
}

#[test]
fn eval_reports_cost_and_mse() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp.path().join("data"), &[]);
    let out = ok(&[
        "eval",
        "--tensor",
        p(&data.join("tensor.tns")),
        "--factors",
        p(&data.join("truth")),
        "--truth",
        p(&data.join("truth")),
        "--mirror",
        "entropy",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["cost"].as_f64().unwrap().is_finite());
    assert!(v["mse"].as_f64().unwrap().abs() < 1e-12);
    assert!(v["stationarity"].as_f64().unwrap() >= 0.0);
}
