//! End-to-end runs of the `earlynet` binary through its public surface:
//! real process spawns, real files, exit codes and CSV artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const CONFIG: &str = "\
[data]
per_class = 15
fractions = [0.7, 0.3]

[train]
epochs = 2
seed = 9

[anytime]
points = 5
";

fn earlynet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_earlynet"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn run_ok(args: &[&str]) -> String {
    let out = earlynet(args);
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn run_fail(args: &[&str]) -> String {
    let out = earlynet(args);
    assert!(!out.status.success(), "expected failure for {args:?}");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, CONFIG).unwrap();
    path
}

/// One trained checkpoint shared by the read-only commands.
fn trained() -> &'static (TempDir, PathBuf) {
    static DIR: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path());
        run_ok(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        (dir, cfg)
    })
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

fn field(line: &str, idx: usize) -> f64 {
    line.split(',').nth(idx).unwrap().parse().unwrap()
}

#[test]
fn train_writes_checkpoint_and_log() {
    let (dir, _) = trained();
    let log = csv_lines(&dir.path().join("trainlog.csv"));
    assert!(log[0].starts_with("epoch,total_loss,loss_head_1"));
    assert_eq!(log.len(), 1 + 2, "one row per epoch");
    assert!(dir.path().join("net.ckpt").exists());
}

#[test]
fn identical_invocations_are_byte_identical() {
    let (dir, cfg) = trained();
    let rerun = TempDir::new().unwrap();
    run_ok(&["train", "--config", cfg.to_str().unwrap(), "--out", rerun.path().to_str().unwrap()]);
    for name in ["trainlog.csv", "net.ckpt"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(rerun.path().join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn seed_flag_overrides_the_config_file() {
    let (_, cfg) = trained();
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for out in [&a, &b] {
        run_ok(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "11",
            "--out",
            out.path().to_str().unwrap(),
        ]);
    }
    let log_a = fs::read(a.path().join("trainlog.csv")).unwrap();
    assert_eq!(log_a, fs::read(b.path().join("trainlog.csv")).unwrap());
    // and it really did override: differs from the seed-9 run
    assert_ne!(log_a, fs::read(trained().0.path().join("trainlog.csv")).unwrap());
}

#[test]
fn missing_data_exits_nonzero_without_writing_a_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[data]\nkind = \"idx\"\nimages = \"no.imgs\"\nlabels = \"no.lbls\"\nclasses = 10\n")
        .unwrap();
    let err = run_fail(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(err.contains("no.imgs"), "diagnostic names the missing file: {err}");
    assert!(!dir.path().join("out").join("net.ckpt").exists());
}

#[test]
fn eval_without_a_checkpoint_fails() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path());
    let err = run_fail(&["eval", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(err.contains("net.ckpt"), "{err}");
}

#[test]
fn eval_emits_the_six_default_scheme_blocks() {
    let (dir, cfg) = trained();
    let out = run_ok(&["eval", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    for scheme in ["eq", "lin", "poly", "ilin", "ipoly", "norm"] {
        assert!(out.contains(&format!("{scheme}: expected accuracy")), "missing {scheme}");
    }
    let lines = csv_lines(&dir.path().join("expected_accuracy.csv"));
    assert_eq!(lines[0], "scheme,head,weight,head_accuracy,expected_accuracy");
    assert_eq!(lines.len(), 1 + 6 * 4, "six schemes x four heads");
}

#[test]
fn std_scheme_reduces_to_final_head_accuracy() {
    let (dir, cfg) = trained();
    run_ok(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--schemes",
        "std",
    ]);
    let lines = csv_lines(&dir.path().join("expected_accuracy.csv"));
    assert_eq!(lines.len(), 1 + 4);
    let last_head_acc = field(&lines[4], 3);
    let expected = field(&lines[4], 4);
    assert_eq!(expected, last_head_acc);
}

#[test]
fn costs_lists_every_head_with_increasing_macs() {
    let (dir, cfg) = trained();
    run_ok(&["costs", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let lines = csv_lines(&dir.path().join("costs.csv"));
    assert_eq!(lines[0], "head,budget_macs,anytime_macs");
    assert_eq!(lines.len(), 1 + 4);
    for w in lines[1..].windows(2) {
        assert!(field(&w[1], 1) > field(&w[0], 1), "budget macs increase");
        assert!(field(&w[1], 2) > field(&w[0], 2), "anytime macs increase");
    }
    for line in &lines[1..] {
        assert!(field(line, 2) >= field(line, 1), "anytime >= budget cost");
    }
}

#[test]
fn cascade_sweep_endpoints_match_the_per_head_curve() {
    let (dir, _) = trained();
    // thresholds 1 (always stop at head 1) and huge (never stop early)
    let cfg = dir.path().join("cascade.toml");
    fs::write(
        &cfg,
        format!("{CONFIG}\n[cascade]\nthresholds = [1.0, 1e18]\n"),
    )
    .unwrap();
    run_ok(&["cascade", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);

    let heads = csv_lines(&dir.path().join("per_head_curve.csv"));
    let sweep = csv_lines(&dir.path().join("cascade_sweep_ratio.csv"));
    assert_eq!(heads[0], "cost_macs,cost_ms,accuracy,threshold_or_head");
    assert_eq!(heads.len(), 1 + 4);
    assert_eq!(sweep.len(), 1 + 2);
    // endpoint identity: (cost, accuracy) columns agree exactly
    for col in [0, 2] {
        assert_eq!(field(&sweep[1], col), field(&heads[1], col), "head-1 endpoint");
        assert_eq!(field(&sweep[2], col), field(&heads[4], col), "head-K endpoint");
    }
}

#[test]
fn empty_threshold_grid_is_a_usage_error() {
    let (dir, _) = trained();
    let cfg = dir.path().join("empty.toml");
    fs::write(&cfg, format!("{CONFIG}\n[cascade]\nthresholds = []\n")).unwrap();
    let err = run_fail(&[
        "cascade",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(err.contains("threshold"), "{err}");
}

#[test]
fn csv_data_trains_and_evaluates_through_the_compact_flag() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("blobs.csv");
    let mut text = String::new();
    for i in 0..30u32 {
        let class = i % 2;
        let base = if class == 0 { 0.2 } else { 0.8 };
        let row: Vec<String> = (0..64u32)
            .map(|j| format!("{:.3}", base + ((i * 7 + j * 13) % 10) as f64 / 100.0))
            .collect();
        text.push_str(&format!("{class},{}\n", row.join(",")));
    }
    fs::write(&csv, text).unwrap();
    let cfg = dir.path().join("csv.toml");
    fs::write(
        &cfg,
        "[data]\nclasses = 2\nfractions = [0.7, 0.3]\n\n[arch]\ninput = [1, 8, 8]\nchannels = [3, 4]\n\n[train]\nepochs = 2\nseed = 5\n",
    )
    .unwrap();
    let args: Vec<String> = vec![
        "--config".into(),
        cfg.to_str().unwrap().into(),
        "--data".into(),
        csv.to_str().unwrap().into(),
        "--out".into(),
        dir.path().to_str().unwrap().into(),
    ];
    let as_ref: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&[&["train"], &as_ref[..]].concat());
    assert!(dir.path().join("net.ckpt").exists());
    let out = run_ok(&[&["eval"], &as_ref[..]].concat());
    assert!(out.contains("eq: expected accuracy"), "{out}");
}

#[test]
fn anytime_grid_spans_first_to_last_head() {
    let (dir, cfg) = trained();
    run_ok(&["anytime-sim", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let lines = csv_lines(&dir.path().join("anytime.csv"));
    assert_eq!(lines[0], "interrupt_at,head,cost_macs,accuracy");
    assert_eq!(lines.len(), 1 + 5, "the config asks for five grid points");
    assert_eq!(field(&lines[1], 1), 1.0, "first point answers from head 1");
    assert_eq!(field(&lines[5], 1), 4.0, "last point answers from head 4");
    assert_eq!(field(&lines[1], 0), field(&lines[1], 2), "grid starts where head 1 completes");
    for w in lines[1..].windows(2) {
        assert!(field(&w[1], 1) >= field(&w[0], 1), "answering head never moves backwards");
    }
}
