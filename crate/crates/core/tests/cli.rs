use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use est_core::cli::MetricsReport;
use est_core::config::RunConfig;

const CONFIG: &str = "seed = 2\nsynthetic_timestamps = 30\ndim = 8\ntime_dim = 4\nhistory_len = 4\n\
epochs = 2\nbatch_size = 16\nneg_count = 6\nwarmup_epochs = 1\ntruncation_percents = [60, 100]\n";

fn est(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_est")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn setup() -> (tempfile::TempDir, String, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let (c, o) = (cfg.to_str().unwrap().to_string(), out.to_str().unwrap().to_string());
    (dir, c, o)
}

#[test]
fn full_pipeline_writes_the_layout() {
    let (_dir, cfg, out) = setup();
    for args in [
        vec!["prepare", "--config", &cfg, "--out", &out],
        vec!["train", "--config", &cfg, "--out", &out, "--backbone", "lstm"],
        vec!["evaluate", "--out", &out, "--ranks"],
        vec!["analyze", "--out", &out],
        vec!["truncate", "--out", &out],
        vec!["plotdata", "--out", &out],
    ] {
        let res = est(&args);
        assert_eq!(code(&res), 0, "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
    }
    let root = Path::new(&out);
    for f in [
        "config.resolved",
        "train_log.csv",
        "checkpoints/model.bin",
        "checkpoints/memory.bin",
        "reports/test.txt",
        "reports/test_ranks.csv",
        "reports/analysis.csv",
        "reports/truncation.csv",
        "plots/convergence.csv",
        "plots/truncation.csv",
        "dataset/train.txt",
    ] {
        assert!(root.join(f).is_file(), "missing {f}");
    }

    let resolved = RunConfig::load(&root.join("config.resolved")).unwrap();
    assert_eq!(resolved.backbone.name(), "lstm");
    let report: MetricsReport = toml::from_str(&fs::read_to_string(root.join("reports/test.txt")).unwrap()).unwrap();
    assert_eq!(report.config_hash, resolved.hash());
    assert_eq!(report.run_id, resolved.run_id());
    assert!(report.query_count > 0 && (0.0..=1.0).contains(&report.mrr));

    let log = fs::read_to_string(root.join("train_log.csv")).unwrap();
    assert!(log.lines().next().unwrap().starts_with("# run_id="));
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 3);
    let trunc = fs::read_to_string(root.join("reports/truncation.csv")).unwrap();
    assert_eq!(trunc.lines().count(), 3);
}

#[test]
fn usage_errors_exit_2() {
    let (dir, cfg, out) = setup();
    assert_eq!(code(&est(&["train", "--backbone", "gru", "--config", &cfg])), 2);
    assert_eq!(code(&est(&["train", "--scorer", "transe", "--config", &cfg])), 2);
    assert_eq!(code(&est(&["train", "--ablation", "wo_magic", "--config", &cfg])), 2);
    assert_eq!(code(&est(&["frobnicate"])), 2);
    assert_eq!(code(&est(&["train", "--config", "/nonexistent/run.toml"])), 2);
    assert_eq!(code(&est(&["evaluate", "--out", &out])), 2);
    assert_eq!(code(&est(&["plotdata", "--out", &out])), 2);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "dimm = 8\n").unwrap();
    let res = est(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("dimm"));

    let msg = String::from_utf8_lossy(&est(&["train", "--backbone", "gru"]).stderr).to_string();
    assert!(msg.contains("rnn, lstm, transformer, mamba"), "{msg}");
    assert_eq!(code(&est(&["--help"])), 0);
}

#[test]
fn corrupt_checkpoint_exits_1() {
    let (_dir, cfg, out) = setup();
    assert_eq!(code(&est(&["train", "--config", &cfg, "--out", &out])), 0);
    let model = Path::new(&out).join("checkpoints/model.bin");
    let bytes = fs::read(&model).unwrap();
    fs::write(&model, &bytes[..bytes.len() / 3]).unwrap();
    let res = est(&["evaluate", "--out", &out]);
    assert_eq!(code(&res), 1, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let (_dir, cfg, out) = setup();
    assert_eq!(code(&est(&["train", "--config", &cfg, "--out", &out])), 0);
    let res = est(&["evaluate", "--config", &cfg, "--out", &out, "--scorer", "rotate"]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("does not match"));
}

#[test]
fn reruns_are_byte_identical() {
    let (_dir, cfg, out) = setup();
    let other = format!("{out}-again");
    for o in [&out, &other] {
        assert_eq!(code(&est(&["train", "--config", &cfg, "--out", o, "--seed", "9", "--filter", "standard"])), 0);
        assert_eq!(code(&est(&["evaluate", "--out", o])), 0);
    }
    for f in ["checkpoints/model.bin", "checkpoints/memory.bin", "reports/test.txt"] {
        let a = fs::read(Path::new(&out).join(f)).unwrap();
        let b = fs::read(Path::new(&other).join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}
