use std::path::Path;
use std::process::{Command, Output};

fn hfbrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfbrt")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hfbrt(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let out = ok(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["generate", "train", "finetune", "evaluate", "sweep", "pmf", "bench"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(hfbrt(&["pmf", "--bogus"]).status.code(), Some(2));
    assert_eq!(hfbrt(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[scenario]\nnot_a_key = 3\n").unwrap();
    let out = hfbrt(&["pmf", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = hfbrt(&["evaluate", "--model", dir.path().join("missing.ckpt").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pmf_prints_baseline_binomial() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["pmf", "--out", dir.path().to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("4,0.197530864198,16/81,"));
    assert!(text.contains("0,0.012345679012,1/81,"));
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn toy_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["train", "--toy", "--seed", "7", "--epochs", "3", "--out", d.to_str().unwrap()]);
    }
    assert_eq!(read(&a.join("train_log.csv")), read(&b.join("train_log.csv")));
    assert_eq!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(read(&a.join("train_log.csv")).lines().count(), 4);
}

#[test]
fn snr_sweep_has_one_row_per_point_and_reruns_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("t");
    ok(&["train", "--toy", "--epochs", "1", "--out", train.to_str().unwrap()]);
    let ckpt = train.join("model.ckpt");
    let first = dir.path().join("s1");
    ok(&["sweep", "--axis", "snr", "--toy", "--model", ckpt.to_str().unwrap(), "--values", "0,10,20", "--seed", "3", "--out", first.to_str().unwrap()]);
    let csv = read(&first.join("sweep_snr.csv"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("brt,")).count(), 3);
    assert_eq!(csv.lines().filter(|l| l.starts_with("ls,")).count(), 3);

    let manifest: serde_json::Value = serde_json::from_str(&read(&first.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "sweep");
    let second = dir.path().join("s2");
    let cfg = first.join("config.toml");
    ok(&["sweep", "--axis", "snr", "--config", cfg.to_str().unwrap(), "--model", ckpt.to_str().unwrap(), "--values", "0,10,20", "--out", second.to_str().unwrap()]);
    assert_eq!(csv, read(&second.join("sweep_snr.csv")));
    let again: serde_json::Value = serde_json::from_str(&read(&second.join("manifest.json"))).unwrap();
    assert_eq!(manifest["config_hash"], again["config_hash"]);
    assert_eq!(manifest["outputs"]["sweep_snr.csv"], again["outputs"]["sweep_snr.csv"]);
}

#[test]
fn bench_and_generate_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b");
    ok(&["bench", "--toy", "--batch-sizes", "1,2", "--subcarriers", "1", "--out", b.to_str().unwrap()]);
    assert!(read(&b.join("bench.csv")).starts_with("subcarriers,batch,per_batch_ms,per_sample_ms\n"));
    let g = dir.path().join("g");
    ok(&["generate", "--toy", "--samples", "5", "--out", g.to_str().unwrap()]);
    assert!(g.join("dataset.bin").exists() && g.join("dataset.bin.json").exists());
}
