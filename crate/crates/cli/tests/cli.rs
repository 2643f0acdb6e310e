use std::path::Path;
use std::process::{Command, Output};

fn dbp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbp"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const SMALL: &str = "n_graphs=40\nhidden_dim=8\nepochs_pretrain=2\nepochs_finetune=2\nbatch_size=8\nmi_bins=5\n\
sweep_alphas=0,0.1\nsweep_betas=0.001\nsweep_seeds=0,1\n";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.cfg"), SMALL).unwrap();
    let o = dbp(&["generate", "--config", "c.cfg", "--out", "d.txt"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "graphs=40 train=32 valid=4 test=4");
    dir
}

#[test]
fn full_pipeline_succeeds_and_is_deterministic() {
    let dir = setup();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = dbp(args, d);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["pretrain", "--config", "c.cfg", "--data", "d.txt", "--ckpt-out", "pre.bin"]);
    run(&["finetune", "--config", "c.cfg", "--data", "d.txt", "--ckpt-in", "pre.bin", "--ckpt-out", "f.bin"]);
    run(&["finetune", "--config", "c.cfg", "--data", "d.txt", "--no-transfer", "--ckpt-out", "b.bin"]);
    run(&["sweep", "--config", "c.cfg", "--data", "d.txt", "--out", "sweep"]);
    run(&["report", "--data", "sweep", "--out", "figs"]);
    for f in ["pre.bin.metrics.csv", "f.bin.metrics.csv", "b.bin.metrics.csv", "sweep/sweep_summary.csv", "figs/sweep_auc.csv"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let first = std::fs::read(d.join("f.bin")).unwrap();
    let csv = std::fs::read(d.join("f.bin.metrics.csv")).unwrap();
    run(&["finetune", "--config", "c.cfg", "--data", "d.txt", "--ckpt-in", "pre.bin", "--ckpt-out", "f.bin"]);
    assert_eq!(std::fs::read(d.join("f.bin")).unwrap(), first);
    assert_eq!(std::fs::read(d.join("f.bin.metrics.csv")).unwrap(), csv);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&dbp(&["generate", "--config", "c.cfg", "--seed", "9", "--out", "e.txt"], d)), 0);
    assert_ne!(std::fs::read(d.join("d.txt")).unwrap(), std::fs::read(d.join("e.txt")).unwrap());
}

#[test]
fn config_and_compat_errors_exit_2() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("typo.cfg"), "hiden_dim=8\n").unwrap();
    let o = dbp(&["generate", "--config", "typo.cfg", "--out", "x.txt"], d);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("hiden_dim"));
    assert_eq!(code(&dbp(&["generate", "--config", "missing.cfg", "--out", "x.txt"], d)), 2);

    assert_eq!(code(&dbp(&["pretrain", "--config", "c.cfg", "--data", "d.txt", "--ckpt-out", "pre.bin"], d)), 0);
    std::fs::write(d.join("wide.cfg"), SMALL.replace("hidden_dim=8", "hidden_dim=16")).unwrap();
    let o = dbp(&["finetune", "--config", "wide.cfg", "--data", "d.txt", "--ckpt-in", "pre.bin", "--ckpt-out", "f.bin"], d);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("hidden_dim (8 vs 16)"));
    // a fine-tuning checkpoint is not a valid transfer source
    assert_eq!(code(&dbp(&["finetune", "--config", "c.cfg", "--data", "d.txt", "--no-transfer", "--ckpt-out", "b.bin"], d)), 0);
    let o = dbp(&["finetune", "--config", "c.cfg", "--data", "d.txt", "--ckpt-in", "b.bin", "--ckpt-out", "g.bin"], d);
    assert_eq!(code(&o), 2);
    // flag misuse is a usage error
    let o = dbp(&["finetune", "--config", "c.cfg", "--data", "d.txt", "--ckpt-out", "g.bin"], d);
    assert_eq!(code(&o), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&dbp(&["pretrain", "--config", "c.cfg", "--data", "nope.txt", "--ckpt-out", "p.bin"], d)), 3);
    std::fs::write(d.join("bad.bin"), b"NOTACKPT").unwrap();
    assert_eq!(code(&dbp(&["finetune", "--config", "c.cfg", "--data", "d.txt", "--ckpt-in", "bad.bin", "--ckpt-out", "f.bin"], d)), 3);
    let o = dbp(&["generate", "--config", "c.cfg", "--out", "/nonexistent-dir/d.txt"], d);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent-dir/d.txt"));
}
