//! Black-box tests of the `sgan` binary: exit codes, artifact layout, and
//! determinism of its outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use once_cell::sync::Lazy;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sgan")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

const TINY_CONFIG: &str = "\
seed = 0
[dataset.rings]
train_size = 272
test_size = 80
[train]
epochs = 6
batch_size = 16
pretrain_epochs = 200
c_join_epoch = 1
ramp_start = 1
ramp_end = 4
[eval]
eval_every = 2
checkpoint_every = 3
num_samples = 200
";

/// One short training run shared by the read-only post-training tests.
struct TinyRun {
    dir: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

static TINY: Lazy<TinyRun> = Lazy::new(|| {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, TINY_CONFIG).unwrap();
    let out = dir.path().join("run");
    let status = Command::new(bin())
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "tiny training run failed");
    TinyRun { dir, config, out }
});

fn tiny_args(t: &TinyRun) -> Vec<String> {
    vec![
        "--checkpoint".into(),
        t.out.join("final.ckpt").display().to_string(),
        "--config".into(),
        t.config.display().to_string(),
    ]
}

fn csv_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn missing_config_file_exits_2() {
    let out = run(&["train", "--config", "/nonexistent/nope.toml"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "seed = 0\nbogus_key = 1\n").unwrap();
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("bogus_key"), "{}", stderr(&out));
}

#[test]
fn corrupted_checkpoint_exits_2() {
    let t = &*TINY;
    let bad = t.dir.path().join("bad.ckpt");
    let mut bytes = std::fs::read(t.out.join("final.ckpt")).unwrap();
    bytes[0] = b'X';
    std::fs::write(&bad, &bytes).unwrap();
    let out = run(&[
        "eval",
        "--checkpoint",
        bad.to_str().unwrap(),
        "--config",
        t.config.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn config_hash_mismatch_requires_force() {
    let t = &*TINY;
    let other = t.dir.path().join("other.toml");
    std::fs::write(&other, TINY_CONFIG.replace("seed = 0", "seed = 1")).unwrap();
    let mismatch = run(&[
        "eval",
        "--checkpoint",
        t.out.join("final.ckpt").to_str().unwrap(),
        "--config",
        other.to_str().unwrap(),
    ]);
    assert_eq!(mismatch.status.code(), Some(2), "{}", stderr(&mismatch));
    let forced = run(&[
        "eval",
        "--checkpoint",
        t.out.join("final.ckpt").to_str().unwrap(),
        "--config",
        other.to_str().unwrap(),
        "--force",
    ]);
    assert!(forced.status.success(), "{}", stderr(&forced));
}

#[test]
fn metrics_has_one_row_per_epoch_and_expected_checkpoints() {
    let t = &*TINY;
    let lines = csv_lines(&t.out.join("metrics.csv"));
    assert_eq!(
        lines[0],
        "epoch,l_xz_critic,l_xz_geninf,l_xy_critic,l_xy_gen,r_y,r_z,test_error,mp,cond_acc,golden_score"
    );
    assert_eq!(lines.len(), 1 + 6, "expected header plus one row per epoch");
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{i},")), "row {i}: {line}");
    }
    assert!(t.out.join("checkpoint_2.ckpt").exists());
    assert!(t.out.join("final.ckpt").exists());
}

#[test]
fn eval_is_deterministic_and_matches_final_metrics_row() {
    let t = &*TINY;
    let args: Vec<String> = ["eval".to_string()].into_iter().chain(tiny_args(t)).collect();
    let argrefs: Vec<&str> = args.iter().map(String::as_str).collect();
    let a = run(&argrefs);
    let b = run(&argrefs);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b), "eval output is not deterministic");

    let json: serde_json::Value = serde_json::from_str(stdout(&a).trim()).unwrap();
    let last = csv_lines(&t.out.join("metrics.csv")).pop().unwrap();
    let cols: Vec<&str> = last.split(',').collect();
    let close = |key: &str, col: usize| {
        let v = json[key].as_f64().unwrap();
        let want: f64 = cols[col].parse().unwrap();
        assert!((v - want).abs() < 1e-9, "{key}: {v} vs metrics row {want}");
    };
    assert_eq!(json["epoch"].as_u64().unwrap(), 5);
    close("test_error", 7);
    close("mp", 8);
    close("conditional_accuracy", 9);
    close("golden_score", 10);
}

#[test]
fn generate_single_class_and_all_classes() {
    let t = &*TINY;
    let one = t.dir.path().join("gen_one.csv");
    let mut args: Vec<String> = vec!["generate".into()];
    args.extend(tiny_args(t));
    args.extend(["--class".into(), "2".into(), "--num".into(), "5".into()]);
    args.extend(["--out".into(), one.display().to_string()]);
    let out = Command::new(bin()).args(&args).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = csv_lines(&one);
    assert_eq!(lines[0], "x0,x1,y");
    assert_eq!(lines.len(), 1 + 5);
    assert!(lines[1..].iter().all(|l| l.ends_with(",2")), "{lines:?}");

    let all = t.dir.path().join("gen_all.csv");
    let mut args: Vec<String> = vec!["generate".into()];
    args.extend(tiny_args(t));
    args.extend(["--all".into(), "--num".into(), "3".into()]);
    args.extend(["--out".into(), all.display().to_string()]);
    let out = Command::new(bin()).args(&args).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(csv_lines(&all).len(), 1 + 4 * 3);
}

#[test]
fn generate_rejects_class_with_all() {
    let t = &*TINY;
    let mut args: Vec<String> = vec!["generate".into()];
    args.extend(tiny_args(t));
    args.extend([
        "--class".into(),
        "1".into(),
        "--all".into(),
        "--out".into(),
        t.dir.path().join("x.csv").display().to_string(),
    ]);
    let out = Command::new(bin()).args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn transfer_writes_one_row_per_target_class() {
    let t = &*TINY;
    let path = t.dir.path().join("transfer.csv");
    let mut args: Vec<String> = vec!["transfer".into()];
    args.extend(tiny_args(t));
    args.extend([
        "--input".into(),
        "1.0,0.0".into(),
        "--classes".into(),
        "0,1,2,3".into(),
        "--out".into(),
        path.display().to_string(),
    ]);
    let out = Command::new(bin()).args(&args).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = csv_lines(&path);
    assert_eq!(lines.len(), 1 + 4);
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.ends_with(&format!(",{i}")), "{line}");
    }
}

#[test]
fn interpolate_requires_at_least_two_steps() {
    let t = &*TINY;
    let path = t.dir.path().join("interp.csv");
    let base: Vec<String> = vec!["interpolate".into()];
    let mut ok_args = base.clone();
    ok_args.extend(tiny_args(t));
    ok_args.extend([
        "--class".into(),
        "0".into(),
        "--steps".into(),
        "2".into(),
        "--out".into(),
        path.display().to_string(),
    ]);
    let ok = Command::new(bin()).args(&ok_args).output().unwrap();
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert_eq!(csv_lines(&path).len(), 1 + 2);

    let mut bad_args = base;
    bad_args.extend(tiny_args(t));
    bad_args.extend([
        "--class".into(),
        "0".into(),
        "--steps".into(),
        "1".into(),
        "--out".into(),
        path.display().to_string(),
    ]);
    let bad = Command::new(bin()).args(&bad_args).output().unwrap();
    assert_eq!(bad.status.code(), Some(2), "{}", stderr(&bad));
}

#[test]
fn sgan_threads_must_be_a_positive_integer() {
    let out = Command::new(bin()).arg("gradcheck").env("SGAN_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = Command::new(bin()).arg("gradcheck").env("SGAN_THREADS", "0").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

fn write_idx_pair(dir: &Path, prefix: &str, labels: &[u8]) -> (PathBuf, PathBuf) {
    let n = labels.len();
    let mut img = Vec::new();
    img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&2u32.to_be_bytes());
    img.extend_from_slice(&2u32.to_be_bytes());
    for (i, &label) in labels.iter().enumerate() {
        // class-dependent texture with mild per-sample variation
        for p in 0..4u8 {
            img.push(label * 120 + p * 20 + (i % 5) as u8);
        }
    }
    let mut lbl = Vec::new();
    lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    let img_path = dir.join(format!("{prefix}-images.idx"));
    let lbl_path = dir.join(format!("{prefix}-labels.idx"));
    std::fs::write(&img_path, img).unwrap();
    std::fs::write(&lbl_path, lbl).unwrap();
    (img_path, lbl_path)
}

#[test]
fn idx_dataset_trains_and_generates_pgm_grids() {
    let dir = tempfile::tempdir().unwrap();
    let train_labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
    let test_labels: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
    let (ti, tl) = write_idx_pair(dir.path(), "train", &train_labels);
    let (si, sl) = write_idx_pair(dir.path(), "test", &test_labels);

    let config = dir.path().join("idx.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 0\n[dataset]\nkind = \"idx\"\nlabeled = 4\n\
             [dataset.idx]\ntrain_images = {ti:?}\ntrain_labels = {tl:?}\n\
             test_images = {si:?}\ntest_labels = {sl:?}\n\
             [train]\nepochs = 2\nbatch_size = 8\npretrain_epochs = 50\n\
             c_join_epoch = 1\nramp_start = 1\nramp_end = 2\n\
             [eval]\neval_every = 1\nnum_samples = 50\n"
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = Command::new(bin())
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let pgm = dir.path().join("samples.pgm");
    let out = Command::new(bin())
        .args(["generate", "--checkpoint"])
        .arg(out_dir.join("final.ckpt"))
        .arg("--config")
        .arg(&config)
        .args(["--all", "--num", "3", "--out"])
        .arg(&pgm)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let bytes = std::fs::read(&pgm).unwrap();
    // grid: 3 samples per class wide, 2 classes tall, 2x2 pixels each
    let header = b"P5\n6 4\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 6 * 4);
}
