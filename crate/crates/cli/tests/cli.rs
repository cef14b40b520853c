use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
train_scenes = 4
val_scenes = 2

[data.scene]
num_points = 256
grid_rows = 12
grid_cols = 16
focal = 80.0

[train]
epochs = 4
batch_size = 2

[ablation]
seeds = 2
"#;

fn pointalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointalign"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pointalign(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("config.toml");
    fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn interrupted_and_resumed_run_matches_a_straight_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--config", &cfg, "--out", s(&a)]);
    let msg = ok(&[
        "train",
        "--config",
        &cfg,
        "--out",
        s(&b),
        "--stop-after",
        "3",
    ]);
    assert!(msg.contains("stopped after epoch 3"), "{msg}");
    assert!(!b.join("final.ckpt").exists());
    ok(&["train", "--config", &cfg, "--out", s(&b), "--resume"]);
    for f in ["stage1.ckpt", "final.ckpt", "last.ckpt", "metrics.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    // The read counter covers one invocation, so it differs after a resume.
    let scores = |dir: &Path| {
        let mut v = summary(dir);
        v.as_object_mut().unwrap().remove("seen_label_reads");
        v
    };
    assert_eq!(scores(&a), scores(&b));
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with(
        "epoch,stage,loss_ce,loss_lovasz,loss_class,loss_patch,miou_s,miou_u,miou_all,hmiou\n"
    ));
}

#[test]
fn seed_changes_the_run_and_repeats_do_not() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        ok(&["train", "--config", &cfg, "--out", s(&out), "--seed", seed]);
        fs::read(out.join("final.ckpt")).unwrap()
    };
    let (a, b, c) = (run("a", "1"), run("b", "1"), run("c", "2"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn eval_prints_one_row_per_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    ok(&["train", "--config", &cfg, "--out", s(&out)]);
    let table = ok(&[
        "eval",
        "--config",
        &cfg,
        "--out",
        s(&out),
        "--checkpoint",
        s(&out.join("stage1.ckpt")),
        "--checkpoint",
        s(&out.join("final.ckpt")),
    ]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[0].contains("mIoU-U") && lines[0].contains("hmIoU"));
    assert!(lines[1].starts_with("stage1") && lines[2].starts_with("final"));
}

#[test]
fn annotation_free_summary_reports_no_label_reads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("free");
    ok(&[
        "train",
        "--config",
        &cfg,
        "--out",
        s(&out),
        "--mode",
        "annotation-free",
    ]);
    let summary = summary(&out);
    assert_eq!(summary["seen_label_reads"], 0);
    assert_eq!(summary["mode"], "annotation-free");
    assert!(summary["final"]["miou_s"].is_null());
}

#[test]
fn gen_data_writes_every_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("data");
    let msg = ok(&["gen-data", "--config", &cfg, "--out", s(&out)]);
    assert!(msg.contains("4 train + 2 val"), "{msg}");
    assert_eq!(fs::read_dir(out.join("train")).unwrap().count(), 4);
    assert_eq!(fs::read_dir(out.join("val")).unwrap().count(), 2);
    assert!(out.join("catalog.txt").exists() && out.join("embeddings.txt").exists());
}

#[test]
fn ablation_reports_mean_and_spread_per_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("abl");
    let table = ok(&["ablate", "--config", &cfg, "--out", s(&out)]);
    assert!(
        table.contains("baseline") && table.contains("class+patch"),
        "{table}"
    );
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows
        .iter()
        .all(|r| r.split(',').count() == 10 && r.split(',').nth(1) == Some("2")));
    let runs = fs::read_to_string(out.join("ablation_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 4 * 2);
}

#[test]
fn disabling_both_terms_matches_the_baseline_objective() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let toggled = tmp.path().join("toggled");
    ok(&[
        "train",
        "--config",
        &cfg,
        "--out",
        s(&toggled),
        "--no-class-loss",
        "--no-patch-loss",
    ]);
    let lambda0 = tmp.path().join("lambda0");
    let cfg0 = write_config(tmp.path(), "");
    let text = fs::read_to_string(&cfg0)
        .unwrap()
        .replace("batch_size = 2", "batch_size = 2\nlambda = 0.0");
    fs::write(&cfg0, text).unwrap();
    ok(&["train", "--config", &cfg0, "--out", s(&lambda0)]);
    assert_eq!(
        fs::read(toggled.join("final.ckpt")).unwrap(),
        fs::read(lambda0.join("final.ckpt")).unwrap()
    );
    let csv = fs::read_to_string(toggled.join("metrics.csv")).unwrap();
    let first = csv.lines().nth(1).unwrap();
    let cols: Vec<&str> = first.split(',').collect();
    assert_eq!((cols[4], cols[5]), ("", ""));
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[output]\nfolder = \"x\"\n");
    let out = pointalign(&["gen-data", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("folder"));

    let cfg = write_config(tmp.path(), "");
    let bad = fs::read_to_string(&cfg)
        .unwrap()
        .replace("epochs = 4", "epochs = 4\nlr = -1.0");
    fs::write(&cfg, bad).unwrap();
    let out = pointalign(&["train", "--config", &cfg, "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr"));
}

#[test]
fn data_errors_exit_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let out = pointalign(&[
        "eval",
        "--data",
        s(&missing),
        "--checkpoint",
        s(&missing.join("x.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let cfg = write_config(tmp.path(), "");
    let data = tmp.path().join("data");
    ok(&["gen-data", "--config", &cfg, "--out", s(&data)]);
    let junk = tmp.path().join("junk.ckpt");
    fs::write(&junk, b"PBCK\x01\x00garbage").unwrap();
    let out = pointalign(&["eval", "--data", s(&data), "--checkpoint", s(&junk)]);
    assert_eq!(out.status.code(), Some(3));
}
