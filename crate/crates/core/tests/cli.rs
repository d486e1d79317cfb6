use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lfdtn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfdtn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path) {
    let (fa, fb) = (files(a), files(b));
    assert_eq!(fa, fb);
    for f in fa {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{} differs", f.display());
    }
}

#[test]
fn gen_predict_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("scene.json"), r#"{"frames": 6, "background": {"kind": "black"}}"#).unwrap();
    assert_eq!(lfdtn(&["--config", "scene.json", "--seed", "4", "--out", "data", "gen"], d).status.code(), Some(0));
    for f in ["frames/0000.pgm", "frames/0005.pgm", "gt/masks/0005.pgm", "gt/velocity.lfdt", "manifest.json"] {
        assert!(d.join("data").join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["frames"], 6);

    assert_eq!(lfdtn(&["--input", "data", "--out", "run", "predict"], d).status.code(), Some(0));
    let metrics = fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("t,l1,mse,dssim,bce,psnr"));
    assert_eq!(metrics.lines().count(), 1 + 4 + 1);
    assert!(d.join("run/frames/0005.pgm").exists());
    assert!(d.join("run/velocity/0002.csv").exists());

    let out = lfdtn(&["--input", "run", "--truth", "data", "--out", "scores", "eval"], d);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean,"));
}

#[test]
fn segment_and_viz_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("scene.json"), r#"{"frames": 5, "random": {"count": 1}}"#).unwrap();
    assert_eq!(lfdtn(&["--config", "scene.json", "--out", "data", "gen"], d).status.code(), Some(0));
    fs::write(d.join("seg.json"), r#"{"horizon": 2}"#).unwrap();
    assert_eq!(lfdtn(&["--config", "seg.json", "--input", "data", "--out", "seg", "segment"], d).status.code(), Some(0));
    let csv = fs::read_to_string(d.join("seg/segmentation.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,observed,mse,iou"));
    assert!(csv.lines().last().unwrap().starts_with("6,false,"));
    for f in ["fg/0006.pgm", "bg/0006.pgm", "alpha/0006.pgm", "predicted/0006.pgm"] {
        assert!(d.join("seg").join(f).exists(), "missing {f}");
    }
    assert_eq!(lfdtn(&["--input", "data", "--out", "viz", "viz"], d).status.code(), Some(0));
    assert!(d.join("viz/viz/0001.ppm").exists());
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lfdtn(&["selftest"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 10);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = lfdtn(&["frobnicate"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(lfdtn(&[], d).status.code(), Some(1));
    fs::write(d.join("bad.json"), r#"{"frames": 0}"#).unwrap();
    assert_eq!(lfdtn(&["--config", "bad.json", "--out", "x", "gen"], d).status.code(), Some(1));
    fs::write(d.join("typo.json"), r#"{"frame": 3}"#).unwrap();
    assert_eq!(lfdtn(&["--config", "typo.json", "--out", "x", "gen"], d).status.code(), Some(1));
    assert_eq!(lfdtn(&["--input", "nowhere", "--out", "x", "predict"], d).status.code(), Some(2));
    assert_eq!(lfdtn(&["--help"], d).status.code(), Some(0));
}

#[test]
fn fixed_seed_runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("train.json"),
        r#"{"sequences": 3, "scene": {"frames": 4, "height": 36, "width": 36}, "train": {"epochs": 1, "batch_size": 2}}"#,
    )
    .unwrap();
    for run in ["a", "b"] {
        let dir = d.join(run);
        let dir = dir.to_str().unwrap();
        assert_eq!(lfdtn(&["--seed", "9", "--frames", "5", "--out", &format!("{dir}/data"), "gen"], d).status.code(), Some(0));
        assert_eq!(lfdtn(&["--config", "train.json", "--seed", "2", "--out", &format!("{dir}/model"), "train"], d).status.code(), Some(0));
    }
    same_tree(&d.join("a/data"), &d.join("b/data"));
    same_tree(&d.join("a/model"), &d.join("b/model"));
}
