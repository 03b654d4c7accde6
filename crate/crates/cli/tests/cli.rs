use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sqrec::dataset::DatasetManifest;
use sqrec::predictions::{ScenePrediction, SceneStatus};
use sqrec::{io, render, RangeImage, Scene, SceneBounds, Superquadric};

fn sqrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sqrec(args);
    assert!(
        out.status.success(),
        "sqrec {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_dataset(dir: &Path, test: usize) -> PathBuf {
    let out = dir.join("ds");
    ok(&["generate", "--seed", "11", "--test", &test.to_string(), "--out", s(&out)]);
    out.join("manifest.json")
}

#[test]
fn generate_is_reproducible_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = ["generate", "--seed", "7", "--train", "100", "--val", "20", "--test", "20"];
    let out = ok(&[&args[..], &["--out", s(&a), "--jobs", "1"]].concat());
    ok(&[&args[..], &["--out", s(&b), "--jobs", "3"]].concat());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), s(&a.join("manifest.json")));
    let (ta, tb) = (tree(&a), tree(&b));
    // manifest, run config, and three files per scene
    assert_eq!(ta.len(), 2 + 3 * 140);
    assert!(ta == tb, "output trees differ");

    let m = DatasetManifest::load(a.join("manifest.json")).unwrap();
    assert_eq!((m.splits.train.count, m.splits.val.count, m.splits.test.count), (100, 20, 20));
    let mut ids: Vec<u64> = m.scenes.iter().map(|r| r.id).collect();
    ids.dedup();
    assert_eq!(ids.len(), 140);
}

#[test]
fn zero_counts_give_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    ok(&["generate", "--train", "0", "--val", "0", "--test", "0", "--out", s(&out)]);
    let m = DatasetManifest::load(out.join("manifest.json")).unwrap();
    assert!(m.scenes.is_empty());
    assert_eq!(m.splits.train.count + m.splits.val.count + m.splits.test.count, 0);
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["manifest.json", "run_config.json"]);
}

#[test]
fn invalid_iou_threshold_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = sqrec(&["generate", "--iou-threshold", "1.5", "--out", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("iou_threshold"));
}

#[test]
fn oracle_recovery_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 3);
    let rec = dir.path().join("rec");
    ok(&["recover", "--manifest", s(&manifest), "--split", "test", "--out", s(&rec), "--jobs", "1"]);
    for id in 0..3u64 {
        let p: ScenePrediction = io::read_json(rec.join(format!("scene_{id:06}.json"))).unwrap();
        assert_eq!(p.status, SceneStatus::Recovered);
        assert!(p.wall_time > 0.0);
        assert!(rec.join(format!("scene_{id:06}.sqri")).exists());
    }
    assert!(rec.join("run_config.json").exists());

    let ev = dir.path().join("ev");
    let out = ok(&["evaluate", "--manifest", s(&manifest), "--recovery", s(&rec), "--out", s(&ev)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("parameter MAE"), "{stdout}");
    assert!(stdout.contains("mask mAP 100.00"), "{stdout}");
    for f in ["report.json", "instances.csv", "scenes.csv", "run_config.json"] {
        assert!(ev.join(f).exists(), "{f}");
    }
    let scenes = std::fs::read_to_string(ev.join("scenes.csv")).unwrap();
    assert_eq!(scenes.lines().count(), 1 + 3);
    assert!(scenes.starts_with("scene_id,"));
}

#[test]
fn missing_external_masks_are_skipped_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 3);
    let m = DatasetManifest::load(&manifest).unwrap();
    // an external segmenter that produced masks for scenes 0 and 2 only
    let ext = dir.path().join("ext");
    std::fs::create_dir_all(&ext).unwrap();
    for rec in m.scenes.iter().filter(|r| r.id != 1) {
        let masks = io::read_mask(manifest.parent().unwrap().join(&rec.mask_path)).unwrap();
        io::write_mask(ext.join(format!("scene_{:06}.sqim", rec.id)), &masks).unwrap();
    }
    let rec = dir.path().join("rec");
    let out = ok(&[
        "recover", "--manifest", s(&manifest), "--mask-source", "external", "--masks-dir", s(&ext), "--out", s(&rec),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning: scene 1"), "{stderr}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("1 warnings"));
    let p: ScenePrediction = io::read_json(rec.join("scene_000001.json")).unwrap();
    assert_eq!(p.status, SceneStatus::Skipped);
    let p: ScenePrediction = io::read_json(rec.join("scene_000002.json")).unwrap();
    assert_eq!(p.status, SceneStatus::Recovered);
}

#[test]
fn evaluate_without_matches_fails() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 2);
    let empty = dir.path().join("none");
    std::fs::create_dir_all(&empty).unwrap();
    let ev = dir.path().join("ev");
    let out = sqrec(&["evaluate", "--manifest", s(&manifest), "--recovery", s(&empty), "--split", "test", "--out", s(&ev)]);
    assert!(!out.status.success());
    let out = sqrec(&["evaluate", "--manifest", s(&manifest), "--recovery", s(&empty), "--out", s(&ev)]);
    assert!(!out.status.success());
}

#[test]
fn evaluate_rejects_unknown_scene_ids() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 1);
    let rec = dir.path().join("rec");
    ok(&["recover", "--manifest", s(&manifest), "--out", s(&rec)]);
    std::fs::copy(rec.join("scene_000000.sqim"), rec.join("scene_000042.sqim")).unwrap();
    let out = sqrec(&["evaluate", "--manifest", s(&manifest), "--recovery", s(&rec), "--out", s(&dir.path().join("ev"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("42"));
}

#[test]
fn corrupted_masks_raise_reconstruction_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 8);
    let mut maes = Vec::new();
    for sev in ["0", "0.2", "0.4"] {
        let rec = dir.path().join(format!("rec{sev}"));
        let ev = dir.path().join(format!("ev{sev}"));
        ok(&[
            "recover", "--manifest", s(&manifest), "--mask-source", "corrupted", "--corrupt-mode", "erode-border",
            "--corrupt-severity", sev, "--out", s(&rec),
        ]);
        ok(&["evaluate", "--manifest", s(&manifest), "--recovery", s(&rec), "--out", s(&ev)]);
        let report: serde_json::Value = io::read_json(ev.join("report.json")).unwrap();
        maes.push(report["reconstruction"]["mean_mae"].as_f64().unwrap());
    }
    assert!(maes.windows(2).all(|w| w[0] <= w[1]), "{maes:?}");
}

fn sphere(x: f64, y: f64) -> RangeImage {
    let bounds = SceneBounds::new(64, 64, 64).unwrap();
    let sq = Superquadric::new([8.0; 3], [1.0, 1.0], [x, y, 30.0]);
    render(&Scene::new(vec![sq], bounds)).unwrap().0
}

#[test]
fn compose_cases() {
    let dir = tempfile::tempdir().unwrap();
    let pa = dir.path().join("a.sqri");
    let pb = dir.path().join("b.sqri");
    let pc = dir.path().join("c.sqri");
    let a = sphere(16.0, 16.0);
    io::write_range(&pa, &a).unwrap();
    io::write_range(&pb, &sphere(48.0, 48.0)).unwrap();
    io::write_range(&pc, &sphere(22.0, 16.0)).unwrap();

    let out = dir.path().join("out/x.sqri");
    ok(&["compose", "--input", s(&pa), "--input", s(&pa), "--out", s(&out)]);
    assert_eq!(io::read_range(&out).unwrap(), a);
    assert!(dir.path().join("out/x.run_config.json").exists());

    ok(&["compose", "--input", s(&pa), "--input", s(&pb), "--out", s(&out)]);
    let u = io::read_range(&out).unwrap();
    let b = io::read_range(&pb).unwrap();
    for k in 0..u.depth.len() {
        assert_eq!(u.depth[k], a.depth[k].max(b.depth[k]));
        assert_eq!(u.depth[k] > 0.0, a.depth[k] > 0.0 || b.depth[k] > 0.0);
    }

    // shifting a right by 6 puts it on top of c; overlap keeps the larger depth
    ok(&["compose", "--input", s(&pa), "--input", s(&pc), "--shift", "6,0", "--shift", "0,0", "--out", s(&out)]);
    let o = io::read_range(&out).unwrap();
    let c = io::read_range(&pc).unwrap();
    assert_eq!(o, c);

    ok(&["compose", "--input", s(&pa), "--input", s(&pc), "--shift", "3,0", "--shift", "0,0", "--out", s(&out)]);
    let o = io::read_range(&out).unwrap();
    let sa = sqrec::compose::shift_range(&a, 3, 0);
    let mut overlap = 0;
    for k in 0..o.depth.len() {
        if sa.depth[k] > 0.0 && c.depth[k] > 0.0 {
            overlap += 1;
            assert_eq!(o.depth[k], sa.depth[k].max(c.depth[k]));
        }
    }
    assert!(overlap > 0);

    assert!(!sqrec(&["compose", "--input", s(&pa), "--out", s(&out)]).status.success());
    assert!(!sqrec(&["compose", "--input", s(&pa), "--input", s(&pb), "--shift", "1,1", "--out", s(&out)])
        .status
        .success());
}
