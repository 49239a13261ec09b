use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use e2v_core::voxel::parse_obj;

fn e2v(args: &[&str]) -> Output {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).to_string();
    Command::new(env!("CARGO_BIN_EXE_e2v"))
        .args(args)
        .env("E2V_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = e2v(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path to contents for every file below `root`.
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

#[test]
fn generate_is_deterministic_and_split_eight_one_one() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["generate", "--toy", "--count", "10", "--seed", "7", "--out", s(d)]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 1 + 1 + 3 * 10);
    assert_eq!(ta, tb);
    let manifest: serde_json::Value = serde_json::from_slice(&ta[Path::new("manifest.json")]).unwrap();
    let splits: Vec<&str> = manifest["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["split"].as_str().unwrap())
        .collect();
    for (name, n) in [("train", 8), ("val", 1), ("test", 1)] {
        assert_eq!(splits.iter().filter(|&&x| x == name).count(), n, "{name}");
    }
}

#[test]
fn unwritable_output_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"").unwrap();
    let out = e2v(&["generate", "--toy", "--count", "1", "--out", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_manifest_names_the_path() {
    let out = e2v(&["preprocess", "--toy", "--manifest", "/nonexistent/manifest.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/manifest.json"));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = e2v(&["generate", "--toy", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    let out = e2v(&["generate", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_voxels_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "--toy", "--count", "1", "--out", s(dir.path())]);
    let obj = dir.path().join("cube.obj");
    ok(&["export", "--voxels", s(&dir.path().join("samples/s00000.vox")), "--out", s(&obj)]);
    let mesh = parse_obj(&std::fs::read_to_string(&obj).unwrap()).unwrap();
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("samples/s00000.json")).unwrap()).unwrap();
    let k = sidecar["occupied_voxels"].as_u64().unwrap() as usize;
    assert_eq!((mesh.vertices().len(), mesh.triangles().len()), (8 * k, 12 * k));
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let manifest = data.join("manifest.json");
    ok(&["generate", "--toy", "--count", "8", "--seed", "1", "--out", s(&data)]);
    ok(&["preprocess", "--toy", "--manifest", s(&manifest)]);
    assert!(data.join("frames/s00000.frm").is_file());

    // interrupted run, then resumed to 50 epochs
    let short = dir.path().join("short.json");
    std::fs::write(&short, r#"{"train": {"epochs": 2}}"#).unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"epochs": 50}}"#).unwrap();
    let train = |c: &Path| ok(&["train", "--toy", "--config", s(c), "--manifest", s(&manifest), "--split", "all", "--out", s(&run)]);
    train(&short);
    let log = train(&cfg);
    assert!(log.lines().next().unwrap().starts_with("epoch    3"), "{log}");
    assert!(run.join("epoch_0050.ckp").is_file());

    let report = ok(&["eval", "--toy", "--manifest", s(&manifest), "--checkpoint", s(&run), "--split", "all", "--out", s(&run)]);
    let overall = report.lines().find(|l| l.starts_with("Overall")).expect("overall row");
    let iou: f64 = overall.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(iou > 0.9, "{report}");
    assert!(run.join("report.csv").is_file());

    let other = dir.path().join("other.json");
    std::fs::write(&other, r#"{"model": {"seed": 99}}"#).unwrap();
    let out = e2v(&["eval", "--toy", "--config", s(&other), "--manifest", s(&manifest), "--checkpoint", s(&run)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint mismatch"));

    let obj = dir.path().join("pred.obj");
    ok(&["export", "--toy", "--checkpoint", s(&run), "--manifest", s(&manifest), "--sample", "s00003", "--out", s(&obj)]);
    assert!(parse_obj(&std::fs::read_to_string(&obj).unwrap()).is_ok());
}
