use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tracerseg")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["evaluate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn pipeline_without_config_is_a_usage_error() {
    assert_eq!(run(&["pipeline"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let out = run(&["evaluate", "--pred", "/nonexistent/a.nii", "--gt", "/nonexistent/b.nii"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phantom_classify_and_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = run(&["phantom", "--fdg", "1", "--psma", "1", "--seed", "5", "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.jsonl").is_file());

    let lesions = data.join("phantom000_lesions.nii.gz");
    let out = run(&["evaluate", "--pred", s(&lesions), "--gt", s(&lesions), "--id", "p0"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(v["dice"], 1.0);
    assert_eq!(v["fpvol_ml"], 0.0);
    assert_eq!(v["fnvol_ml"], 0.0);
}

#[test]
fn end_to_end_pipeline_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let train = dir.join("train");
    let data = dir.join("data");
    assert!(run(&["phantom", "--fdg", "4", "--psma", "4", "--seed", "100", "--out", s(&train)]).status.success());
    assert!(run(&["phantom", "--fdg", "2", "--psma", "2", "--seed", "200", "--out", s(&data)]).status.success());

    let model = dir.join("classifier.json");
    let out = run(&["fit-classifier", "--manifest", s(&train.join("manifest.jsonl")), "--out", s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let toy_cfg = dir.join("toy.toml");
    std::fs::write(&toy_cfg, "[network]\npatch_size = [16, 16, 16]\nwidths = [2, 2]\nlevels = 2\n\n[train]\npatches_per_case = 1\n").unwrap();
    let ckpt = dir.join("toy.ckpt");
    let out = run(&[
        "train-toy", "--manifest", s(&train.join("manifest.jsonl")), "--config", s(&toy_cfg), "--epochs", "2", "--out", s(&ckpt),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);

    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        "manifest = \"data/manifest.jsonl\"\noutput_dir = \"out\"\nseed = 1\n\n[classifier]\nmodel = \"classifier.json\"\n\n[segmenter]\ncheckpoint = \"toy.ckpt\"\n",
    )
    .unwrap();
    let out = run(&["pipeline", "--config", s(&cfg), "--workers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("routing: 4/4"));
    for f in ["report.jsonl", "summary.txt", "predictions/phantom000_pred.nii.gz"] {
        assert!(dir.join("out").join(f).is_file(), "{f}");
    }

    let seg = dir.join("seg.nii.gz");
    let out = run(&[
        "segment", "--pet", s(&data.join("phantom002_pet.nii.gz")), "--ct", s(&data.join("phantom002_ct.nii.gz")),
        "--checkpoint", s(&ckpt), "--tracer", "psma", "--out", s(&seg),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(seg.is_file());

    let fused = dir.join("fused.nii.gz");
    let part = |p: &str| data.join(format!("phantom000_{p}.nii.gz"));
    let out = run(&[
        "fuse-labels", "--bones", s(&part("bones")), "--organs", s(&part("organs")), "--lesions", s(&part("lesions")),
        "--out", s(&fused),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let schema = std::fs::read_to_string(dir.join("fused_schema.txt")).unwrap();
    assert!(schema.starts_with("0\t") && schema.contains("\n1\t"));

    let pp = dir.join("pp");
    let out = run(&["preprocess", "--pet", s(&part("pet")), "--ct", s(&part("ct")), "--tracer", "fdg", "--out", s(&pp)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(&["classify", "--pet", s(&part("pet")), "--model", s(&model)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["tracer"], "FDG");
}
