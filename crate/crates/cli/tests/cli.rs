use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tinytrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tinytrack"))
        .args(args)
        .output()
        .expect("spawn tinytrack")
}

fn ok(args: &[&str]) -> String {
    let out = tinytrack(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_scene(dir: &Path, frames: usize) -> String {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        format!(
            r#"{{"width": 320, "height": 240, "frame_count": {frames},
                "target": {{"start": [60, 120], "velocity": [2.0, 0.2], "wiggle_amplitude": [0, 0]}},
                "distractors": {{"count": 3}}}}"#
        ),
    )
    .unwrap();
    let seq = dir.join("seq");
    ok(&["synth", "--spec", spec.to_str().unwrap(), "--out", seq.to_str().unwrap()]);
    seq.to_str().unwrap().to_string()
}

#[test]
fn version_prints_name() {
    assert!(ok(&["version"]).starts_with("tinytrack "));
}

#[test]
fn synth_writes_frames_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let seq = small_scene(dir.path(), 12);
    let pgms = fs::read_dir(&seq)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgms, 12);
    let gt = fs::read_to_string(Path::new(&seq).join("gt.csv")).unwrap();
    assert_eq!(gt.lines().count(), 12);
    assert!(gt.starts_with("0,58,118.5,4,3"));
}

#[test]
fn run_is_deterministic_and_evaluates_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let seq = small_scene(dir.path(), 40);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["run", "--input", &seq, "--detector", "mock", "--out", out.to_str().unwrap(), "--seed", "5"]);
    }
    let ja = fs::read(a.join("detections.jsonl")).unwrap();
    let jb = fs::read(b.join("detections.jsonl")).unwrap();
    assert_eq!(ja, jb);
    assert_eq!(String::from_utf8_lossy(&ja).lines().count(), 40);

    let gt = Path::new(&seq).join("gt.csv");
    let report = ok(&[
        "eval",
        "--pred",
        a.join("detections.jsonl").to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
        "--iou-threshold",
        "0.1",
    ]);
    assert!(report.contains("recall: 1.000000"), "{report}");
    assert!(report.contains("precision: 1.000000"), "{report}");
}

#[test]
fn eval_of_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.csv");
    fs::write(&gt, "0,10,10,4,3\n1,12,10,4,3\n").unwrap();
    let pred = dir.path().join("pred.csv");
    fs::write(&pred, "0,10,10,4,3,0.9,0\n1,12,10,4,3,0.7,0\n").unwrap();
    let out = dir.path().join("report");
    let text = ok(&[
        "eval",
        "--pred",
        pred.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    for key in ["precision", "recall", "f1", "ap"] {
        assert!(text.contains(&format!("{key}: 1.000000")), "{text}");
    }
    assert!(out.join("report.txt").exists() && out.join("pr_curve.csv").exists());
}

#[test]
fn below_gate_scores_never_emit_global_yolo() {
    let dir = tempfile::tempdir().unwrap();
    let seq = small_scene(dir.path(), 30);
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"detector": {"kind": "mock", "config": {"score_base": 0.25, "score_jitter": 0.04}}}"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    ok(&["run", "--config", cfg.to_str().unwrap(), "--input", &seq, "--out", out.to_str().unwrap()]);
    let rows = fs::read_to_string(out.join("detections.jsonl")).unwrap();
    assert!(!rows.contains("GlobalYolo"));
    assert!(rows.lines().count() > 10);
}

#[test]
fn file_detector_and_annotation() {
    let dir = tempfile::tempdir().unwrap();
    let seq = small_scene(dir.path(), 5);
    let dets = dir.path().join("dets.csv");
    fs::write(&dets, "2,50,60,4,4,0.9,0\n").unwrap();
    let out = dir.path().join("run");
    ok(&[
        "run",
        "--input",
        &seq,
        "--detector",
        "file",
        "--detections-file",
        dets.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--annotate",
    ]);
    let rows = fs::read_to_string(out.join("detections.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 1);
    assert!(rows.starts_with(r#"{"frame":2,"x":50.0,"y":60.0"#));
    assert_eq!(fs::read_dir(out.join("annotated")).unwrap().count(), 5);
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"frames\": 5"));
}

#[test]
fn bad_inputs_fail_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = tinytrack(&["run", "--input", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no images"));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "0,1,2\n").unwrap();
    let out = tinytrack(&["eval", "--pred", bad.to_str().unwrap(), "--gt", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1:"));
}
