use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn affcut(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affcut"))
        .args(args)
        .current_dir(cwd)
        .env("AFFCUT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, spec: &str, count: u64) {
    fs::write(dir.join("spec.json"), spec).unwrap();
    ok(&affcut(&["synth", "--spec", "spec.json", "--count", &count.to_string(), "-o", "gt"], dir));
}

fn partition_all(dir: &Path, out: &str, extra: &[&str], count: u64) {
    for i in 0..count {
        let scene = format!("gt/scene_{i:04}/pyramid");
        let target = format!("{out}/scene_{i:04}");
        let mut args = vec!["partition", scene.as_str(), "-o", target.as_str()];
        args.extend_from_slice(extra);
        ok(&affcut(&args, dir));
    }
}

fn mean_ap(dir: &Path, pred: &str) -> f64 {
    ok(&affcut(&["eval", "--pred", pred, "--gt", "gt", "-o", "report.json"], dir));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    report["mean_ap"].as_f64().unwrap()
}

#[test]
fn noise_free_scenes_are_recovered_exactly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"seed": 40}"#, 3);
    partition_all(dir.path(), "pred", &[], 3);
    assert_eq!(mean_ap(dir.path(), "pred"), 1.0);
}

#[test]
fn disabling_pa_gaec_hurts_occluded_scenes() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"seed": 50, "occluder_probability": 1.0}"#, 3);
    partition_all(dir.path(), "with", &[], 3);
    partition_all(dir.path(), "without", &["--no-pa-gaec"], 3);
    let a = fs::read(dir.path().join("with/scene_0000/segments.json")).unwrap();
    let b = fs::read(dir.path().join("without/scene_0000/segments.json")).unwrap();
    assert_ne!(a, b);
    assert!(mean_ap(dir.path(), "with") > mean_ap(dir.path(), "without"));
}

#[test]
fn partition_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"seed": 60, "noise": {"jitter": 0.05, "embedding_sigma": 0.05}}"#, 1);
    let run = |out: &str| {
        ok(&affcut(&["partition", "gt/pyramid", "--gas", "--seed", "3", "-o", out], dir.path()));
        (
            fs::read(dir.path().join(out).join("segments.json")).unwrap(),
            fs::read(dir.path().join(out).join("labels.pgm")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&affcut(&["bench", "--sizes", "128,256", "--repeats", "2", "-o", "t.csv"], dir.path()));
    let csv = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "pixels,seconds_median,seconds_p95");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("16384,"));
    assert!(stdout.contains("slope"));
}

#[test]
fn oracle_solves_edge_lists() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("e.txt"), "# triangle\n0 1 -1\n1 2 0.6\n0 2 0.6\n").unwrap();
    let out: serde_json::Value = serde_json::from_str(&ok(&affcut(&["oracle", "e.txt"], dir.path()))).unwrap();
    assert_eq!(out["partition"], serde_json::json!([0, 1, 0]));
    assert!((out["cost"].as_f64().unwrap() + 0.4).abs() < 1e-12);

    let capped = affcut(&["oracle", "e.txt", "--cap", "2"], dir.path());
    assert_eq!(capped.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&capped.stderr).contains("cap"));
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(affcut(&["partition"], dir.path()).status.code(), Some(2));
    assert_eq!(affcut(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn corrupt_container_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"height": 256, "width": 256, "min_instances": 1, "max_instances": 3}"#, 1);
    let blob = dir.path().join("gt/pyramid/level3_affinity.f32");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() / 2]).unwrap();
    let out = affcut(&["partition", "gt/pyramid", "-o", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("level3_affinity.f32"));
    assert!(!dir.path().join("out").exists());
}
