use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aria(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aria"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn simulate(dir: &Path) {
    let out = aria(
        dir,
        &["simulate", "--m", "600", "--t", "16", "--n", "300", "--planted-size", "40", "--seed", "3", "--out-prefix", "bench/"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_then_diagnose_flags_collapse() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let truth = json(&dir.path().join("bench/truth.json"));
    assert_eq!(truth["regime"], "collapsed-rank1");
    let out = aria(dir.path(), &["diagnose", "--matrix", "bench/matrix.asm1", "--out", "d.json"]);
    assert_eq!(out.status.code(), Some(0));
    let r = &json(&dir.path().join("d.json"))["reliability"];
    assert!(r["r1"].as_f64().unwrap() > 0.8);
    assert!(r["kappa"].as_f64().unwrap() > 0.8);
}

#[test]
fn homogeneity_and_residual_sweep_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let common = [
        "--matrix",
        "bench/matrix.asm1",
        "--segmap",
        "bench/segments.csv",
        "--features",
        "bench/features/manifest.json",
        "--K",
        "10,30",
        "--B",
        "30",
    ];
    let mut args = vec!["homogeneity", "--method", "TRAK", "--out", "h.json"];
    args.extend(common);
    let out = aria(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert_eq!(json(&dir.path().join("h.json"))["normalization"], "zscore");

    let mut args = vec!["residual-sweep", "--normalize", "rank", "--out", "rs.json", "--residual-out", "r.asm1"];
    args.extend(common);
    let out = aria(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("rs.csv")).unwrap();
    assert!(csv.starts_with("channel,k,original_mean_z"));
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(dir.path().join("r.asm1").exists());
}

#[test]
fn unknown_method_without_normalize_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let out = aria(
        dir.path(),
        &["homogeneity", "--matrix", "bench/matrix.asm1", "--features", "bench/features/manifest.json", "--method", "Mystery"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_matrix_residual_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("z.csv"), "row_id,q0,q1\na,0,0\nb,0,0\n").unwrap();
    let out = aria(dir.path(), &["residual", "--matrix", "z.csv", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_and_missing_files_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(aria(dir.path(), &["diagnose", "--bogus"]).status.code(), Some(1));
    assert_eq!(aria(dir.path(), &["diagnose", "--matrix", "none.asm1"]).status.code(), Some(1));
    assert_eq!(aria(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn residual_and_align_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.csv"), "row_id,q0,q1\na,3,0\nb,4,0\nc,0,1\n").unwrap();
    let out = aria(dir.path(), &["residual", "--matrix", "s.csv", "--out", "r.csv"]);
    assert!(out.status.success());
    let r = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let vals: Vec<f64> = r.lines().skip(1).flat_map(|l| l.split(',').skip(1).map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>()).collect();
    let want = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    assert!(vals.iter().zip(want).all(|(g, w)| (g - w).abs() < 1e-12), "{vals:?}");

    simulate(dir.path());
    let out = aria(
        dir.path(),
        &["align", "--matrix", "bench/matrix.asm1", "--features", "bench/features/manifest.json", "--out", "a.json"],
    );
    // Segment ids are not track ids, so the features cannot be matched.
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn score_embeddings_and_run_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("q.csv"), "id,d0,d1\nq0,1,0\nq1,0,1\nq2,1,1\n").unwrap();
    fs::write(dir.path().join("t.csv"), "id,d0,d1\nt0,2,0\nt1,0,3\nt2,1,2\nt3,-1,1\n").unwrap();
    let out = aria(dir.path(), &["score-embeddings", "--queries", "q.csv", "--tracks", "t.csv", "--out", "e.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let e = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert!(e.lines().nth(1).unwrap().starts_with("t0,1,0,"));

    fs::write(
        dir.path().join("run.json"),
        r#"{"settings":[{"method":"CLAP","stage":"emb","matrix":"e.csv"}]}"#,
    )
    .unwrap();
    let out = aria(dir.path(), &["run", "run.json", "--out", "res"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("res/CLAP__emb/report.json").exists());

    fs::write(dir.path().join("bad.json"), r#"{"settings":[{"method":"CLAP","stage":"emb","matrix":"e.csv","extra":1}]}"#).unwrap();
    let out = aria(dir.path(), &["run", "bad.json", "--out", "res2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("settings[0]"));
}
