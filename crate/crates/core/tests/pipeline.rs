use std::fs;
use std::path::Path;

use aria_core::bench::{classify_regime, default_layout, generate_matrix, write_simulation, PlantedSpec, Regime};
use aria_core::pipeline::run_config;
use aria_core::reliability::{diagnose, DiagnoseConfig};
use serde_json::Value;

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn diagnose_only_config_on_small_csv() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("m.csv"),
        "row_id,q0,q1,q2\nr0,1,2,0.5\nr1,2,1,1.5\nr2,0,3,-1\nr3,4,0.5,2\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"output_dir":"out","settings":[{"method":"TRAK","stage":"final","matrix":"m.csv"}]}"#,
    )
    .unwrap();
    let out = run_config(&dir.path().join("run.json"), None).unwrap();
    let report = read_json(&out.join("TRAK__final/report.json"));
    let rel = &report["reliability"];
    assert!(rel["kappa"].as_f64().unwrap() > 0.0);
    assert_eq!(rel["energy_ratios"].as_array().unwrap().len(), 3);
    assert!(rel["p"].as_f64().unwrap() > 0.0);
    assert_eq!(report["normalization"], "zscore");
    assert_eq!(report["precision"], "f64");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(report.get("homogeneity").is_none());
    assert_eq!(csv_rows(&out.join("reliability.csv")).len(), 1);
}

#[test]
fn full_bench_config_emits_paired_rows_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PlantedSpec {
        m: 1200,
        t: 12,
        n: 600,
        planted_size: 60,
        ..PlantedSpec::default()
    };
    write_simulation(&spec, &default_layout(), &dir.path().join("bench/")).unwrap();
    let labels: String = (0..12).map(|j| format!("q{j:05},{}\n", ["rock", "jazz"][j % 2])).collect();
    fs::write(dir.path().join("labels.csv"), format!("query_id,label\n{labels}")).unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{
            "output_dir": "out",
            "features": "bench/features/manifest.json",
            "segment_map": "bench/segments.csv",
            "labels": "labels.csv",
            "b": 20,
            "stages": ["diagnose", "homogeneity", "align", "residual-sweep", "stratify"],
            "materialize_residual": false,
            "settings": [
                {"method": "TRAK", "stage": "a", "matrix": "bench/matrix.asm1"},
                {"method": "LoGra", "stage": "a", "matrix": "bench/matrix.asm1"}
            ]
        }"#,
    )
    .unwrap();
    let cfg = dir.path().join("run.json");
    let out = run_config(&cfg, None).unwrap();

    let paired = csv_rows(&out.join("residual_sweep.csv"));
    assert_eq!(paired.len(), 2 * 7 * 3);
    let homog = csv_rows(&out.join("homogeneity.csv"));
    assert_eq!(homog.len(), 2 * 7 * 3);
    assert_eq!(csv_rows(&out.join("strata.csv")).len(), 2 * 7 * 3 * 2);
    assert_eq!(csv_rows(&out.join("alignment.csv")).len(), 2 * 3);
    for row in paired.iter().filter(|r| r[3].parse::<usize>().unwrap() <= 50) {
        let (orig, resid): (f64, f64) = (row[4].parse().unwrap(), row[7].parse().unwrap());
        assert!(orig > resid, "{row:?}");
    }
    let report = read_json(&out.join("LoGra__a/report.json"));
    assert_eq!(report["normalization"], "rank");
    assert_eq!(report["seed"], 7);
    assert!(report["conventions"]["std"].is_string());

    let first = dir_bytes(&out);
    run_config(&cfg, None).unwrap();
    assert_eq!(first, dir_bytes(&out));
}

#[test]
fn every_regime_is_recovered_on_every_seed() {
    for regime in [Regime::CollapsedRank1, Regime::OffsetDominated, Regime::QueryDependent, Regime::IidNoise] {
        for seed in 0..100 {
            let spec = PlantedSpec {
                m: 400,
                t: 32,
                n: 200,
                planted_size: 20,
                regime,
                seed,
                ..PlantedSpec::default()
            };
            let pm = generate_matrix(&spec).unwrap();
            let d = diagnose(&pm.matrix, &DiagnoseConfig::default()).unwrap();
            assert_eq!(classify_regime(d.r1, d.p, d.kappa), pm.truth.expected_regime, "{regime} seed {seed}");
        }
    }
}

#[test]
fn missing_input_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"output_dir":"out","settings":[{"method":"TRAK","stage":"s","matrix":"absent.asm1"}]}"#,
    )
    .unwrap();
    let err = run_config(&dir.path().join("run.json"), None).unwrap_err();
    assert!(err.to_string().contains("absent.asm1"), "{err}");
    assert!(!err.is_numeric());
}
