mod pipeline;

use dyadic::analysis::read_spikes_csv;
use dyadic_cli::manifest::{read_manifest, MANIFEST_FILE};
use dyadic_cli::report::{Report, REPORT_JSON};
use pipeline::*;
use std::fs;

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(dyadic(&["--help"]).status.code(), Some(0));
    assert_eq!(dyadic(&["segment", "--help"]).status.code(), Some(0));
    assert_eq!(dyadic(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dyadic(&["embed"]).status.code(), Some(2));
}

#[test]
fn config_errors_name_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[windowing]\nwindow_size = -3\n[peth]\nbin_s = 0.0\n[bogus]\nx = 1\n",
    )
    .unwrap();
    let out = dyadic(&[
        "-c",
        cfg.to_str().unwrap(),
        "synth",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for field in ["windowing.window_size", "peth.bin_s", "bogus"] {
        assert!(err.contains(field), "{field} missing from: {err}");
    }
}

#[test]
fn missing_artifact_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = smoke_config();
    let out = dyadic(&[
        "-c",
        c.to_str().unwrap(),
        "prototypes",
        "--segment",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("p").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("segment.json"));
}

#[test]
fn smoke_pipeline_writes_reloadable_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let stages = run_pipeline(root.path(), &smoke_config());
    for dir in &stages {
        let m = read_manifest(&dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.seed, 7);
        for o in &m.outputs {
            let bytes = fs::read(dir.join(&o.name)).unwrap();
            assert_eq!(bytes.len() as u64, o.bytes, "{}", o.name);
        }
    }
    let report_dir = stages.last().unwrap();
    let report = Report::read_json(&report_dir.join(REPORT_JSON)).unwrap();
    assert_eq!(report.n_prototypes, report.prototypes.len());
    assert_eq!(report.labels.len(), report.n_prototypes + 1);
    let again: Report = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(again, report);
    // Synthetic data carries planted labels, so coverage is reported.
    let cov = report.coverage.as_ref().expect("coverage");
    assert_eq!(cov.f1.len(), report.n_prototypes);
    let csv = fs::read_to_string(report_dir.join("coverage.csv")).unwrap();
    assert_eq!(csv.lines().count(), report.n_prototypes + 1);
    assert!(report.nmi.is_some_and(|v| (0.0..=1.0).contains(&v)));
    for t in &report.transitions {
        for (i, row) in t.matrix.probs.iter().enumerate() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9 || t.matrix.empty_rows.contains(&i));
        }
    }
}

#[test]
fn single_state_catalog_gives_zero_prototypes() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("one.toml");
    let text = fs::read_to_string(smoke_config())
        .unwrap()
        .replace("k_min = 2\nk_max = 5", "k_min = 1\nk_max = 1");
    fs::write(&cfg, text).unwrap();
    let stages = run_pipeline(root.path(), &cfg);
    let report = Report::read_json(&stages.last().unwrap().join(REPORT_JSON)).unwrap();
    assert_eq!(report.n_prototypes, 0);
    assert!(report.notes.iter().any(|n| n.contains("zero prototypes")));
}

#[test]
fn peth_aligns_spikes_to_prototype_onsets() {
    let root = tempfile::tempdir().unwrap();
    let stages = run_pipeline(root.path(), &smoke_config());
    let proto = &stages[4];
    let labels = fs::read_dir(proto)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".prototypes.csv"))
        .expect("a label series");
    let spikes = root.path().join("spikes.csv");
    let rows: String = (0..200)
        .map(|i| format!("u1,{}\nu2,{}\n", i as f64 * 0.1, i as f64 * 0.1 + 0.05))
        .collect();
    fs::write(&spikes, format!("unit,timestamp_s\n{rows}")).unwrap();
    let out = root.path().join("peth");
    let c = smoke_config();
    ok(&[
        "-c",
        c.to_str().unwrap(),
        "peth",
        "--labels",
        labels.to_str().unwrap(),
        "--spikes",
        spikes.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("peth.json").exists());
    assert_eq!(read_spikes_csv(&spikes, None).unwrap().len(), 2);
}
