use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use es_qfi::cli::{ErrorReport, ModelReport, SnrReport};
use es_qfi::estimation::TrialReport;
use es_qfi::optimize::SweepGrid;
use es_qfi::QfiResult;

fn es_qfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_es-qfi")).args(args).output().expect("binary runs")
}

fn es_qfi_threads(threads: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_es-qfi"))
        .env("ES_QFI_THREADS", threads)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn noon_oqfi_headline() {
    let o = es_qfi(&["oqfi", "--state", "noon", "--n", "2", "--rho", "1", "--phi", "0.7853981633974483", "--epsilon", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let r: QfiResult = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((r.value - 432.0).abs() < 1e-6);
    assert!(stderr(&o).starts_with("oqfi = 43"), "{}", stderr(&o));
}

#[test]
fn model_transfer_matrix_and_pole() {
    let o = es_qfi(&["model", "--rho", "0", "--epsilon", "0", "--omega", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let r: ModelReport = serde_json::from_str(&stdout(&o)).unwrap();
    let k = r.k.unwrap();
    assert!((k[0][1][0] + 1.0).abs() < 1e-14 && (k[1][0][0] + 1.0).abs() < 1e-14);
    assert!(k[0][0][0].abs() < 1e-14 && k[1][1][0].abs() < 1e-14);
    assert!(!r.singular);

    let o = es_qfi(&["model", "--rho", "1", "--phi", "0.7853981633974483", "--epsilon", "-0.5", "--omega", "0"]);
    assert_eq!(o.status.code(), Some(3));
    let r: ModelReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(r.singular);
    assert!(r.k.is_none());
    // the report re-parses into the same values
    let again: ModelReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(again, r);
}

#[test]
fn exit_codes() {
    let o = es_qfi(&["oqfi", "--rho", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let e: ErrorReport = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!((e.error.as_str(), e.singular, e.exit_code), ("invalid_params", false, 2));
    assert_eq!(es_qfi(&["sweep", "--rho", "0:1"]).status.code(), Some(2));
    assert_eq!(es_qfi(&["unknown-subcommand"]).status.code(), Some(2));
    assert_eq!(es_qfi_threads("many", &["oqfi"]).status.code(), Some(2));
    let o = es_qfi(&["qfi", "--rho", "1", "--phi-over-pi", "0.25", "--epsilon", "-0.5", "--omega", "0"]);
    assert_eq!(o.status.code(), Some(3));
    let e: ErrorReport = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert!(e.singular);
}

#[test]
fn sweep_extremes_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.csv");
    let o = es_qfi(&[
        "sweep", "--state", "coherent", "--nbar", "2", "--rho", "0:1:101", "--phi", "0:3.14159:101", "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("sweep oqfi: max = 512"), "{}", stdout(&o));
    let grid = SweepGrid::from_csv(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(grid.values.len(), 101 * 101);
    assert!((grid.finite_max().unwrap() - 512.0).abs() < 1e-8);
    assert!((grid.finite_min().unwrap() - 128.0).abs() < 1e-8);
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1, "temporary files left behind");
}

#[test]
fn failed_runs_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.csv");
    let o = es_qfi(&["sweep", "--rho", "0:1.5:5", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str, args: &[&str]| {
        let path = dir.path().join(name);
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--out", path_str(&path)]);
        let o = es_qfi_threads(threads, &full);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(path).unwrap()
    };
    let sweep = ["sweep", "--state", "noon", "--n", "2", "--rho", "0:1:9", "--phi", "0:3.14159:9", "--format", "json"];
    let landscape = ["landscape", "--rho", "1", "--phi-over-pi", "0.25", "--omega", "-1:1:41", "--epsilon", "-1:0:21"];
    let sim = ["simulate", "--scheme", "noon", "--rho", "1", "--phi-over-pi", "0.25", "--n", "2", "--m", "30000"];
    for (i, args) in [&sweep[..], &landscape[..], &sim[..]].into_iter().enumerate() {
        let a = run(&format!("a{i}"), "1", args);
        let b = run(&format!("b{i}"), "1", args);
        let c = run(&format!("c{i}"), "4", args);
        assert!(!a.is_empty());
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
    let grid = SweepGrid::from_json(&String::from_utf8(run("g", "0", &sweep)).unwrap()).unwrap();
    assert_eq!(grid.values.len(), 81);
}

#[test]
fn homodyne_simulation_saturates() {
    let o = es_qfi(&["simulate", "--scheme", "homodyne", "--m", "100000", "--seed", "42", "--rho", "1", "--nbar", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let r: TrialReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((r.m_trials, r.rng_seed), (100_000, 42));
    assert!((r.ratio - 1.0).abs() <= 5.0 * r.sigma_stat);
    assert!(stderr(&o).contains("ratio = "));
}

#[test]
fn batches_append_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("runs.jsonl");
    let args = ["simulate", "--rho", "1", "--m", "1000", "--batch", "3", "--jsonl", path_str(&log)];
    assert_eq!(es_qfi(&args).status.code(), Some(0));
    assert_eq!(es_qfi(&args).status.code(), Some(0));
    let text = fs::read_to_string(&log).unwrap();
    let reports: Vec<TrialReport> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 6);
    assert_eq!(reports.iter().map(|r| r.rng_seed).collect::<Vec<_>>(), [42, 43, 44, 42, 43, 44]);
    assert_eq!(reports[0], reports[3]);
    assert_ne!(reports[0].mse, reports[1].mse);
}

#[test]
fn run_config_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"subcommand": "oqfi", "args": {"params": {"rho": 1, "phi_over_pi": 0.25}, "state": {"state": "noon", "n": 2}}}"#,
    )
    .unwrap();
    let from_config = es_qfi(&["run", "--config", path_str(&cfg)]);
    let from_flags = es_qfi(&["oqfi", "--rho", "1", "--phi-over-pi", "0.25", "--state", "noon", "--n", "2"]);
    assert_eq!(from_config.status.code(), Some(0));
    assert_eq!(from_config.stdout, from_flags.stdout);

    fs::write(&cfg, r#"{"subcommand": "oqfi", "args": {"params": {"rho": 1, "colour": 2}}}"#).unwrap();
    assert_eq!(es_qfi(&["run", "--config", path_str(&cfg)]).status.code(), Some(2));
}

#[test]
fn snr_and_scan() {
    let o = es_qfi(&["snr", "--rho", "1", "--nbar", "1", "--delta", "1e-3"]);
    let r: SnrReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((r.snr - 256e-6).abs() < 1e-15);
    let o = es_qfi(&["scan", "--rho", "1", "--phi-over-pi", "0.25", "--epsilon", "-0.4:0:5", "--state", "noon", "--n", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let scan: es_qfi::optimize::OffsurfaceScan = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(scan.increases_toward(-0.5));
    assert!(scan.value_at(-0.4).unwrap() > scan.value_at(0.0).unwrap());
}

#[test]
fn gamma_rescaling() {
    let o = es_qfi(&["oqfi", "--gamma", "2", "--rho", "1", "--nbar", "2"]);
    let r: QfiResult = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((r.value - 128.0).abs() < 1e-8);
}
