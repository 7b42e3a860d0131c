use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use funcreg_cli::benchmark::{run_benchmark, BenchmarkConfig};
use funcreg_cli::commands::{load_model, SimulationManifest};
use funcreg_cli::config::Method;
use funcreg_cli::csv_io::read_sample;
use funcreg_cli::persist::load_json;
use funcreg_core::flmfr::fit_flmfr;
use funcreg_core::simgen::ScenarioKind;
use funcreg_core::FunctionalRegressor;

fn funcreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_funcreg"))
        .args(args)
        .env_remove("FUNCREG_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = funcreg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = funcreg(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, scenario: &str, covariates: usize, seed: u64) -> PathBuf {
    ok(&[
        "simulate",
        "--scenario",
        scenario,
        "--n",
        "60",
        "--covariates",
        &covariates.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(dir),
    ]);
    dir.to_path_buf()
}

#[test]
fn simulate_writes_files_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        ok(&[
            "simulate",
            "--scenario",
            "LS",
            "--n",
            "100",
            "--covariates",
            "2",
            "--seed",
            "7",
            "--out",
            s(d),
        ]);
    }
    let names = [
        "X1_train.csv",
        "X2_train.csv",
        "Y_train.csv",
        "X1_test.csv",
        "X2_test.csv",
        "Y_test.csv",
        "signal_train.csv",
        "signal_test.csv",
        "manifest.json",
    ];
    for name in names {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let manifest: SimulationManifest = load_json(&a.join("manifest.json")).unwrap();
    assert_eq!(manifest.spec.seed, 7);
    assert_eq!(manifest.files.x_train.len(), 2);
    assert!(manifest.c_rho > 0.0);

    let header = fs::read_to_string(a.join("Y_train.csv")).unwrap();
    let first = header.lines().next().unwrap();
    assert!(
        first.starts_with("id,t=0.0,t=0.014285714285714285,"),
        "{first}"
    );
    assert_eq!(header.lines().count(), 101);
}

#[test]
fn emitted_noise_has_the_calibrated_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "NLNS", 2, 3);
    let y = read_sample(&dir.join("Y_train.csv")).unwrap();
    let m = read_sample(&dir.join("signal_train.csv")).unwrap();
    let noise = y.sub(&m).unwrap();
    let ratio = noise.total_energy() / m.energy_about(&m.mean_curve()).unwrap();
    // (1 - ρ²)/ρ² at ρ² = 0.8; the subtraction costs a few ulps per value
    assert!((ratio - 0.25).abs() < 1e-9, "{ratio}");
}

#[test]
fn invalid_simulation_flags_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let err = fails_with(
        &[
            "simulate",
            "--scenario",
            "LS",
            "--rho2",
            "1.5",
            "--out",
            s(tmp.path()),
        ],
        2,
    );
    assert!(err.contains("rho2"), "{err}");
    fails_with(&["simulate", "--scenario", "XX", "--out", s(tmp.path())], 2);
    let err = fails_with(
        &[
            "simulate",
            "--scenario",
            "LS",
            "--rho2",
            "0",
            "--covariates",
            "3",
            "--out",
            s(tmp.path()),
        ],
        2,
    );
    assert!(
        err.contains("rho2") && err.contains("n_covariates"),
        "{err}"
    );
}

#[test]
fn saved_models_predict_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(&tmp.path().join("data"), "LNS", 2, 5);
    let x1 = dir.join("X1_train.csv");
    let x2 = dir.join("X2_train.csv");
    for method in ["flmfr", "fsamfr", "fkamfr"] {
        let model = tmp.path().join(format!("{method}.json"));
        let fitted = tmp.path().join(format!("{method}_fitted.csv"));
        let pred = tmp.path().join(format!("{method}_pred.csv"));
        let out = ok(&[
            "fit",
            "--method",
            method,
            "--y",
            s(&dir.join("Y_train.csv")),
            "--x",
            s(&x1),
            s(&x2),
            "--out",
            s(&model),
            "--fitted",
            s(&fitted),
        ]);
        assert!(out.contains("R²ₑ"), "{out}");
        ok(&[
            "predict",
            "--model",
            s(&model),
            "--x",
            s(&x1),
            s(&x2),
            "--out",
            s(&pred),
        ]);
        assert_eq!(
            fs::read(&fitted).unwrap(),
            fs::read(&pred).unwrap(),
            "{method}"
        );
        let loaded = load_model(&model).unwrap();
        assert_eq!(loaded.model.method().name(), method);
        assert_eq!(loaded.format_version, 1);
    }

    // the file reproduces the in-memory fit
    let y = read_sample(&dir.join("Y_train.csv")).unwrap();
    let xs = vec![read_sample(&x1).unwrap(), read_sample(&x2).unwrap()];
    let direct = fit_flmfr(&y, &xs, &Default::default())
        .unwrap()
        .predict(&xs)
        .unwrap();
    let from_file = read_sample(&tmp.path().join("flmfr_pred.csv")).unwrap();
    for (a, b) in direct.values().iter().zip(from_file.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn broken_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(&tmp.path().join("data"), "LS", 1, 9);
    let missing = tmp.path().join("nope.csv");
    let model = tmp.path().join("m.json");
    let err = fails_with(
        &[
            "fit",
            "--method",
            "flmfr",
            "--y",
            s(&dir.join("Y_train.csv")),
            "--x",
            s(&missing),
            "--out",
            s(&model),
        ],
        1,
    );
    assert!(err.contains("nope.csv"), "{err}");

    let err = fails_with(
        &[
            "fit",
            "--method",
            "flmfr",
            "--y",
            s(&dir.join("Y_train.csv")),
            "--x",
            s(&dir.join("X1_train.csv")),
            "--pve",
            "1.5",
            "--k",
            "0",
            "--out",
            s(&model),
        ],
        2,
    );
    assert!(err.contains("--pve") && err.contains("--k"), "{err}");

    ok(&[
        "fit",
        "--method",
        "flmfr",
        "--y",
        s(&dir.join("Y_train.csv")),
        "--x",
        s(&dir.join("X1_train.csv")),
        "--out",
        s(&model),
    ]);
    let text = fs::read_to_string(&model).unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        text.replacen("\"eigenvalues\"", "\"eigen_values\"", 1),
    )
    .unwrap();
    let err = fails_with(
        &[
            "predict",
            "--model",
            s(&bad),
            "--x",
            s(&dir.join("X1_test.csv")),
            "--out",
            s(&tmp.path().join("p.csv")),
        ],
        1,
    );
    assert!(err.contains("model.parameters.response_basis"), "{err}");
    fs::write(
        &bad,
        text.replacen("\"format_version\": 1", "\"format_version\": 7", 1),
    )
    .unwrap();
    let err = fails_with(
        &[
            "predict",
            "--model",
            s(&bad),
            "--x",
            s(&dir.join("X1_test.csv")),
            "--out",
            s(&tmp.path().join("p.csv")),
        ],
        1,
    );
    assert!(err.contains("format_version 7"), "{err}");

    let csv = tmp.path().join("broken.csv");
    fs::write(&csv, "id,t=0,t=1\na,1,2\nb,3,oops\n").unwrap();
    let err = fails_with(&["dcor", "--a", s(&csv), "--b", s(&csv)], 1);
    assert!(err.contains("broken.csv:3"), "{err}");

    // grid mismatch between model and new data
    let other = simulate(&tmp.path().join("other"), "LS", 2, 9);
    let err = fails_with(
        &[
            "predict",
            "--model",
            s(&model),
            "--x",
            s(&other.join("X1_test.csv")),
            s(&other.join("X2_test.csv")),
            "--out",
            s(&tmp.path().join("p.csv")),
        ],
        1,
    );
    assert!(err.contains("covariates"), "{err}");
}

#[test]
fn pipeline_matches_in_process_benchmark() {
    let config = BenchmarkConfig {
        scenarios: vec![ScenarioKind::Nls],
        methods: vec![Method::Flmfr],
        replications: 2,
        seed: 31,
        ..Default::default()
    };
    let report = run_benchmark(&config).unwrap();
    let rep = &report.replications[1];
    let (_, r2_p) = rep.outcome.clone().unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&[
        "simulate",
        "--scenario",
        "NLS",
        "--seed",
        &rep.seed.to_string(),
        "--out",
        s(dir),
    ]);
    let model = dir.join("m.json");
    let pred = dir.join("pred.csv");
    ok(&[
        "fit",
        "--method",
        "flmfr",
        "--y",
        s(&dir.join("Y_train.csv")),
        "--x",
        s(&dir.join("X1_train.csv")),
        s(&dir.join("X2_train.csv")),
        "--out",
        s(&model),
    ]);
    ok(&[
        "predict",
        "--model",
        s(&model),
        "--x",
        s(&dir.join("X1_test.csv")),
        s(&dir.join("X2_test.csv")),
        "--out",
        s(&pred),
    ]);
    let json = dir.join("eval.json");
    ok(&[
        "evaluate",
        "--truth",
        s(&dir.join("Y_test.csv")),
        "--pred",
        s(&pred),
        "--reference",
        s(&dir.join("Y_train.csv")),
        "--out",
        s(&json),
    ]);
    let eval: funcreg_cli::commands::EvaluationReport = load_json(&json).unwrap();
    assert_eq!(eval.r2.to_bits(), r2_p.to_bits(), "{} vs {r2_p}", eval.r2);
}

#[test]
fn evaluate_anchors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(tmp.path(), "LS", 1, 2);
    let y = dir.join("Y_train.csv");
    let out = ok(&[
        "evaluate",
        "--truth",
        s(&y),
        "--pred",
        s(&y),
        "--reference",
        s(&y),
    ]);
    assert!(out.starts_with("R² = 1.0 "), "{out}");
    let err = fails_with(
        &[
            "evaluate",
            "--truth",
            s(&y),
            "--pred",
            s(&dir.join("X1_train.csv")),
            "--reference",
            s(&y),
        ],
        1,
    );
    assert!(err.contains("mismatch"), "{err}");
}

#[test]
fn benchmark_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let err = fails_with(&["benchmark", "--reps", "0", "--out", s(tmp.path())], 2);
    assert!(err.contains("--reps"), "{err}");
    let out = Command::new(env!("CARGO_BIN_EXE_funcreg"))
        .args(["benchmark", "--reps", "1", "--out", s(tmp.path())])
        .env("FUNCREG_JOBS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--jobs"));

    let out = ok(&[
        "benchmark",
        "--scenario",
        "LS,NLS",
        "--method",
        "flmfr",
        "--reps",
        "3",
        "--jobs",
        "2",
        "--n",
        "50",
        "--out",
        s(tmp.path()),
    ]);
    assert!(out.contains("| Linear smooth (LS) |"), "{out}");
    let reps = fs::read_to_string(tmp.path().join("replications.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 2 * 3);
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("LS,2,flmfr,3,0,"));
}

#[test]
fn benchmark_linear_method_matches_expected_bands() {
    let config = BenchmarkConfig {
        scenarios: vec![ScenarioKind::Ls, ScenarioKind::Nls],
        methods: vec![Method::Flmfr],
        jobs: 4,
        ..Default::default()
    };
    let report = run_benchmark(&config).unwrap();
    let ls = report
        .cell(ScenarioKind::Ls, Method::Flmfr)
        .unwrap()
        .mean_r2_p;
    let nls = report
        .cell(ScenarioKind::Nls, Method::Flmfr)
        .unwrap()
        .mean_r2_p;
    assert!((0.74..=0.82).contains(&ls), "{ls}");
    assert!((-0.25..=0.10).contains(&nls), "{nls}");
}

#[test]
fn score_maps() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulate(&tmp.path().join("data"), "NLS", 1, 4);
    let model = tmp.path().join("k.json");
    ok(&[
        "fit",
        "--method",
        "fkamfr",
        "--y",
        s(&dir.join("Y_train.csv")),
        "--x",
        s(&dir.join("X1_train.csv")),
        "--out",
        s(&model),
    ]);
    let out = tmp.path().join("map");
    ok(&[
        "pcmap",
        "--model",
        s(&model),
        "--resolution",
        "10",
        "--out",
        s(&out),
    ]);
    let grid = fs::read_to_string(out.join("score_map.csv")).unwrap();
    assert_eq!(grid.lines().count(), 101);
    assert_eq!(grid.lines().next().unwrap(), "x1,x2,score");
    let hull = fs::read_to_string(out.join("hull.csv")).unwrap();
    assert!(hull.lines().count() >= 4);

    let lin = tmp.path().join("l.json");
    ok(&[
        "fit",
        "--method",
        "flmfr",
        "--y",
        s(&dir.join("Y_train.csv")),
        "--x",
        s(&dir.join("X1_train.csv")),
        "--out",
        s(&lin),
    ]);
    fails_with(&["pcmap", "--model", s(&lin), "--out", s(&out)], 2);
    ok(&[
        "pcmap",
        "--model",
        s(&lin),
        "--x",
        s(&dir.join("X1_train.csv")),
        "--y",
        s(&dir.join("Y_train.csv")),
        "--out",
        s(&out),
    ]);

    let two = simulate(&tmp.path().join("two"), "LS", 2, 4);
    let m2 = tmp.path().join("two.json");
    ok(&[
        "fit",
        "--method",
        "fkamfr",
        "--y",
        s(&two.join("Y_train.csv")),
        "--x",
        s(&two.join("X1_train.csv")),
        s(&two.join("X2_train.csv")),
        "--out",
        s(&m2),
    ]);
    let err = fails_with(&["pcmap", "--model", s(&m2), "--out", s(&out)], 2);
    assert!(err.contains("--fix-others"), "{err}");
    ok(&[
        "pcmap",
        "--model",
        s(&m2),
        "--fix-others",
        "--covariate",
        "2",
        "--out",
        s(&out),
    ]);
}

#[test]
fn import_transposed_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.csv");
    fs::write(
        &raw,
        "t,sat1,sat2,sat3,sat4\n0,0,1,3,5\n1,7,0,1,5\n2,2,2,2,0\n",
    )
    .unwrap();
    let out = tmp.path().join("y.csv");
    ok(&[
        "import",
        "--input",
        s(&raw),
        "--transpose",
        "--log1p",
        "--out",
        s(&out),
    ]);
    let y = read_sample(&out).unwrap();
    assert_eq!((y.n(), y.r()), (4, 3));
    assert_eq!(y.ids().unwrap(), ["sat1", "sat2", "sat3", "sat4"]);
    assert_eq!(y.curve(0), [0.0, 7f64.ln_1p(), 2f64.ln_1p()]);
    assert_eq!(y.curve(2)[0], 3f64.ln_1p());

    let out2 = ok(&["dcor", "--a", s(&out), "--b", s(&out)]);
    let d: f64 = out2.trim().parse().unwrap();
    assert!((d - 1.0).abs() < 1e-10);
}
