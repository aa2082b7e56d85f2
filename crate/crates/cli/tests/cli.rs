use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mir"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, bags: &str, instances: &str, features: &str, seed: &str) -> String {
    let d = dir.to_str().unwrap();
    ok(&mir(&[
        "synth",
        "--bags",
        bags,
        "--instances",
        instances,
        "--features",
        features,
        "--seed",
        seed,
        "--out",
        d,
    ]));
    dir.join("synthetic.csv").to_str().unwrap().to_string()
}

const QUICK: &[&str] = &[
    "--folds",
    "3",
    "--repetitions",
    "1",
    "--max-epochs",
    "4",
    "--lr",
    "0.01",
];

#[test]
fn synth_writes_rows_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth(dir.path(), "50", "20", "3", "4");
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert!(text.starts_with("bag_id,label,f1,f2,f3\n"));
    let meta = fs::read_to_string(dir.path().join("synthetic.meta.json")).unwrap();
    assert!(meta.contains("\"latent-stddev\""));

    let again = tempfile::tempdir().unwrap();
    let csv2 = synth(again.path(), "50", "20", "3", "4");
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&csv2).unwrap());
}

#[test]
fn cv_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth(&dir.path().join("data"), "24", "4", "2", "1");
    let run = |out: &str| {
        let mut args = vec![
            "cv",
            "--dataset",
            &csv,
            "--algo",
            "attention",
            "--hidden",
            "3",
            "--steps",
            "2",
        ];
        args.extend_from_slice(QUICK);
        args.extend_from_slice(&["--seed", "9", "--out", out]);
        ok(&mir(&args));
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(a.to_str().unwrap());
    run(b.to_str().unwrap());
    for name in [
        "cv_synthetic_attention.csv",
        "cv_synthetic_attention.summary.json",
    ] {
        let x = fs::read(a.join(name)).unwrap();
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name}");
    }
    let report = fs::read_to_string(a.join("cv_synthetic_attention.csv")).unwrap();
    assert_eq!(report.lines().next(), Some("repetition,fold,test_rmse"));
    assert_eq!(report.lines().count(), 1 + 3 + 1);
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth(&dir.path().join("data"), "12", "2", "1", "1");
    let out = mir(&[
        "cv",
        "--dataset",
        &csv,
        "--algo",
        "forest",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage"));
}

#[test]
fn missing_flags_and_help_exit_codes() {
    assert_eq!(mir(&["cv"]).status.code(), Some(1));
    assert_eq!(mir(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mir(&[
        "cv",
        "--dataset",
        "/nonexistent/bags.csv",
        "--algo",
        "aggregated",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn moment_sweep_writes_one_row_per_order() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth(&dir.path().join("data"), "18", "5", "2", "2");
    let out = dir.path().join("out");
    let mut args = vec![
        "sweep-moments",
        "--dataset",
        &csv,
        "--algo",
        "aggregated,instance-mean",
        "--moments",
        "0-4",
        "--width",
        "4",
    ];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(&["--out", out.to_str().unwrap()]);
    ok(&mir(&args));
    for algo in ["aggregated", "instance-mean"] {
        let text = fs::read_to_string(out.join(format!("moments_synthetic_{algo}.csv"))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,mean_rmse,std_rmse");
        assert_eq!(lines.len(), 6);
        assert!(lines[5].starts_with("4,"));
    }
}

#[test]
fn empty_moment_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth(&dir.path().join("data"), "12", "2", "1", "1");
    let out = mir(&[
        "sweep-moments",
        "--dataset",
        &csv,
        "--algo",
        "aggregated",
        "--moments",
        "",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn step_sweep_through_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("data"), "18", "4", "2", "3");
    let manifest = dir.path().join("datasets.manifest");
    fs::write(
        &manifest,
        "toy.path = data/synthetic.csv\ntoy.scale = 100\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let mut args = vec![
        "sweep-steps",
        "--manifest",
        manifest.to_str().unwrap(),
        "--dataset",
        "toy",
        "--steps",
        "1,2",
        "--hidden",
        "3",
    ];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(&["--out", out.to_str().unwrap()]);
    ok(&mir(&args));
    let text = fs::read_to_string(out.join("steps_toy.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn grid_search_reports_each_point() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth(&dir.path().join("data"), "18", "3", "2", "5");
    let grid = dir.path().join("grid.txt");
    fs::write(&grid, "width=2\nwidth=4 lr=0.003\n").unwrap();
    let out = dir.path().join("out");
    let mut args = vec![
        "cv",
        "--dataset",
        &csv,
        "--algo",
        "aggregated",
        "--grid",
        grid.to_str().unwrap(),
    ];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(&["--out", out.to_str().unwrap()]);
    ok(&mir(&args));
    let text = fs::read_to_string(out.join("grid_synthetic_aggregated.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(out.join("cv_synthetic_aggregated.csv").exists());
}

#[test]
fn grad_check_passes_and_honours_eps() {
    let stdout = ok(&mir(&["grad-check"]));
    assert!(stdout.contains("PASS"));
    assert!(stdout.contains("worst entry: "));
    let stdout = ok(&mir(&["grad-check", "--eps", "1e-4", "--seed", "3"]));
    assert!(stdout.contains("eps=1e-4"));
    assert_eq!(mir(&["grad-check", "--eps", "0.5"]).status.code(), Some(1));
}

#[test]
fn train_then_predict_writes_predictions_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth(&dir.path().join("data"), "20", "4", "2", "6");
    let model = dir.path().join("model");
    ok(&mir(&[
        "train",
        "--dataset",
        &csv,
        "--algo",
        "attention",
        "--hidden",
        "3",
        "--moments",
        "1",
        "--max-epochs",
        "3",
        "--out",
        model.to_str().unwrap(),
    ]));
    assert!(model.join("history.csv").exists());
    let pred = dir.path().join("pred");
    ok(&mir(&[
        "predict",
        "--dataset",
        &csv,
        "--checkpoint",
        model.join("model.json").to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]));
    let preds = fs::read_to_string(pred.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 21);
    let trace = fs::read_to_string(pred.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 20 * 4 * 2);
}
