use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedsim_core::harness::{read_metrics, summarize, METRICS_HEADER};
use fedsim_core::model::read_checkpoint;

fn fedsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("FEDSIM_THREADS", "2")
        .output()
        .expect("spawn fedsim")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn without_wall(p: &Path) -> String {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

const SMALL: &[&str] = &["--synth", "per_class=40", "--rounds", "3", "--epochs", "1"];

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fedsim(&[&["run", "--out", path(&out), "--checkpoints"], SMALL].concat());
    assert!(o.status.success(), "{}", stderr(&o));

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count(), 3);
    for row in read_metrics(out.join("metrics.csv")).unwrap() {
        assert!((0.0..=1.0).contains(&row.global_accuracy));
        assert!(row.global_loss >= 0.0);
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["rounds"], 3);
    assert_eq!(manifest["config"]["clients"], 5);
    assert_eq!(manifest["input_hash"].as_str().unwrap().len(), 64);

    let partition = fs::read_to_string(out.join("partition.csv")).unwrap();
    assert!(partition.starts_with("client_id,n_rows,"));
    assert_eq!(partition.lines().count(), 6);

    for t in 1..=3 {
        let ckpt = read_checkpoint(out.join("checkpoints").join(format!("round_{t}.bin"))).unwrap();
        assert_eq!(ckpt.len(), 1);
        assert_eq!(ckpt[0].len(), 8 * 64 + 64 + 64 * 32 + 32 + 32 * 8 + 8);
    }
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"strategy": {"kind": "fedprox", "mu": 0.5}, "rounds": 9, "epochs": 1,
            "dataset": {"kind": "synth", "classes": 4, "per_class": 30, "dims": 4, "separation": 6.0}}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = fedsim(&[
        "run",
        "--config",
        path(&cfg),
        "--rounds",
        "2",
        "--mu",
        "0.04",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["rounds"], 2);
    assert_eq!(manifest["config"]["strategy"]["mu"], 0.04);
    assert_eq!(manifest["config"]["dataset"]["classes"], 4);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = fedsim(&["run", "--rounds", "0", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rounds"), "{}", stderr(&o));

    let o = fedsim(&["run", "--strategy", "fedsgd", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("strategy"));

    let o = fedsim(&[
        "run",
        "--partition",
        "noniid_category",
        "--synth",
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("partition"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"roundz": 1}"#).unwrap();
    let o = fedsim(&["run", "--config", path(&bad), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args([&["run", "--out", path(&out)], SMALL].concat())
        .env("FEDSIM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FEDSIM_THREADS"));
}

#[test]
fn missing_data_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = fedsim(&[
        "run",
        "--data",
        path(&dir.path().join("absent.csv")),
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.json");
    fs::write(&cfg, r#"{"lr0": 1e6, "rounds": 5, "epochs": 2}"#).unwrap();
    let out = dir.path().join("o");
    let o = fedsim(&[
        "run",
        "--config",
        path(&cfg),
        "--synth",
        "per_class=50",
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn rerun_and_replay_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = [
        SMALL,
        &[
            "--strategy",
            "scaffold",
            "--partition",
            "label_shard",
            "--seed",
            "17",
        ],
    ]
    .concat();
    assert!(
        fedsim(&[&["run", "--out", path(&a)], args.as_slice()].concat())
            .status
            .success()
    );
    assert!(
        fedsim(&[&["run", "--out", path(&b)], args.as_slice()].concat())
            .status
            .success()
    );
    assert_eq!(
        without_wall(&a.join("metrics.csv")),
        without_wall(&b.join("metrics.csv"))
    );

    let c = dir.path().join("c");
    let o = fedsim(&["replay", path(&a.join("manifest.json")), "--out", path(&c)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        without_wall(&a.join("metrics.csv")),
        without_wall(&c.join("metrics.csv"))
    );
}

#[test]
fn centralized_matches_single_client_run() {
    let dir = tempfile::tempdir().unwrap();
    let fed = dir.path().join("fed");
    let cen = dir.path().join("cen");
    assert!(
        fedsim(&[&["run", "--clients", "1", "--out", path(&fed)], SMALL].concat())
            .status
            .success()
    );
    assert!(
        fedsim(&[&["centralized", "--out", path(&cen)], SMALL].concat())
            .status
            .success()
    );
    let f = read_metrics(fed.join("metrics.csv")).unwrap();
    let c = read_metrics(cen.join("metrics.csv")).unwrap();
    assert_eq!(f.len(), c.len());
    for (x, y) in f.iter().zip(&c) {
        assert!((x.global_loss - y.global_loss).abs() <= 1e-12);
        assert_eq!(x.global_accuracy, y.global_accuracy);
    }
}

#[test]
fn mu_sweep_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = fedsim(
        &[
            &["sweep", "--mus", "0.01,0.02,0.04", "--out", path(&out)],
            SMALL,
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        vec![
            "config_id",
            "best_accuracy",
            "best_round",
            "final_loss",
            "status"
        ]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(&row[4], "ok");
        let per_run = read_metrics(out.join(&row[0]).join("metrics.csv")).unwrap();
        let best = per_run
            .iter()
            .map(|m| m.global_accuracy)
            .fold(f64::MIN, f64::max);
        assert_eq!(row[1].parse::<f64>().unwrap(), best);
        let (_, round, loss) = summarize(&per_run).unwrap();
        assert_eq!(row[2].parse::<usize>().unwrap(), round);
        assert_eq!(row[3].parse::<f64>().unwrap(), loss);
    }
}

#[test]
fn sweep_records_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    let bad = dir.path().join("bad.json");
    fs::write(
        &good,
        r#"{"rounds": 2, "epochs": 1, "dataset": {"kind": "synth", "per_class": 30}}"#,
    )
    .unwrap();
    fs::write(&bad, r#"{"rounds": 2, "partition": "noniid_category"}"#).unwrap();
    let out = dir.path().join("sweep");
    let o = fedsim(&[
        "sweep",
        "--configs",
        path(&bad),
        path(&good),
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("bad,,,,"), "{}", lines[1]);
    assert!(lines[2].starts_with("good,") && lines[2].ends_with(",ok"));
}
