mod common;

use std::fs;
use std::process::Command;

use curvecast::backtest::walk_forward;
use curvecast::checkpoint::{Checkpoint, CheckpointKind};
use curvecast::pipeline::{Pipeline, Stage};
use curvecast::sampler::Dataset;
use curvecast::Error;

use common::{smoke, snapshot};

#[test]
fn staged_run_equals_fused_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Pipeline::new(smoke(a.path(), &[])).run_all().unwrap();
    let staged = Pipeline::new(smoke(b.path(), &[]));
    for s in Stage::ALL {
        staged.run_stage(s).unwrap();
    }
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
    let m = staged.manifest().unwrap();
    assert!(m.failed_stage.is_none());
    assert!(m.artifact_hashes().contains_key("report/monthly_sharpe.csv"));
    assert!(m.seeds.contains_key("fold-7.train"));
}

#[test]
fn reruns_reproduce_every_hash() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(smoke(dir.path(), &[]));
    p.run_all().unwrap();
    let first = p.manifest().unwrap();
    let files = snapshot(dir.path());
    fs::remove_dir_all(dir.path()).unwrap();
    p.run_all().unwrap();
    assert_eq!(p.manifest().unwrap(), first);
    assert_eq!(snapshot(dir.path()), files);
}

#[test]
fn staged_report_equals_in_memory_walk_forward() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path(), &["walk_forward.sweeps.dropout_rates=[0.2]"]);
    let p = Pipeline::new(cfg.clone());
    p.run_all().unwrap();
    let ds = Dataset::load(&dir.path().join("dataset")).unwrap();
    let (_, report) = walk_forward(&ds, &cfg.walk_forward, cfg.seed).unwrap();
    assert_eq!(p.load_report().unwrap(), report);
    assert!(dir.path().join("report/dropout_sweep.csv").exists());
    assert!(dir.path().join("forecasts/fold-7-dropout-0.2.csv.gz").exists());
}

#[test]
fn bayes_run_skips_network_training() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(smoke(dir.path(), &["walk_forward.model.kind=bayes", "walk_forward.sweeps.dropout_rates=[0.2]"]));
    p.run_all().unwrap();
    let ck = Checkpoint::load(&dir.path().join("models/fold-7.json")).unwrap();
    assert_eq!(ck.kind, CheckpointKind::Bayes);
    assert!(!dir.path().join("models/fold-7-dropout-0.2.json").exists());
    let table = fs::read_to_string(dir.path().join("report/monthly_sharpe.csv")).unwrap();
    assert!(table.starts_with("month,bayes:Base,bayes:RlsdVol,bayes:Alea,bayes:AlEp"));
}

#[test]
fn empty_curve_gives_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("ingest")).unwrap();
    fs::write(dir.path().join("ingest/microprice.tsv"), "timestamp\tcontract\tmicroprice\n").unwrap();
    let p = Pipeline::new(smoke(dir.path(), &[]));
    p.run_stage(Stage::Sample).unwrap();
    assert!(Dataset::load(&dir.path().join("dataset")).unwrap().is_empty());
    assert!(matches!(p.run_stage(Stage::Train), Err(Error::Data(_))));
}

#[test]
fn missing_upstream_artifact_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(smoke(dir.path(), &[]));
    match p.run_stage(Stage::Backtest) {
        Err(Error::MissingArtifact(path)) => assert!(path.ends_with("dataset/index.json")),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    let m = p.manifest().unwrap();
    assert_eq!(m.failed_stage.as_deref(), Some("backtest"));
}

#[test]
fn predict_with_mismatched_contracts_names_both() {
    let dir = tempfile::tempdir().unwrap();
    let nine = Pipeline::new(smoke(dir.path(), &[]));
    for s in [Stage::Synth, Stage::Ingest, Stage::Sample, Stage::Train] {
        nine.run_stage(s).unwrap();
    }
    let three = Pipeline::new(smoke(dir.path(), &["data.synthetic.contracts=3"]));
    for s in [Stage::Synth, Stage::Ingest, Stage::Sample] {
        three.run_stage(s).unwrap();
    }
    match three.run_stage(Stage::Predict) {
        Err(e @ Error::Shape { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("contracts") && msg.contains('9') && msg.contains('3'), "{msg}");
        }
        other => panic!("expected a shape error, got {other:?}"),
    }
}

#[test]
fn file_source_ingests_like_synthetic() {
    let a = tempfile::tempdir().unwrap();
    let syn = Pipeline::new(smoke(a.path(), &[]));
    syn.run_stage(Stage::Synth).unwrap();
    syn.run_stage(Stage::Ingest).unwrap();
    let b = tempfile::tempdir().unwrap();
    let pattern = format!("{}/quotes/*.csv.gz", a.path().display());
    let files = Pipeline::new(smoke(b.path(), &["data.source=files", &format!("data.files.pattern={pattern}")]));
    assert!(matches!(files.run_stage(Stage::Synth), Err(Error::Config(_))));
    files.run_stage(Stage::Ingest).unwrap();
    let read = |d: &std::path::Path| fs::read(d.join("ingest/microprice.tsv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let none = Pipeline::new(smoke(b.path(), &["data.source=files", "data.files.pattern=/nonexistent/*.csv"]));
    assert!(matches!(none.run_stage(Stage::Ingest), Err(Error::Data(_))));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smoke.toml");
    fs::write(&cfg, common::SMOKE).unwrap();
    let out = dir.path().join("out");
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_curvecast"))
            .args(args)
            .env("RUST_LOG", "off")
            .status()
            .unwrap()
            .code()
    };
    let cfg_s = cfg.to_str().unwrap();
    let out_s = out.to_str().unwrap();
    assert_eq!(run(&["predict", "--config", cfg_s, "--out", out_s]), Some(2));
    assert_eq!(run(&["run", "--config", cfg_s, "--out", out_s, "--set", "sampling.cutoff=-1"]), Some(1));
    assert_eq!(run(&["run", "--config", "/nonexistent.toml"]), Some(1));
    assert_eq!(run(&["run", "--config", cfg_s, "--out", out_s, "--seed", "9"]), Some(0));
    assert!(out.join("report/monthly_sharpe.csv").exists());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 9);
}
