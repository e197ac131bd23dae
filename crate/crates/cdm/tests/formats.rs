//! File formats and experiment outputs.

use std::path::PathBuf;

use cdm::experiment::{run_experiment, ExperimentSpec};
use cdm::fixtures::{experiments, random_market, unfair_market, worked_example};
use cdm::io::{read_history, read_json, write_history, write_json, MarketFile, ModelFile, ScenarioFile};
use cdm_core::learner::{fit, FitConfig, HistoryRecord};

fn small_run() -> ExperimentSpec {
    let (_, mut spec) = experiments("5.3").unwrap().swap_remove(0);
    spec.reps = 3;
    spec.features = 16;
    spec.variants.truncate(2);
    spec
}

#[test]
fn scenario_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for file in [worked_example(), random_market(2.5, 50), unfair_market()] {
        let path = dir.path().join("scenario.json");
        write_json(&path, &file).unwrap();
        let back: ScenarioFile = read_json(&path).unwrap();
        assert_eq!(back, file);
        assert_eq!(
            ScenarioFile::from_spec(&back.to_spec().unwrap()).to_spec().unwrap(),
            file.to_spec().unwrap()
        );
    }
}

#[test]
fn market_files_round_trip() {
    let spec = worked_example().to_spec().unwrap();
    let period = spec.draw_test(0, 0).unwrap();
    let file = MarketFile::from_market(&period.market, Some(&period.prefs));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("market.json");
    write_json(&path, &file).unwrap();
    let back: MarketFile = read_json(&path).unwrap();
    assert_eq!(back.market().unwrap(), period.market);
    assert_eq!(back.preferences().unwrap(), Some(period.prefs));
}

#[test]
fn history_and_models_round_trip() {
    let records: Vec<HistoryRecord> = (0..40)
        .map(|t| HistoryRecord {
            t,
            agent: (t % 2) as usize,
            s: f64::from(t) / 40.0,
            v: f64::from(40 - t) / 40.0,
            y: t % 3 == 0,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    write_history(&path, &records).unwrap();
    assert_eq!(read_history(&path).unwrap(), records);

    let model = fit(
        &records,
        &FitConfig {
            p: 8,
            lambdas: vec![0.1],
            folds: 2,
            seed: 3,
        },
    )
    .unwrap();
    let path = dir.path().join("model.json");
    write_json(&path, &ModelFile::from_model(&model)).unwrap();
    let back = read_json::<ModelFile>(&path).unwrap().to_model().unwrap();
    assert_eq!(back.theta, model.theta);
    assert_eq!(back.predict(0.3, 0.6).unwrap(), model.predict(0.3, 0.6).unwrap());
}

#[test]
fn history_rejects_bad_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    std::fs::write(&path, "t,i,s,v,y\n0,0,0.5,0.5,2\n").unwrap();
    assert!(read_history(&path).is_err());
    std::fs::write(&path, "t,i,s,v,y\n0,0,1.5,0.5,1\n").unwrap();
    assert!(read_history(&path).is_err());
}

#[test]
fn aggregates_are_means_of_replications() {
    let result = run_experiment(&small_run()).unwrap();
    for row in result.aggregate() {
        let reps: Vec<f64> = result
            .rows
            .iter()
            .filter(|r| r.profile == row.profile && r.agent == row.agent)
            .map(|r| r.payoff)
            .collect();
        assert_eq!(reps.len(), row.reps);
        let mean = reps.iter().sum::<f64>() / reps.len() as f64;
        assert!((mean - row.payoff).abs() < 1e-12);
    }
}

#[test]
fn provenance_records_seed_and_digest() {
    let spec = small_run();
    let result = run_experiment(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    result.write(dir.path()).unwrap();
    let prov: serde_json::Value = read_json(&dir.path().join("provenance.json")).unwrap();
    assert_eq!(prov["seed"], spec.seed);
    assert_eq!(prov["spec_sha256"], spec.digest().unwrap());
    assert_eq!(prov["reps"], 3);
    for name in ["replications.csv", "aggregate.csv", "plans.csv", "model-0.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
}

#[test]
fn digest_ignores_output_directory() {
    let mut spec = small_run();
    let before = spec.digest().unwrap();
    spec.out = Some(PathBuf::from("elsewhere"));
    assert_eq!(spec.digest().unwrap(), before);
    spec.seed += 1;
    assert_ne!(spec.digest().unwrap(), before);
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = small_run();
    spec.reps = 0;
    assert!(run_experiment(&spec).is_err());
    let mut spec = small_run();
    spec.training_pulls = Some(-1.0);
    assert!(run_experiment(&spec).is_err());
}
