use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nominal_pipeline::archive::PosteriorArchive;
use nominal_pipeline::ingest::{write_failures, Telemetry};
use nominal_pipeline::run::{prepare, read_alarms, read_scores, Manifest, POOLED};
use nominal_pipeline::synthetic::{generate_synthetic, SyntheticSpec};
use nominal_pipeline::{run_experiment, Inputs, Overrides, PipelineConfig};

const CONFIG: &str = r#"
schema_version = 1
seed = 3

[data]
indices = ["hi_a", "hi_b"]
covariates = ["load", "temp"]

[model]
experts = 2

[sampler]
chains = 2
iterations = 150
burn_in = 400

[alarm]
patience = 3
quorum = 2
validity_days = [1, 2, 3, 4]

[split]
fraction = 0.25

[explain]
points = 9
"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    inputs: Inputs,
    telemetry: Telemetry,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let out = generate_synthetic(&SyntheticSpec::demo(8.0), 11).unwrap();
    let data = root.join("telemetry.csv");
    let failures = root.join("failures.csv");
    out.telemetry.write_csv(&data, "datetime").unwrap();
    write_failures(&failures, &out.failures, "datetime", "machineID").unwrap();
    Fixture { _dir: dir, root, inputs: Inputs { data, failures: Some(failures) }, telemetry: out.telemetry }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap_or_else(|| panic!("{name} in {}", path.display()));
    r.records().map(|rec| rec.unwrap()[i].to_string()).collect()
}

#[test]
fn run_is_reproducible_and_complete() {
    let f = fixture();
    let config = PipelineConfig::from_toml(CONFIG).unwrap();
    let a = f.root.join("a");
    let b = f.root.join("b");
    let summary = run_experiment(&config, &f.inputs, &a).unwrap();
    run_experiment(&config, &f.inputs, &b).unwrap();
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ta {
        assert!(bytes == &tb[name], "{name} differs between identical runs");
    }

    let manifest = Manifest::load(&a.join("manifest.json")).unwrap();
    assert_eq!(manifest.config_hash, config.hash());
    assert!(manifest.stages.iter().all(|s| s.status == "ok"));
    let names: Vec<&str> = manifest.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["prepare", "fit", "diagnose", "score", "detect", "evaluate", "explain", "emit"]);
    for s in &manifest.stages {
        for o in &s.outputs {
            assert!(ta.contains_key(o), "{} lists missing {o}", s.name);
        }
    }
    assert_eq!(manifest.rows.total, f.telemetry.len());
    assert_eq!((manifest.rows.train, manifest.rows.validation), (200, 100));
    assert_eq!(summary.reports.len(), 3);
    assert_eq!(summary.reports[2].0, POOLED);
}

#[test]
fn outputs_are_consistent() {
    let f = fixture();
    let config = PipelineConfig::from_toml(CONFIG).unwrap();
    let root = f.root.join("run");
    run_experiment(&config, &f.inputs, &root).unwrap();
    let prep = prepare(&config, &f.inputs).unwrap();

    for name in ["hi_a", "hi_b"] {
        // Scaling statistics come from the training rows alone.
        let archive = PosteriorArchive::read(&root.join(name).join("posterior.json")).unwrap();
        let col = f.telemetry.column(name).unwrap();
        let train_mean = prep.splits.train.iter().map(|i| col[*i]).sum::<f64>() / prep.splits.train.len() as f64;
        let pos = archive.scaler.position(name).unwrap();
        assert!((archive.scaler.mean[pos] - train_mean).abs() < 1e-12);
        assert!(column(&root.join(name).join("diagnostics.csv"), "split").contains(&"train".to_string()));

        let scores = read_scores(&root.join(name).join("scores.csv"), 0.975).unwrap();
        let s = &scores.series;
        for i in 0..s.len() {
            assert!((0.0..=1.0).contains(&s.values[i]));
            assert!(s.lower[i] <= s.upper[i]);
        }
        let band = root.join("plots").join(format!("{name}_band.csv"));
        let band_ts: Vec<i64> = column(&band, "timestamp").iter().map(|v| v.parse().unwrap()).collect();
        assert!(s.timestamps.iter().all(|t| band_ts.binary_search(t).is_ok()), "scored row without a band row");
        let lo: Vec<f64> = column(&band, "q05").iter().map(|v| v.parse().unwrap()).collect();
        let mid: Vec<f64> = column(&band, "mean").iter().map(|v| v.parse().unwrap()).collect();
        let hi: Vec<f64> = column(&band, "q95").iter().map(|v| v.parse().unwrap()).collect();
        for i in 0..lo.len() {
            assert!(lo[i] <= mid[i] && mid[i] <= hi[i], "band row {i}");
        }

        // Every alarm onset sits on an above-threshold sample.
        let alarms = read_alarms(&root.join(name).join("alarms.csv")).unwrap();
        let plot = root.join("plots").join(format!("{name}_score.csv"));
        let onset = column(&plot, "alarm_onset");
        assert_eq!(onset.iter().filter(|v| *v == "1").count(), alarms.len());
        for a in &alarms {
            assert!(s.values[a.onset_index] >= 0.975);
            assert!(a.last_index >= a.onset_index);
        }
    }
    let pooled = column(&root.join("plots").join("pooled_score.csv"), "score");
    assert!(pooled.iter().all(|v| v == "0" || v == "0.5" || v == "1"));
    assert_eq!(column(&root.join("plots").join("failures.csv"), "timestamp").len(), 3);
}

#[test]
fn overrides_change_the_hash_and_config_copy() {
    let f = fixture();
    let mut config = PipelineConfig::from_toml(CONFIG).unwrap();
    let before = config.hash();
    config.apply(&Overrides { seed: None, threshold: Some(0.99), patience: None, quorum: Some(1) }).unwrap();
    assert_ne!(config.hash(), before);
    let root = f.root.join("run");
    run_experiment(&config, &f.inputs, &root).unwrap();
    let copy = PipelineConfig::load(&root.join("config.toml")).unwrap();
    assert_eq!(copy, config);
    assert_eq!(Manifest::load(&root.join("manifest.json")).unwrap().config_hash, config.hash());
}

#[test]
fn missing_input_fails_cleanly() {
    let f = fixture();
    let config = PipelineConfig::from_toml(CONFIG).unwrap();
    let inputs = Inputs { data: f.root.join("absent.csv"), failures: None };
    let Err(err) = run_experiment(&config, &inputs, &f.root.join("run")) else { panic!("run succeeded without data") };
    assert!(format!("{err:#}").contains("absent.csv"));
}
