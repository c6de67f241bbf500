use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nominal_core::detection::{format_table, group_constant_ranges};
use nominal_pipeline::config::{AlarmConfig, DataConfig, ModelConfig, PipelineConfig, ScoreConfig, SearchConfig, SplitSpec, SCHEMA_VERSION};
use nominal_pipeline::ingest::{format_timestamp, write_failures, Telemetry};
use nominal_pipeline::run::{
    open_run, prepare_stage, run_stage, selected_indices, stage_detect, stage_diagnose, stage_evaluate, stage_explain, stage_fit,
    stage_score, Inputs, Manifest,
};
use nominal_pipeline::synthetic::{generate_synthetic, SyntheticSpec};
use nominal_pipeline::{run_experiment, Overrides};

#[derive(Parser)]
#[command(name = "nominal", version, about = "Nominal-behavior models and anomaly alarms for health-index telemetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic telemetry, a failure log and a matching config.
    Simulate(SimulateArgs),
    /// Fit one posterior per index on the training rows.
    Fit(StageArgs),
    /// Fit and coverage diagnostics on train and validation rows.
    Diagnose(StageArgs),
    /// Anomaly scores, predictive band and gate activations over the test spans.
    Score(StageArgs),
    /// Alarms per index and pooled.
    Detect(StageArgs),
    /// Detection reports against the failure log.
    Evaluate(StageArgs),
    /// Gate explanation maps.
    Explain(StageArgs),
    /// Every stage in order.
    Run(StageArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Synthetic spec (TOML); a built-in two-index stream when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fault mean shift in fused sds for the built-in stream.
    #[arg(long, default_value_t = 8.0)]
    shift: f64,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline config; defaults to the copy inside the run directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Telemetry CSV; defaults to the one recorded in the manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    failures: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict per-index stages to one index.
    #[arg(long)]
    index: Option<String>,
    /// Alarm threshold τ.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    quorum: Option<usize>,
}

impl StageArgs {
    fn resolve(&self) -> Result<(PipelineConfig, Inputs)> {
        let path = self.config.clone().unwrap_or_else(|| self.out.join("config.toml"));
        let mut config = PipelineConfig::load(&path)?;
        config.apply(&Overrides { seed: self.seed, threshold: self.threshold, patience: self.patience, quorum: self.quorum })?;
        let inputs = match &self.data {
            Some(d) => Inputs { data: d.clone(), failures: self.failures.clone() },
            None => {
                let m = Manifest::load(&self.out.join("manifest.json")).context("no --data given and no manifest to take it from")?;
                let mut i = m.inputs()?;
                if self.failures.is_some() {
                    i.failures = self.failures.clone();
                }
                i
            }
        };
        Ok((config, inputs))
    }
}

fn print_reports(reports: &[(String, nominal_core::detection::DetectionReport)]) {
    for (name, report) in reports {
        println!("== {name}");
        print!("{}", format_table(&group_constant_ranges(report), '\t'));
    }
}

fn starter_config(spec: &SyntheticSpec, seed: u64) -> PipelineConfig {
    PipelineConfig {
        schema_version: SCHEMA_VERSION,
        seed,
        data: DataConfig {
            timestamp_column: "datetime".into(),
            machine_column: Some("machineID".into()),
            machine: Some(spec.machine.clone()),
            indices: spec.indices.iter().map(|i| i.name.clone()).collect(),
            covariates: spec.covariates.iter().map(|c| c.name.clone()).collect(),
        },
        model: ModelConfig::default(),
        sampler: Default::default(),
        score: ScoreConfig::default(),
        alarm: AlarmConfig { patience: 3, quorum: spec.indices.len(), half_level: false, validity_days: (1..=4).collect() },
        split: SplitSpec { fraction: 0.25, ..SplitSpec::default() },
        search: Some(SearchConfig { trials: 2, experts: vec![1, 2], mean_coeff_scale: vec![], gate_coeff_scale: vec![], grid_size: 20, nu: 0.5 }),
        explain: Default::default(),
    }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let spec = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticSpec::demo(a.shift),
    };
    let out = generate_synthetic(&spec, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    write_with_machine(&out.telemetry, &spec.machine, &a.out.join("telemetry.csv"))?;
    write_failures(&a.out.join("failures.csv"), &out.failures, "datetime", "machineID")?;
    std::fs::write(a.out.join("truth.toml"), toml::to_string(&spec)?)?;
    std::fs::write(a.out.join("config.toml"), starter_config(&spec, a.seed).to_toml()?)?;
    println!("wrote {} rows and {} failures to {}", out.telemetry.len(), out.failures.len(), a.out.display());
    Ok(())
}

/// Telemetry with a machine id column, laid out like the public datasets.
fn write_with_machine(t: &Telemetry, machine: &str, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["datetime".to_string(), "machineID".to_string()];
    header.extend(t.names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..t.len() {
        let mut rec = vec![format_timestamp(t.timestamps[i]), machine.to_string()];
        rec.extend(t.columns.iter().map(|c| c[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn stage(verb: &str, a: &StageArgs) -> Result<()> {
    let (config, inputs) = a.resolve()?;
    if verb == "run" {
        let summary = run_experiment(&config, &inputs, &a.out)?;
        print_reports(&summary.reports);
        return Ok(());
    }
    let (dir, mut manifest) = open_run(&config, &inputs, &a.out)?;
    let names = selected_indices(&config, a.index.as_deref())?;
    let needs_data = matches!(verb, "fit" | "diagnose" | "score" | "evaluate");
    let prep = if needs_data { Some(prepare_stage(&config, &inputs, &dir, &mut manifest)?) } else { None };
    let prep = || prep.as_ref().expect("prepared");
    match verb {
        "fit" => run_stage(&dir, &mut manifest, "fit", || Ok(((), stage_fit(&config, prep(), &dir, &names)?)))?,
        "diagnose" => run_stage(&dir, &mut manifest, "diagnose", || Ok(((), stage_diagnose(&config, prep(), &dir, &names)?)))?,
        "score" => run_stage(&dir, &mut manifest, "score", || Ok(((), stage_score(&config, prep(), &dir, &names)?)))?,
        "detect" => run_stage(&dir, &mut manifest, "detect", || Ok(((), stage_detect(&config, &dir, &names)?)))?,
        "evaluate" => {
            let reports = run_stage(&dir, &mut manifest, "evaluate", || stage_evaluate(&config, prep(), &dir, &names))?;
            print_reports(&reports);
        }
        "explain" => {
            let skipped = run_stage(&dir, &mut manifest, "explain", || stage_explain(&config, &dir, &names).map(|(o, s)| (s, o)))?;
            for s in skipped {
                println!("{s}: single expert, no gate map");
            }
        }
        _ => unreachable!("verb {verb}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => stage("fit", a),
        Command::Diagnose(a) => stage("diagnose", a),
        Command::Score(a) => stage("score", a),
        Command::Detect(a) => stage("detect", a),
        Command::Evaluate(a) => stage("evaluate", a),
        Command::Explain(a) => stage("explain", a),
        Command::Run(a) => stage("run", a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
