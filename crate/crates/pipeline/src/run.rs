//! Stage-by-stage experiment protocol over a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nominal_core::anomaly::{score_series, AnomalyScoreSeries};
use nominal_core::density::{mixing_weights, behavior_beta, Dataset};
use nominal_core::detection::{
    alarms_where, evaluate, format_table, group_constant_ranges, pool, Alarm, DetectionReport, FailureLog, FailureWindow,
    PoolingPolicy,
};
use nominal_core::explain::{augment_behavior, gate_geometry, reduced_space, render_map, score_grid, ScoreSpace};
use nominal_core::posterior::{diagnose, predictive_summary, FitDiagnostics, PosteriorSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::PosteriorArchive;
use crate::config::PipelineConfig;
use crate::fit::{derive_seed, fit_index, write_trials};
use crate::ingest::{failure_log, format_timestamp, read_failures, read_telemetry, FailureRecord, Telemetry, TelemetrySchema};
use crate::scale::Scaler;
use crate::split::{build_splits, Splits};

pub const POOLED: &str = "pooled";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inputs {
    pub data: PathBuf,
    pub failures: Option<PathBuf>,
}

/// Ingested, split and scaled inputs shared by every stage.
pub struct Prepared {
    pub raw: Telemetry,
    pub scaled: Telemetry,
    pub scaler: Scaler,
    pub failures: Vec<FailureRecord>,
    pub splits: Splits,
}

impl Prepared {
    pub fn dataset(&self, config: &PipelineConfig, index: &str, rows: &[usize]) -> Result<Dataset> {
        Ok(self.scaled.dataset(index, &config.data.covariates)?.select(rows)?)
    }

    fn validation_end(&self) -> i64 {
        let last = self.splits.validation.last().or(self.splits.train.last()).copied().unwrap_or(0);
        self.raw.timestamps[last]
    }

    /// Failures whose pre-failure span lies after the validation rows.
    pub fn test_failures(&self) -> Result<FailureLog> {
        let log = failure_log(&self.failures)?;
        let after = self.validation_end();
        let kept: Vec<FailureWindow> = log.failures().iter().copied().filter(|f| f.end > after).collect();
        Ok(FailureLog::new(kept)?)
    }
}

pub fn prepare(config: &PipelineConfig, inputs: &Inputs) -> Result<Prepared> {
    let d = &config.data;
    let machine = d.machine_column.clone().zip(d.machine.clone());
    let signals: Vec<String> = d.indices.iter().chain(&d.covariates).cloned().collect();
    let schema = TelemetrySchema { timestamp_column: d.timestamp_column.clone(), machine: machine.clone(), signals: signals.clone() };
    let raw = read_telemetry(&inputs.data, &schema)?;
    let failures = match &inputs.failures {
        Some(p) => read_failures(p, &d.timestamp_column, machine.as_ref().map(|(c, v)| (c.as_str(), v.as_str())))?,
        None => Vec::new(),
    };
    let splits = build_splits(&raw.timestamps, &failure_log(&failures)?, &config.split)?;
    let scaler = Scaler::fit(&raw.select(&splits.train), &signals)?;
    let scaled = scaler.apply(&raw)?;
    Ok(Prepared { raw, scaled, scaler, failures, splits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub total: usize,
    pub dropped_missing: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<InputFile>,
    pub rows: RowCounts,
    pub stages: Vec<StageRecord>,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(config: &PipelineConfig, inputs: &Inputs) -> Result<Self> {
        let mut files = vec![InputFile { role: "data".into(), path: inputs.data.display().to_string(), sha256: file_digest(&inputs.data)? }];
        if let Some(f) = &inputs.failures {
            files.push(InputFile { role: "failures".into(), path: f.display().to_string(), sha256: file_digest(f)? });
        }
        Ok(Manifest {
            tool: "nominal".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            seed: config.seed,
            inputs: files,
            rows: RowCounts::default(),
            stages: Vec::new(),
        })
    }

    pub fn inputs(&self) -> Result<Inputs> {
        let find = |role: &str| self.inputs.iter().find(|f| f.role == role).map(|f| PathBuf::from(&f.path));
        Ok(Inputs { data: find("data").ok_or_else(|| anyhow!("manifest lists no data file"))?, failures: find("failures") })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }

    fn record(&mut self, name: &str, status: &str, outputs: Vec<String>, detail: Option<String>) {
        self.stages.retain(|s| s.name != name);
        self.stages.push(StageRecord { name: name.into(), status: status.into(), outputs, detail });
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

/// Layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn file(&self, group: &str, name: &str) -> PathBuf {
        self.root.join(group).join(name)
    }

    fn ensure_group(&self, group: &str) -> Result<()> {
        let p = self.root.join(group);
        fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))
    }

    fn rel(&self, group: &str, name: &str) -> String {
        format!("{group}/{name}")
    }
}

/// Runs `body`, records the outcome in the manifest and saves it either way.
pub fn run_stage<T>(dir: &RunDir, manifest: &mut Manifest, name: &str, body: impl FnOnce() -> Result<(T, Vec<String>)>) -> Result<T> {
    match body() {
        Ok((value, outputs)) => {
            manifest.record(name, "ok", outputs, None);
            manifest.save(&dir.manifest())?;
            Ok(value)
        }
        Err(e) => {
            manifest.record(name, "failed", Vec::new(), Some(format!("{e:#}")));
            manifest.save(&dir.manifest())?;
            Err(e.context(format!("stage {name} failed")))
        }
    }
}

fn index_position(config: &PipelineConfig, name: &str) -> Result<usize> {
    config.data.indices.iter().position(|n| n == name).ok_or_else(|| anyhow!("{name:?} is not a configured index"))
}

/// Configured indices, or just `only` when given.
pub fn selected_indices(config: &PipelineConfig, only: Option<&str>) -> Result<Vec<String>> {
    match only {
        Some(n) => {
            index_position(config, n)?;
            Ok(vec![n.to_string()])
        }
        None => Ok(config.data.indices.clone()),
    }
}

fn mean_columns(data: &Dataset) -> Vec<f64> {
    let n = data.n_covariates();
    let mut m = vec![0.0; n];
    for i in 0..data.len() {
        for (a, x) in m.iter_mut().zip(data.x(i)) {
            *a += x / data.len() as f64;
        }
    }
    m
}

pub fn stage_fit(config: &PipelineConfig, prep: &Prepared, dir: &RunDir, names: &[String]) -> Result<Vec<String>> {
    let hash = config.hash();
    let outs: Vec<Vec<String>> = names
        .par_iter()
        .map(|name| -> Result<Vec<String>> {
            let pos = index_position(config, name)?;
            let train = prep.dataset(config, name, &prep.splits.train)?;
            let fit = fit_index(config, pos, &train).with_context(|| format!("index {name}"))?;
            dir.ensure_group(name)?;
            write_trials(&dir.file(name, "trials.csv"), &fit.trials)?;
            let chosen = fit.trials.iter().find(|t| t.selected).expect("one selected trial");
            let archive =
                PosteriorArchive::new(name, &config.data.covariates, chosen.candidate.prior, &hash, prep.scaler.clone(), mean_columns(&train), fit.sample);
            archive.write(&dir.file(name, "posterior.json"))?;
            Ok(vec![dir.rel(name, "trials.csv"), dir.rel(name, "posterior.json")])
        })
        .collect::<Result<_>>()?;
    Ok(outs.concat())
}

fn load_archive(config: &PipelineConfig, dir: &RunDir, name: &str) -> Result<PosteriorArchive> {
    let a = PosteriorArchive::read(&dir.file(name, "posterior.json"))?;
    if a.covariates != config.data.covariates {
        bail!("archive for {name} was fitted on covariates {:?}", a.covariates);
    }
    Ok(a)
}

pub fn stage_diagnose(config: &PipelineConfig, prep: &Prepared, dir: &RunDir, names: &[String]) -> Result<Vec<String>> {
    let mut outs = Vec::new();
    for name in names {
        let a = load_archive(config, dir, name)?;
        let mut w = csv::Writer::from_path(dir.file(name, "diagnostics.csv"))?;
        w.write_record(["split", "n", "lppd", "psis_loo", "psis_loo_se", "cic95", "cic95_se", "pareto_k_max", "acceptance_rate"])?;
        for (label, rows) in [("train", &prep.splits.train), ("validation", &prep.splits.validation)] {
            if rows.is_empty() {
                continue;
            }
            let data = prep.dataset(config, name, rows)?;
            let d: FitDiagnostics = diagnose(&a.sample, &data)?;
            w.write_record([
                label.to_string(),
                rows.len().to_string(),
                d.lppd.to_string(),
                d.psis_loo.to_string(),
                d.psis_loo_se.to_string(),
                d.cic95.to_string(),
                d.cic95_se.to_string(),
                d.pareto_k_max.to_string(),
                a.sample.acceptance_rate.to_string(),
            ])?;
        }
        w.flush()?;
        outs.push(dir.rel(name, "diagnostics.csv"));
    }
    Ok(outs)
}

/// Score series of all test segments, concatenated, with the segment of each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedScores {
    pub series: AnomalyScoreSeries,
    pub segment: Vec<usize>,
}

impl SegmentedScores {
    fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.segment.len() {
            if i == self.segment.len() || self.segment[i] != self.segment[start] {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// Alarms raised within each segment separately; indices refer to the full series.
    pub fn alarms(&self, patience: usize, exceeds: impl Fn(f64) -> bool + Copy) -> Vec<Alarm> {
        self.alarms_over(&self.series.values, patience, exceeds)
    }

    fn alarms_over(&self, values: &[f64], patience: usize, exceeds: impl Fn(f64) -> bool + Copy) -> Vec<Alarm> {
        let mut out = Vec::new();
        for r in self.ranges() {
            for mut a in alarms_where(&self.series.timestamps[r.clone()], &values[r.clone()], patience, exceeds) {
                a.onset_index += r.start;
                a.last_index += r.start;
                out.push(a);
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    timestamp: i64,
    time: String,
    segment: usize,
    score: f64,
    score_q05: f64,
    score_q95: f64,
    threshold: f64,
}

pub fn write_scores(path: &Path, s: &SegmentedScores) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for i in 0..s.series.len() {
        w.serialize(ScoreRow {
            timestamp: s.series.timestamps[i],
            time: format_timestamp(s.series.timestamps[i]),
            segment: s.segment[i],
            score: s.series.values[i],
            score_q05: s.series.lower[i],
            score_q95: s.series.upper[i],
            threshold: s.series.threshold,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path, threshold: f64) -> Result<SegmentedScores> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("missing stage output {}", path.display()))?;
    let (mut ts, mut vals, mut lo, mut hi, mut seg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for row in r.deserialize() {
        let row: ScoreRow = row.with_context(|| format!("reading {}", path.display()))?;
        ts.push(row.timestamp);
        vals.push(row.score);
        lo.push(row.score_q05);
        hi.push(row.score_q95);
        seg.push(row.segment);
    }
    let mut series = AnomalyScoreSeries::new(ts, vals, threshold)?;
    series.lower = lo;
    series.upper = hi;
    Ok(SegmentedScores { series, segment: seg })
}

fn concat_series(parts: Vec<(usize, AnomalyScoreSeries)>, threshold: f64) -> Result<SegmentedScores> {
    let mut s = AnomalyScoreSeries::new(Vec::new(), Vec::new(), threshold)?;
    let mut segment = Vec::new();
    for (id, p) in parts {
        segment.extend(std::iter::repeat_n(id, p.len()));
        s.timestamps.extend(p.timestamps);
        s.values.extend(p.values);
        s.lower.extend(p.lower);
        s.upper.extend(p.upper);
    }
    Ok(SegmentedScores { series: s, segment })
}

fn write_band_and_gates(dir: &RunDir, name: &str, a: &PosteriorArchive, data: &Dataset, seg: &[usize], seed: u64) -> Result<()> {
    let pos = a.scaler.position(name).ok_or_else(|| anyhow!("scaler lacks {name}"))?;
    let (mu, sd) = (a.scaler.mean[pos], a.scaler.sd[pos]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut band = csv::Writer::from_path(dir.file(name, "band.csv"))?;
    band.write_record(["timestamp", "time", "segment", "mean", "q05", "q95", "observed"])?;
    let m = a.sample.n_experts();
    let mut gates = csv::Writer::from_path(dir.file(name, "gates.csv"))?;
    let mut header = vec!["timestamp".to_string(), "time".into(), "segment".into()];
    header.extend((1..=m).map(|i| format!("alpha_{i}")));
    header.push("beta".into());
    gates.write_record(&header)?;
    let s = a.sample.len() as f64;
    for i in 0..data.len() {
        let x = data.x(i);
        let t = data.timestamps()[i];
        let (mean, q) = predictive_summary(&a.sample, x, &[0.05, 0.95], &mut rng)?;
        band.write_record([
            t.to_string(),
            format_timestamp(t),
            seg[i].to_string(),
            (mu + sd * mean).to_string(),
            (mu + sd * q[0]).to_string(),
            (mu + sd * q[1]).to_string(),
            (mu + sd * data.y(i)).to_string(),
        ])?;
        let mut alpha = vec![0.0; m];
        let mut beta = 0.0;
        for p in a.sample.draws() {
            for (acc, w) in alpha.iter_mut().zip(mixing_weights(&p.mixing, x)?) {
                *acc += w / s;
            }
            beta += behavior_beta(&p.behavior, x)? / s;
        }
        let mut rec = vec![t.to_string(), format_timestamp(t), seg[i].to_string()];
        rec.extend(alpha.iter().map(|v| v.to_string()));
        rec.push(beta.to_string());
        gates.write_record(&rec)?;
    }
    band.flush()?;
    gates.flush()?;
    Ok(())
}

pub fn stage_score(config: &PipelineConfig, prep: &Prepared, dir: &RunDir, names: &[String]) -> Result<Vec<String>> {
    let outs: Vec<Vec<String>> = names
        .par_iter()
        .map(|name| -> Result<Vec<String>> {
            let pos = index_position(config, name)?;
            let a = load_archive(config, dir, name)?;
            let sc = &config.score;
            let mut parts = Vec::new();
            let mut rows = Vec::new();
            let mut seg = Vec::new();
            for (id, segment) in prep.splits.test_segments.iter().enumerate() {
                rows.extend_from_slice(segment);
                seg.extend(std::iter::repeat_n(id, segment.len()));
                if segment.len() <= sc.k {
                    continue;
                }
                let data = prep.dataset(config, name, segment)?;
                parts.push((id, score_series(&data, &a.sample, sc.k, sc.decay(), sc.threshold)?));
            }
            write_scores(&dir.file(name, "scores.csv"), &concat_series(parts, sc.threshold)?)?;
            let all = prep.dataset(config, name, &rows)?;
            write_band_and_gates(dir, name, &a, &all, &seg, derive_seed(config.seed, "band", pos as u64, 0))?;
            Ok(["scores.csv", "band.csv", "gates.csv"].iter().map(|f| dir.rel(name, f)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(outs.concat())
}

#[derive(Debug, Serialize, Deserialize)]
struct AlarmRow {
    onset_index: usize,
    last_index: usize,
    start_time: i64,
    end_time: i64,
    start: String,
    end: String,
}

pub fn write_alarms(path: &Path, alarms: &[Alarm]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["onset_index", "last_index", "start_time", "end_time", "start", "end"])?;
    for a in alarms {
        w.serialize(AlarmRow {
            onset_index: a.onset_index,
            last_index: a.last_index,
            start_time: a.start_time,
            end_time: a.end_time,
            start: format_timestamp(a.start_time),
            end: format_timestamp(a.end_time),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_alarms(path: &Path) -> Result<Vec<Alarm>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("missing stage output {}", path.display()))?;
    r.deserialize()
        .map(|row| {
            let row: AlarmRow = row?;
            Ok(Alarm { onset_index: row.onset_index, last_index: row.last_index, start_time: row.start_time, end_time: row.end_time })
        })
        .collect()
}

/// Consensus series in the score layout; values are 0, 0.5 or 1.
fn pooled_scores(config: &PipelineConfig, scores: &[SegmentedScores]) -> Result<SegmentedScores> {
    let policy = PoolingPolicy::new(config.alarm.quorum, config.alarm.half_level)?;
    let series: Vec<AnomalyScoreSeries> = scores.iter().map(|s| s.series.clone()).collect();
    let pooled = pool(&series, &policy)?;
    let mut s = AnomalyScoreSeries::new(pooled.timestamps, pooled.values, config.score.threshold)?;
    s.lower = s.values.clone();
    s.upper = s.values.clone();
    Ok(SegmentedScores { series: s, segment: scores[0].segment.clone() })
}

pub fn stage_detect(config: &PipelineConfig, dir: &RunDir, names: &[String]) -> Result<Vec<String>> {
    let tau = config.score.threshold;
    let patience = config.alarm.patience;
    let mut outs = Vec::new();
    let mut all = Vec::new();
    for name in names {
        let s = read_scores(&dir.file(name, "scores.csv"), tau)?;
        write_alarms(&dir.file(name, "alarms.csv"), &s.alarms(patience, |v| v >= tau))?;
        outs.push(dir.rel(name, "alarms.csv"));
        all.push(s);
    }
    if names.len() > 1 {
        dir.ensure_group(POOLED)?;
        let pooled = pooled_scores(config, &all)?;
        write_scores(&dir.file(POOLED, "scores.csv"), &pooled)?;
        write_alarms(&dir.file(POOLED, "alarms.csv"), &pooled.alarms(patience, |v| v >= 1.0))?;
        outs.push(dir.rel(POOLED, "scores.csv"));
        outs.push(dir.rel(POOLED, "alarms.csv"));
    }
    Ok(outs)
}

fn write_report(path: &Path, report: &DetectionReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["w", "tp", "fn", "fp", "tn", "samples_in_range", "precision", "recall", "f1"])?;
    for r in &report.rows {
        w.write_record([
            r.w.to_string(),
            r.tp.to_string(),
            r.fn_.to_string(),
            r.fp.to_string(),
            r.tn.to_string(),
            r.samples_in_range.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<DetectionReport> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("missing stage output {}", path.display()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let u = |i: usize| -> Result<usize> { Ok(rec[i].parse()?) };
        let f = |i: usize| -> Result<f64> { Ok(rec[i].parse()?) };
        rows.push(nominal_core::detection::DetectionRow {
            w: rec[0].parse()?,
            tp: u(1)?,
            fn_: u(2)?,
            fp: u(3)?,
            tn: u(4)?,
            samples_in_range: u(5)?,
            precision: f(6)?,
            recall: f(7)?,
            f1: f(8)?,
        });
    }
    Ok(DetectionReport { rows })
}

/// Detection report per index name, pooled last.
pub type GroupReports = Vec<(String, DetectionReport)>;

/// Per-group detection reports, in `names` order then pooled.
pub fn stage_evaluate(config: &PipelineConfig, prep: &Prepared, dir: &RunDir, names: &[String]) -> Result<(GroupReports, Vec<String>)> {
    let failures = prep.test_failures()?;
    let mut groups: Vec<String> = names.to_vec();
    if names.len() > 1 {
        groups.push(POOLED.to_string());
    }
    let mut reports = Vec::new();
    let mut outs = Vec::new();
    for g in groups {
        let s = read_scores(&dir.file(&g, "scores.csv"), config.score.threshold)?;
        let alarms = read_alarms(&dir.file(&g, "alarms.csv"))?;
        let report = evaluate(&alarms, &failures, &config.alarm.validity_days, &s.series.timestamps)?;
        write_report(&dir.file(&g, "detection.csv"), &report)?;
        fs::write(dir.file(&g, "table.csv"), format_table(&group_constant_ranges(&report), ','))?;
        outs.push(dir.rel(&g, "detection.csv"));
        outs.push(dir.rel(&g, "table.csv"));
        reports.push((g, report));
    }
    Ok((reports, outs))
}

/// Score space by expert count: none for one expert, mixing plus behavior
/// logits for two, exact for three, rank-2 truncation beyond.
pub fn explanation_space(sample: &PosteriorSample, x_mean: &[f64]) -> Result<Option<ScoreSpace>> {
    match sample.n_experts() {
        1 => Ok(None),
        2 => {
            let geo = gate_geometry(sample, x_mean)?;
            let behavior = sample.mean_params().behavior.coeffs;
            Ok(Some(augment_behavior(&geo, &behavior)?))
        }
        3 => Ok(Some(gate_geometry(sample, x_mean)?.score_space()?)),
        _ => Ok(Some(reduced_space(&gate_geometry(sample, x_mean)?)?)),
    }
}

pub fn stage_explain(config: &PipelineConfig, dir: &RunDir, names: &[String]) -> Result<(Vec<String>, Vec<String>)> {
    let mut outs = Vec::new();
    let mut skipped = Vec::new();
    for name in names {
        let a = load_archive(config, dir, name)?;
        let Some(space) = explanation_space(&a.sample, &a.x_mean).with_context(|| format!("index {name}"))? else {
            skipped.push(name.clone());
            continue;
        };
        let e = &config.explain;
        let grid = score_grid(space.dim(), e.lo, e.hi, e.points);
        let map = render_map(&space, &grid, &a.sample)?;
        let y = a.scaler.position(name).ok_or_else(|| anyhow!("scaler lacks {name}"))?;
        let cov: Vec<usize> = config.data.covariates.iter().map(|c| a.scaler.position(c).ok_or_else(|| anyhow!("scaler lacks {c}"))).collect::<Result<_>>()?;

        let mut w = csv::Writer::from_path(dir.file(name, "explain_map.csv"))?;
        let mut header: Vec<String> = (1..=space.dim()).map(|i| format!("v{i}")).collect();
        header.extend(config.data.covariates.iter().cloned());
        header.extend((1..=a.sample.n_experts()).map(|i| format!("alpha_{i}")));
        header.extend(["mean".to_string(), "sd".to_string()]);
        w.write_record(&header)?;
        for p in 0..grid.len() {
            let mut rec: Vec<String> = grid[p].iter().map(|v| v.to_string()).collect();
            rec.extend(map.embedded[p].iter().zip(&cov).map(|(x, j)| (a.scaler.mean[*j] + a.scaler.sd[*j] * x).to_string()));
            rec.extend(map.activations[p].iter().map(|v| v.to_string()));
            rec.push((a.scaler.mean[y] + a.scaler.sd[y] * map.mean[p]).to_string());
            rec.push((a.scaler.sd[y] * map.sd[p]).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.file(name, "explain_arrows.csv"))?;
        let mut header = vec!["covariate".to_string()];
        header.extend((1..=space.dim()).map(|i| format!("d{i}")));
        w.write_record(&header)?;
        for (c, arrow) in config.data.covariates.iter().zip(&map.arrows) {
            let mut rec = vec![c.clone()];
            rec.extend(arrow.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        outs.push(dir.rel(name, "explain_map.csv"));
        outs.push(dir.rel(name, "explain_arrows.csv"));
    }
    Ok((outs, skipped))
}

pub struct RunSummary {
    pub reports: GroupReports,
    pub plots: Vec<String>,
}

pub fn prepare_stage(config: &PipelineConfig, inputs: &Inputs, dir: &RunDir, manifest: &mut Manifest) -> Result<Prepared> {
    run_stage(dir, manifest, "prepare", || {
        let p = prepare(config, inputs)?;
        Ok((p, Vec::new()))
    })
    .inspect(|p| {
        manifest.rows = RowCounts {
            total: p.raw.len() + p.raw.dropped_missing,
            dropped_missing: p.raw.dropped_missing,
            train: p.splits.train.len(),
            validation: p.splits.validation.len(),
            test: p.splits.test().len(),
        };
    })
    .and_then(|p| {
        manifest.save(&dir.manifest())?;
        Ok(p)
    })
}

/// Starts or resumes a run directory for `config`, writing its config copy.
pub fn open_run(config: &PipelineConfig, inputs: &Inputs, root: &Path) -> Result<(RunDir, Manifest)> {
    let dir = RunDir::create(root)?;
    fs::write(dir.config(), config.to_toml()?)?;
    let mut manifest = Manifest::new(config, inputs)?;
    if let Ok(old) = Manifest::load(&dir.manifest()) {
        if old.config_hash == manifest.config_hash && old.inputs == manifest.inputs {
            manifest.stages = old.stages;
        }
    }
    manifest.save(&dir.manifest())?;
    Ok((dir, manifest))
}

/// Every stage in order: fit, diagnose, score, detect, evaluate, explain, emit.
pub fn run_experiment(config: &PipelineConfig, inputs: &Inputs, root: &Path) -> Result<RunSummary> {
    let (dir, mut manifest) = open_run(config, inputs, root)?;
    manifest.stages.clear();
    let prep = prepare_stage(config, inputs, &dir, &mut manifest)?;
    let names = config.data.indices.clone();
    run_stage(&dir, &mut manifest, "fit", || Ok(((), stage_fit(config, &prep, &dir, &names)?)))?;
    run_stage(&dir, &mut manifest, "diagnose", || Ok(((), stage_diagnose(config, &prep, &dir, &names)?)))?;
    run_stage(&dir, &mut manifest, "score", || Ok(((), stage_score(config, &prep, &dir, &names)?)))?;
    run_stage(&dir, &mut manifest, "detect", || Ok(((), stage_detect(config, &dir, &names)?)))?;
    let reports = run_stage(&dir, &mut manifest, "evaluate", || stage_evaluate(config, &prep, &dir, &names))?;
    let skipped = run_stage(&dir, &mut manifest, "explain", || stage_explain(config, &dir, &names).map(|(o, s)| (s, o)))?;
    if !skipped.is_empty() {
        if let Some(s) = manifest.stages.iter_mut().find(|s| s.name == "explain") {
            s.detail = Some(format!("single expert, no gate map: {}", skipped.join(", ")));
        }
        manifest.save(&dir.manifest())?;
    }
    let plots = run_stage(&dir, &mut manifest, "emit", || {
        let p = crate::emit::emit_plot_data(&dir.root)?;
        Ok((p.clone(), p))
    })?;
    Ok(RunSummary { reports, plots })
}
