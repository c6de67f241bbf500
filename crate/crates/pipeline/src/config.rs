//! Run configuration, read from TOML.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nominal_core::anomaly::{default_decay, MAX_WINDOW};
use nominal_core::density::PriorSpec;
use nominal_core::posterior::SamplerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub alarm: AlarmConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub explain: ExplainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: String,
    #[serde(default)]
    pub machine_column: Option<String>,
    /// Keep only rows whose machine column equals this value.
    #[serde(default)]
    pub machine: Option<String>,
    /// Health-index columns; one model is fitted per entry.
    pub indices: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
}

fn default_timestamp_column() -> String {
    "datetime".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub experts: usize,
    pub prior: PriorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { experts: 1, prior: PriorConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub mean_coeff_location: f64,
    pub mean_coeff_scale: f64,
    pub gate_coeff_location: f64,
    pub gate_coeff_scale: f64,
    pub noise_log_location: f64,
    pub noise_log_scale: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorSpec::default().into()
    }
}

impl From<PriorSpec> for PriorConfig {
    fn from(p: PriorSpec) -> Self {
        PriorConfig {
            mean_coeff_location: p.mean_coeff_location,
            mean_coeff_scale: p.mean_coeff_scale,
            gate_coeff_location: p.gate_coeff_location,
            gate_coeff_scale: p.gate_coeff_scale,
            noise_log_location: p.noise_log_location,
            noise_log_scale: p.noise_log_scale,
        }
    }
}

impl From<PriorConfig> for PriorSpec {
    fn from(p: PriorConfig) -> Self {
        PriorSpec {
            mean_coeff_location: p.mean_coeff_location,
            mean_coeff_scale: p.mean_coeff_scale,
            gate_coeff_location: p.gate_coeff_location,
            gate_coeff_scale: p.gate_coeff_scale,
            noise_log_location: p.noise_log_location,
            noise_log_scale: p.noise_log_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        SamplerSection { chains: d.chains, iterations: d.iterations, burn_in: d.burn_in, thin: d.thin, target_acceptance: d.target_acceptance }
    }
}

impl SamplerSection {
    pub fn with_seed(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            target_acceptance: self.target_acceptance,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    /// Past observations in each window (window length is `k + 1`).
    pub k: usize,
    /// Exponential decay λ; `ln(100)/k` when absent.
    pub decay: Option<f64>,
    pub threshold: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { k: 5, decay: None, threshold: 0.975 }
    }
}

impl ScoreConfig {
    pub fn decay(&self) -> f64 {
        self.decay.unwrap_or_else(|| default_decay(self.k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlarmConfig {
    pub patience: usize,
    pub quorum: usize,
    pub half_level: bool,
    pub validity_days: Vec<i64>,
}

impl Default for AlarmConfig {
    fn default() -> Self {
        AlarmConfig { patience: 1, quorum: 1, half_level: false, validity_days: (1..=5).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// Days excluded before and after each failure.
    pub margin_days: f64,
    /// Fraction of the fault-free pool kept, evenly spaced in time.
    pub fraction: f64,
    pub train_size: usize,
    pub validation_size: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { margin_days: 5.0, fraction: 0.10, train_size: 200, validation_size: 100 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.margin_days >= 0.0 && self.margin_days.is_finite(), "split.margin_days must be >= 0");
        ensure!(self.fraction > 0.0 && self.fraction <= 1.0, "split.fraction must lie in (0, 1]");
        ensure!(self.train_size > 0, "split.train_size must be positive");
        Ok(())
    }

    pub fn margin_seconds(&self) -> i64 {
        (self.margin_days * 86_400.0).round() as i64
    }
}

/// Random search over a declared grid of model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub trials: usize,
    pub experts: Vec<usize>,
    #[serde(default)]
    pub mean_coeff_scale: Vec<f64>,
    #[serde(default)]
    pub gate_coeff_scale: Vec<f64>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_nu")]
    pub nu: f64,
}

fn default_grid_size() -> usize {
    nominal_core::selection::DEFAULT_GRID_SIZE
}

fn default_nu() -> f64 {
    nominal_core::selection::DEFAULT_NU
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { lo: -4.0, hi: 4.0, points: 41 }
    }
}

/// Command-line overrides applied after loading.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub patience: Option<usize>,
    pub quorum: Option<usize>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.threshold {
            self.score.threshold = t;
        }
        if let Some(p) = o.patience {
            self.alarm.patience = p;
        }
        if let Some(q) = o.quorum {
            self.alarm.quorum = q;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version);
        }
        ensure!(!self.data.indices.is_empty(), "data.indices must name at least one column");
        for name in &self.data.indices {
            ensure!(
                !name.is_empty() && !name.contains(['/', '\\']) && !matches!(name.as_str(), "." | ".." | "pooled" | "plots"),
                "index name {name:?} cannot be used as a run-directory entry"
            );
        }
        let mut names: Vec<&String> = self.data.indices.iter().chain(&self.data.covariates).collect();
        names.sort();
        ensure!(names.windows(2).all(|p| p[0] != p[1]), "index and covariate columns must be distinct");
        ensure!(self.data.machine.is_none() || self.data.machine_column.is_some(), "data.machine requires data.machine_column");
        ensure!(self.model.experts >= 1, "model.experts must be >= 1");
        PriorSpec::from(self.model.prior).validate()?;
        self.sampler.with_seed(self.seed).validate()?;
        ensure!(self.score.k < MAX_WINDOW, "score.k must be below {MAX_WINDOW}");
        ensure!(self.score.decay() > 0.0 && self.score.decay().is_finite(), "score.decay must be positive");
        ensure!(self.score.threshold > 0.0 && self.score.threshold < 1.0, "score.threshold must lie in (0, 1)");
        ensure!(self.alarm.patience >= 1, "alarm.patience must be >= 1");
        ensure!(self.alarm.quorum >= 1, "alarm.quorum must be >= 1");
        ensure!(self.alarm.quorum <= self.data.indices.len(), "alarm.quorum exceeds the number of indices");
        ensure!(!self.alarm.validity_days.is_empty(), "alarm.validity_days must not be empty");
        ensure!(self.alarm.validity_days.iter().all(|w| *w >= 1), "validity days must be >= 1");
        self.split.validate()?;
        if let Some(s) = &self.search {
            ensure!(s.trials >= 1, "search.trials must be >= 1");
            ensure!(!s.experts.is_empty() && s.experts.iter().all(|m| *m >= 1), "search.experts must list counts >= 1");
            ensure!(s.mean_coeff_scale.iter().chain(&s.gate_coeff_scale).all(|v| *v > 0.0), "search scales must be positive");
            ensure!(s.grid_size >= 1, "search.grid_size must be >= 1");
            ensure!(s.nu > 0.0 && s.nu < 1.0, "search.nu must lie in (0, 1)");
        }
        ensure!(self.explain.points >= 2 && self.explain.lo < self.explain.hi, "explain grid is empty");
        Ok(())
    }

    /// Columns the input file must provide.
    pub fn required_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.data.timestamp_column.as_str()];
        cols.extend(self.data.machine_column.as_deref());
        cols.extend(self.data.indices.iter().map(String::as_str));
        cols.extend(self.data.covariates.iter().map(String::as_str));
        cols
    }

    /// SHA-256 of the canonical JSON rendering, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
seed = 3
[data]
indices = ["a", "b"]
covariates = ["load"]
[alarm]
quorum = 2
validity_days = [1, 2]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.data.timestamp_column, "datetime");
        assert_eq!(c.split.train_size, 200);
        assert_eq!(c.split.validation_size, 100);
        assert!((c.split.fraction - 0.1).abs() < 1e-15);
        assert_eq!(c.alarm.patience, 1);
        assert!((c.score.decay() - (100f64).ln() / 5.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("seed = 3", "seed = 3\ntreshold = 0.9");
        assert!(PipelineConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("quorum = 2", "quorum = 2\npatiense = 4");
        assert!(PipelineConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for (from, to) in [
            ("schema_version = 1", "schema_version = 2"),
            ("quorum = 2", "quorum = 3"),
            ("validity_days = [1, 2]", "validity_days = [0]"),
            ("covariates = [\"load\"]", "covariates = [\"a\"]"),
        ] {
            assert!(PipelineConfig::from_toml(&MINIMAL.replace(from, to)).is_err(), "{to}");
        }
        let mut c = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert!(c.apply(&Overrides { threshold: Some(1.0), ..Overrides::default() }).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = PipelineConfig::from_toml(MINIMAL).unwrap();
        let again = PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
    }

    #[test]
    fn hash_tracks_every_field() {
        let base = PipelineConfig::from_toml(MINIMAL).unwrap();
        let h = base.hash();
        assert_eq!(h.len(), 64);
        let mut variants = Vec::new();
        let mut c = base.clone();
        c.seed += 1;
        variants.push(c);
        let mut c = base.clone();
        c.score.threshold = 0.97;
        variants.push(c);
        let mut c = base.clone();
        c.alarm.patience = 2;
        variants.push(c);
        let mut c = base.clone();
        c.split.margin_days = 4.0;
        variants.push(c);
        let mut c = base.clone();
        c.model.prior.noise_log_scale = 2.0;
        variants.push(c);
        let mut c = base.clone();
        c.data.covariates.push("speed".into());
        variants.push(c);
        for v in variants {
            assert_ne!(v.hash(), h);
        }
    }
}
