//! Synthetic telemetry drawn from known models, with injected faults.

use anyhow::{ensure, Result};
use nominal_core::density::{BehaviorGateParams, ExpertParams, MixingGateParams, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{FailureRecord, Telemetry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum CovariateLaw {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub law: CovariateLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexSpec {
    pub name: String,
    pub params: ModelParams,
}

/// Rows `onset..=failure` are shifted by `shift_sd` fused sds plus
/// `drift_sd_per_step` fused sds per row after onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub onset: usize,
    pub failure: usize,
    #[serde(default)]
    pub shift_sd: f64,
    #[serde(default)]
    pub drift_sd_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Unix seconds of the first row.
    pub start: i64,
    pub step_seconds: i64,
    pub n: usize,
    #[serde(default = "default_machine")]
    pub machine: String,
    pub covariates: Vec<CovariateSpec>,
    pub indices: Vec<IndexSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

fn default_machine() -> String {
    "1".to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOutput {
    /// Covariate columns first, then index columns.
    pub telemetry: Telemetry,
    pub failures: Vec<FailureRecord>,
    pub onsets: Vec<i64>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n >= 1, "synthetic n must be >= 1");
        ensure!(self.step_seconds > 0, "step_seconds must be positive");
        ensure!(!self.indices.is_empty(), "at least one index is required");
        for ix in &self.indices {
            ensure!(ix.params.n_covariates() == self.covariates.len(), "index {} expects {} covariates", ix.name, ix.params.n_covariates());
        }
        for c in &self.covariates {
            match c.law {
                CovariateLaw::Uniform { lo, hi } => ensure!(lo < hi, "covariate {}: lo must be below hi", c.name),
                CovariateLaw::Gaussian { sd, .. } => ensure!(sd > 0.0, "covariate {}: sd must be positive", c.name),
            }
        }
        for f in &self.faults {
            ensure!(f.onset <= f.failure && f.failure < self.n, "fault rows out of range");
        }
        Ok(())
    }

    /// Hourly stream of 100 days, two indices on two covariates, failures on
    /// days 60, 75 and 90 at 06:00 with a mean shift from midnight of the
    /// previous day.
    pub fn demo(shift_sd: f64) -> Self {
        let hour = 3600;
        let day = 24;
        let start = 1_420_070_400; // 2015-01-01T00:00:00Z
        let two = ModelParams::new(
            vec![ExpertParams::new(1.0, vec![1.5, 0.3], 0.3).unwrap(), ExpertParams::new(-0.5, vec![-0.8, 0.1], 0.5).unwrap()],
            MixingGateParams::from_free_rows(&[vec![0.0, 3.0, 0.0]], 3).unwrap(),
            BehaviorGateParams { coeffs: vec![1.0, 0.0, 0.5] },
        )
        .unwrap();
        let one = ModelParams::single_expert(0.5, vec![-1.0, 0.8], 0.4).unwrap();
        let faults = [60, 75, 90]
            .iter()
            .map(|d| FaultSpec { onset: (d - 1) * day, failure: d * day + 6, shift_sd, drift_sd_per_step: 0.0 })
            .collect();
        SyntheticSpec {
            start,
            step_seconds: hour,
            n: 100 * day,
            machine: default_machine(),
            covariates: vec![
                CovariateSpec { name: "load".into(), law: CovariateLaw::Uniform { lo: -1.0, hi: 1.0 } },
                CovariateSpec { name: "temp".into(), law: CovariateLaw::Gaussian { mean: 0.0, sd: 1.0 } },
            ],
            indices: vec![IndexSpec { name: "hi_a".into(), params: two }, IndexSpec { name: "hi_b".into(), params: one }],
            faults,
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n;
    let d = spec.covariates.len();
    let mut xs = vec![vec![0.0; n]; d];
    for i in 0..n {
        for (j, c) in spec.covariates.iter().enumerate() {
            xs[j][i] = match c.law {
                CovariateLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
                CovariateLaw::Gaussian { mean, sd } => Normal::new(mean, sd)?.sample(&mut rng),
            };
        }
    }
    let mut ys = vec![vec![0.0; n]; spec.indices.len()];
    let mut x = vec![0.0; d];
    for i in 0..n {
        for (j, col) in xs.iter().enumerate() {
            x[j] = col[i];
        }
        for (k, ix) in spec.indices.iter().enumerate() {
            let c = ix.params.conditional(&x)?;
            let mut y = c.sample(&mut rng);
            for f in spec.faults.iter().filter(|f| (f.onset..=f.failure).contains(&i)) {
                let sd = c.variance().sqrt();
                y += sd * (f.shift_sd + f.drift_sd_per_step * (i - f.onset) as f64);
            }
            ys[k][i] = y;
        }
    }
    let timestamps: Vec<i64> = (0..n as i64).map(|i| spec.start + i * spec.step_seconds).collect();
    let names = spec.covariates.iter().map(|c| c.name.clone()).chain(spec.indices.iter().map(|i| i.name.clone())).collect();
    xs.extend(ys);
    let telemetry = Telemetry::new(timestamps.clone(), names, xs)?;
    let failures = spec
        .faults
        .iter()
        .enumerate()
        .map(|(i, f)| FailureRecord { timestamp: timestamps[f.failure], machine: Some(spec.machine.clone()), component: Some(format!("fault{}", i + 1)) })
        .collect();
    let onsets = spec.faults.iter().map(|f| timestamps[f.onset]).collect();
    Ok(SyntheticOutput { telemetry, failures, onsets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nominal_core::anomaly::{pit, score_series};
    use nominal_core::calibration::ks_uniform;
    use nominal_core::posterior::PosteriorSample;

    #[test]
    fn deterministic_given_seed() {
        let s = SyntheticSpec { n: 300, faults: vec![], ..SyntheticSpec::demo(0.0) };
        assert_eq!(generate_synthetic(&s, 4).unwrap(), generate_synthetic(&s, 4).unwrap());
        assert_ne!(generate_synthetic(&s, 4).unwrap().telemetry, generate_synthetic(&s, 5).unwrap().telemetry);
    }

    #[test]
    fn unshifted_responses_are_calibrated() {
        let s = SyntheticSpec { n: 5000, faults: vec![], ..SyntheticSpec::demo(0.0) };
        let out = generate_synthetic(&s, 1).unwrap();
        let t = &out.telemetry;
        for ix in &s.indices {
            let d = t.dataset(&ix.name, &["load".into(), "temp".into()]).unwrap();
            let u: Vec<f64> = (0..d.len()).map(|i| pit(&ix.params, d.x(i), d.y(i)).unwrap()).collect();
            assert!(ks_uniform(&u).unwrap().passes(0.01), "{}", ix.name);
        }
    }

    #[test]
    fn large_shift_saturates_after_onset() {
        let mut s = SyntheticSpec::demo(10.0);
        s.n = 400;
        s.faults = vec![FaultSpec { onset: 200, failure: 399, shift_sd: 10.0, drift_sd_per_step: 0.0 }];
        let out = generate_synthetic(&s, 2).unwrap();
        let ix = &s.indices[1];
        let d = out.telemetry.dataset(&ix.name, &["load".into(), "temp".into()]).unwrap();
        let series = score_series(&d, &PosteriorSample::point(ix.params.clone()), 5, nominal_core::anomaly::default_decay(5), 0.975).unwrap();
        // Series index i covers rows i..=i+5.
        assert!(series.values[200..].iter().all(|v| *v >= 0.99));
        assert_eq!(out.onsets, vec![out.telemetry.timestamps[200]]);
    }

    #[test]
    fn single_expert_is_plain_regression() {
        let mut s = SyntheticSpec::demo(0.0);
        s.indices.truncate(1);
        s.indices[0].params = ModelParams::single_expert(2.0, vec![1.0, 0.0], 1e-9).unwrap();
        s.n = 50;
        s.faults.clear();
        let out = generate_synthetic(&s, 3).unwrap();
        let load = out.telemetry.column("load").unwrap();
        let y = out.telemetry.column("hi_a").unwrap();
        for (l, y) in load.iter().zip(y) {
            assert!((y - (2.0 + l)).abs() < 1e-7);
        }
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let s = SyntheticSpec::demo(8.0);
        let text = toml::to_string(&s).unwrap();
        let back: SyntheticSpec = toml::from_str(&text).unwrap();
        assert_eq!(s, back);
    }
}
