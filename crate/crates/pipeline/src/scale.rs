//! Standard scaling with statistics taken from the training rows only.

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use crate::ingest::Telemetry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub sd: Vec<f64>,
}

impl Scaler {
    pub fn fit(data: &Telemetry, names: &[String]) -> Result<Self> {
        if data.is_empty() {
            bail!("cannot fit a scaler on zero rows");
        }
        let n = data.len() as f64;
        let mut mean = Vec::with_capacity(names.len());
        let mut sd = Vec::with_capacity(names.len());
        for name in names {
            let col = data.column(name)?;
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            if !(v.sqrt() > 1e-12 * m.abs().max(1.0)) {
                bail!("column {name:?} has zero variance on the training rows");
            }
            mean.push(m);
            sd.push(v.sqrt());
        }
        Ok(Scaler { names: names.to_vec(), mean, sd })
    }

    /// Scaled copy; columns the scaler does not know are left untouched.
    pub fn apply(&self, data: &Telemetry) -> Result<Telemetry> {
        let mut out = data.clone();
        for (j, name) in self.names.iter().enumerate() {
            let Some(i) = out.names.iter().position(|n| n == name) else {
                bail!("no column named {name:?} to scale");
            };
            for v in &mut out.columns[i] {
                *v = (*v - self.mean[j]) / self.sd[j];
            }
        }
        Ok(out)
    }

    pub fn unscale(&self, name: &str, v: f64) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.mean[j] + self.sd[j] * v)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Fits on `fit_on`, then scales both tables.
pub fn standard_scale(fit_on: &Telemetry, apply_to: &Telemetry, names: &[String]) -> Result<(Telemetry, Telemetry, Scaler)> {
    let s = Scaler::fit(fit_on, names)?;
    Ok((s.apply(fit_on)?, s.apply(apply_to)?, s))
}
