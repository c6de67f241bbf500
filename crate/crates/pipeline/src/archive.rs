//! Versioned JSON archive of a fitted posterior and what is needed to reuse it.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nominal_core::posterior::PosteriorSample;
use serde::{Deserialize, Serialize};

use crate::config::PriorConfig;
use crate::scale::Scaler;

pub const ARCHIVE_FORMAT: &str = "nominal-posterior";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorArchive {
    pub format: String,
    pub version: u32,
    pub index: String,
    pub covariates: Vec<String>,
    pub experts: usize,
    pub prior: PriorConfig,
    pub config_hash: String,
    pub scaler: Scaler,
    /// Train covariate mean in scaled units.
    pub x_mean: Vec<f64>,
    pub sample: PosteriorSample,
}

impl PosteriorArchive {
    pub fn new(
        index: &str,
        covariates: &[String],
        prior: PriorConfig,
        config_hash: &str,
        scaler: Scaler,
        x_mean: Vec<f64>,
        sample: PosteriorSample,
    ) -> Self {
        PosteriorArchive {
            format: ARCHIVE_FORMAT.to_string(),
            version: ARCHIVE_VERSION,
            index: index.to_string(),
            covariates: covariates.to_vec(),
            experts: sample.n_experts(),
            prior,
            config_hash: config_hash.to_string(),
            scaler,
            x_mean,
            sample,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let a: PosteriorArchive = serde_json::from_str(&text).with_context(|| format!("decoding {}", path.display()))?;
        if a.format != ARCHIVE_FORMAT {
            bail!("{}: not a posterior archive (format {:?})", path.display(), a.format);
        }
        if a.version != ARCHIVE_VERSION {
            bail!("{}: archive version {} is not supported (expected {ARCHIVE_VERSION})", path.display(), a.version);
        }
        if a.sample.n_covariates() != a.covariates.len() || a.sample.n_experts() != a.experts {
            bail!("{}: archive header disagrees with its draws", path.display());
        }
        Ok(a)
    }
}
