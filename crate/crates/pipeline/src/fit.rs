//! Parallel posterior fits and the random hyperparameter search.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use nominal_core::density::{Dataset, PriorSpec};
use nominal_core::posterior::{psis_loo, run_chain, PosteriorSample, SamplerConfig};
use nominal_core::selection::{coverage_cost, coverage_counts, select_best, Trial, DEFAULT_GRID_SIZE, DEFAULT_NU};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, PriorConfig};

/// Deterministic per-task seed: the first 8 bytes of SHA-256 over the inputs.
pub fn derive_seed(base: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Chains run on the rayon pool; the result equals `sample_posterior`.
pub fn fit_parallel(data: &Dataset, prior: &PriorSpec, m: usize, config: &SamplerConfig) -> Result<PosteriorSample> {
    config.validate()?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(data, prior, m, config, c))
        .collect::<nominal_core::Result<Vec<_>>>()?;
    Ok(PosteriorSample::from_chains(chains, config.seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub experts: usize,
    pub prior: PriorConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub id: usize,
    pub candidate: Candidate,
    pub metric: f64,
    pub metric_se: f64,
    pub coverage_cost: f64,
    pub pareto_k_max: f64,
    pub acceptance_rate: f64,
    pub error: Option<String>,
    pub selected: bool,
}

/// The configured model alone, or a seeded draw without replacement from the search grid.
pub fn candidates(config: &PipelineConfig, index_pos: usize) -> Vec<Candidate> {
    let base = config.model.prior;
    let Some(search) = &config.search else {
        return vec![Candidate { experts: config.model.experts, prior: base }];
    };
    let means = if search.mean_coeff_scale.is_empty() { vec![base.mean_coeff_scale] } else { search.mean_coeff_scale.clone() };
    let gates = if search.gate_coeff_scale.is_empty() { vec![base.gate_coeff_scale] } else { search.gate_coeff_scale.clone() };
    let mut grid = Vec::new();
    for &m in &search.experts {
        for &ms in &means {
            for &gs in &gates {
                grid.push(Candidate { experts: m, prior: PriorConfig { mean_coeff_scale: ms, gate_coeff_scale: gs, ..base } });
            }
        }
    }
    let take = search.trials.min(grid.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "search", index_pos as u64, 0));
    let mut picked = rand::seq::index::sample(&mut rng, grid.len(), take).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| grid[i]).collect()
}

pub struct IndexFit {
    pub trials: Vec<TrialRecord>,
    pub sample: PosteriorSample,
}

/// Fits every candidate on `train`, scores PSIS-LOO and coverage cost, and
/// keeps the posterior picked by the Pareto traversal.
pub fn fit_index(config: &PipelineConfig, index_pos: usize, train: &Dataset) -> Result<IndexFit> {
    let cands = candidates(config, index_pos);
    let (grid_size, nu) = config.search.as_ref().map(|s| (s.grid_size, s.nu)).unwrap_or((DEFAULT_GRID_SIZE, DEFAULT_NU));
    let results: Vec<(TrialRecord, Option<PosteriorSample>)> = cands
        .par_iter()
        .enumerate()
        .map(|(id, cand)| {
            let seed = derive_seed(config.seed, "fit", index_pos as u64, id as u64);
            let outcome = (|| -> Result<(PosteriorSample, f64, f64, f64, f64)> {
                let sampler = config.sampler.with_seed(seed);
                let sample = fit_parallel(train, &cand.prior.into(), cand.experts, &sampler)?;
                let loo = psis_loo(&sample, train)?;
                let grid = coverage_counts(&sample, train, grid_size, derive_seed(config.seed, "coverage", index_pos as u64, id as u64))?;
                Ok((sample, loo.estimate, loo.se, coverage_cost(&grid), loo.max_k()))
            })();
            match outcome {
                Ok((sample, metric, se, cost, k)) => {
                    let rate = sample.acceptance_rate;
                    let rec = TrialRecord {
                        id,
                        candidate: *cand,
                        metric,
                        metric_se: se,
                        coverage_cost: cost,
                        pareto_k_max: k,
                        acceptance_rate: rate,
                        error: None,
                        selected: false,
                    };
                    (rec, Some(sample))
                }
                Err(e) => {
                    let rec = TrialRecord {
                        id,
                        candidate: *cand,
                        metric: f64::NAN,
                        metric_se: f64::NAN,
                        coverage_cost: f64::NAN,
                        pareto_k_max: f64::NAN,
                        acceptance_rate: f64::NAN,
                        error: Some(format!("{e:#}")),
                        selected: false,
                    };
                    (rec, None)
                }
            }
        })
        .collect();

    let trials: Vec<Trial> = results
        .iter()
        .filter(|(r, _)| r.error.is_none() && r.metric.is_finite() && r.coverage_cost.is_finite())
        .map(|(r, _)| Trial { id: r.id, metric: r.metric, metric_se: r.metric_se, coverage_cost: r.coverage_cost })
        .collect();
    if trials.is_empty() {
        let why: Vec<String> = results.iter().filter_map(|(r, _)| r.error.clone()).collect();
        return Err(anyhow!("every trial failed: {}", why.join("; ")));
    }
    let best = select_best(&trials, nu)?.id;
    let mut records = Vec::with_capacity(results.len());
    let mut chosen = None;
    for (mut rec, sample) in results {
        if rec.id == best {
            rec.selected = true;
            chosen = sample;
        }
        records.push(rec);
    }
    Ok(IndexFit { trials: records, sample: chosen.expect("selected trial has a sample") })
}

pub fn write_trials(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "trial",
        "experts",
        "mean_coeff_scale",
        "gate_coeff_scale",
        "psis_loo",
        "psis_loo_se",
        "coverage_cost",
        "pareto_k_max",
        "acceptance_rate",
        "selected",
        "error",
    ])?;
    for t in trials {
        w.write_record([
            t.id.to_string(),
            t.candidate.experts.to_string(),
            t.candidate.prior.mean_coeff_scale.to_string(),
            t.candidate.prior.gate_coeff_scale.to_string(),
            t.metric.to_string(),
            t.metric_se.to_string(),
            t.coverage_cost.to_string(),
            t.pareto_k_max.to_string(),
            t.acceptance_rate.to_string(),
            t.selected.to_string(),
            t.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
