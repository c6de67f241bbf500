//! Posterior sampling and fit diagnostics.
//!
//! The sampler is a blocked, adaptive random-walk Metropolis scheme on an
//! unconstrained parameter vector (noise sds enter as `ln sd`). Each expert,
//! the free rows of the mixing gate and the behavior gate form separate
//! blocks. During burn-in every block adapts its proposal covariance to the
//! running covariance of its own trace and its global scale towards the
//! target acceptance rate; afterwards the kernel is fixed.

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::density::{
    log_likelihood, log_prior, BehaviorGateParams, ConditionalDensity, Dataset, ExpertParams, MixingGateParams, ModelParams,
    PriorSpec,
};
use crate::error::invalid;
use crate::linalg::{least_squares, Matrix};
use crate::math::{self, log_sum_exp};
use crate::{Error, Result};

/// Draws from the posterior, pooled over chains in chain order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PosteriorSample {
    draws: Vec<ModelParams>,
    pub acceptance_rate: f64,
    pub chain_count: usize,
    pub seed: u64,
}

impl PosteriorSample {
    pub fn new(draws: Vec<ModelParams>, acceptance_rate: f64, chain_count: usize, seed: u64) -> Result<Self> {
        let first = draws.first().ok_or(Error::Empty("posterior draws"))?;
        let (m, n) = (first.n_experts(), first.n_covariates());
        if draws.iter().any(|d| d.n_experts() != m || d.n_covariates() != n) {
            return Err(invalid("posterior draws must share a shape"));
        }
        if chain_count == 0 {
            return Err(invalid("chain_count must be positive"));
        }
        Ok(PosteriorSample { draws, acceptance_rate, chain_count, seed })
    }

    /// A sample holding a single parameter value.
    pub fn point(params: ModelParams) -> Self {
        PosteriorSample { draws: vec![params], acceptance_rate: 1.0, chain_count: 1, seed: 0 }
    }

    pub fn from_chains(chains: Vec<ChainOutput>, seed: u64) -> Result<Self> {
        if chains.is_empty() {
            return Err(Error::Empty("chains"));
        }
        let (mut accepted, mut proposed) = (0u64, 0u64);
        let chain_count = chains.len();
        let mut draws = Vec::with_capacity(chains.iter().map(|c| c.draws.len()).sum());
        for c in chains {
            accepted += c.accepted;
            proposed += c.proposed;
            draws.extend(c.draws);
        }
        let rate = if proposed == 0 { 0.0 } else { accepted as f64 / proposed as f64 };
        PosteriorSample::new(draws, rate, chain_count, seed)
    }

    pub fn draws(&self) -> &[ModelParams] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn n_experts(&self) -> usize {
        self.draws[0].n_experts()
    }

    pub fn n_covariates(&self) -> usize {
        self.draws[0].n_covariates()
    }

    /// Componentwise posterior mean (noise sds averaged on the natural scale).
    pub fn mean_params(&self) -> ModelParams {
        let layout = ParamLayout::new(self.n_experts(), self.n_covariates());
        let mut acc = vec![0.0; layout.dim()];
        let mut buf = vec![0.0; layout.dim()];
        for d in &self.draws {
            layout.pack_natural(d, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        let s = self.draws.len() as f64;
        acc.iter_mut().for_each(|a| *a /= s);
        let mut out = self.draws[0].clone();
        layout.unpack_natural(&acc, &mut out);
        out
    }

    /// Posterior mean and sd of every scalar parameter in the natural layout
    /// (per expert: intercept, slopes, noise sd; then free gate rows; then
    /// the behavior gate).
    pub fn summary(&self) -> (Vec<f64>, Vec<f64>) {
        let layout = ParamLayout::new(self.n_experts(), self.n_covariates());
        let d = layout.dim();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut buf = vec![0.0; d];
        for p in &self.draws {
            layout.pack_natural(p, &mut buf);
            for j in 0..d {
                sum[j] += buf[j];
                sq[j] += buf[j] * buf[j];
            }
        }
        let s = self.draws.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|v| v / s).collect();
        let sd = sq.iter().zip(&mean).map(|(q, m)| (q / s - m * m).max(0.0).sqrt()).collect();
        (mean, sd)
    }
}

/// Sampler settings. `iterations` are kept per chain after `burn_in`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplerConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { chains: 4, iterations: 1000, burn_in: 1000, thin: 1, target_acceptance: 0.25, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Sampler("at least one chain is required".to_string()));
        }
        if self.iterations == 0 {
            return Err(Error::Sampler("zero iterations requested".to_string()));
        }
        if self.thin == 0 {
            return Err(Error::Sampler("thin must be at least 1".to_string()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Sampler("target acceptance must be in (0, 1)".to_string()));
        }
        Ok(())
    }

    /// Number of draws the full run keeps.
    pub fn total_draws(&self) -> usize {
        self.chains * self.iterations.div_ceil(self.thin)
    }
}

/// Output of a single chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<ModelParams>,
    pub accepted: u64,
    pub proposed: u64,
}

/// Flat parameter vector layout: per expert `[intercept, slopes.., ln sd]`,
/// then the free mixing rows, then the behavior gate.
#[derive(Debug, Clone, Copy)]
struct ParamLayout {
    m: usize,
    n: usize,
}

impl ParamLayout {
    fn new(m: usize, n: usize) -> Self {
        ParamLayout { m, n }
    }

    fn expert_dim(&self) -> usize {
        self.n + 2
    }

    fn gate_offset(&self) -> usize {
        self.m * self.expert_dim()
    }

    fn behavior_offset(&self) -> usize {
        self.gate_offset() + (self.m - 1) * (self.n + 1)
    }

    fn dim(&self) -> usize {
        self.behavior_offset() + self.n + 1
    }

    /// Sampled blocks as index ranges. Gates only matter with several experts.
    fn blocks(&self) -> Vec<core::ops::Range<usize>> {
        let e = self.expert_dim();
        let mut out: Vec<_> = (0..self.m).map(|i| i * e..(i + 1) * e).collect();
        if self.m > 1 {
            out.push(self.gate_offset()..self.behavior_offset());
            out.push(self.behavior_offset()..self.dim());
        }
        out
    }

    fn pack_with(&self, p: &ModelParams, out: &mut [f64], sd_map: fn(f64) -> f64) {
        let e = self.expert_dim();
        for (i, ex) in p.experts.iter().enumerate() {
            let o = &mut out[i * e..(i + 1) * e];
            o[0] = ex.intercept;
            o[1..=self.n].copy_from_slice(&ex.slopes);
            o[self.n + 1] = sd_map(ex.noise_sd);
        }
        let g = self.gate_offset();
        let free = (self.m - 1) * (self.n + 1);
        out[g..g + free].copy_from_slice(&p.mixing.matrix().as_slice()[..free]);
        out[self.behavior_offset()..].copy_from_slice(&p.behavior.coeffs);
    }

    fn unpack_with(&self, v: &[f64], p: &mut ModelParams, sd_map: fn(f64) -> f64) {
        let e = self.expert_dim();
        for (i, ex) in p.experts.iter_mut().enumerate() {
            let o = &v[i * e..(i + 1) * e];
            ex.intercept = o[0];
            ex.slopes.copy_from_slice(&o[1..=self.n]);
            ex.noise_sd = sd_map(o[self.n + 1]);
        }
        let g = self.gate_offset();
        p.mixing.free_values_mut().copy_from_slice(&v[g..self.behavior_offset()]);
        p.behavior.coeffs.copy_from_slice(&v[self.behavior_offset()..]);
    }

    fn pack(&self, p: &ModelParams, out: &mut [f64]) {
        self.pack_with(p, out, f64::ln)
    }

    fn unpack(&self, v: &[f64], p: &mut ModelParams) {
        self.unpack_with(v, p, f64::exp)
    }

    fn pack_natural(&self, p: &ModelParams, out: &mut [f64]) {
        self.pack_with(p, out, |s| s)
    }

    fn unpack_natural(&self, v: &[f64], p: &mut ModelParams) {
        self.unpack_with(v, p, |s| s)
    }

    fn log_sds(&self, v: &[f64]) -> f64 {
        (0..self.m).map(|i| v[i * self.expert_dim() + self.n + 1]).sum()
    }
}

/// Log posterior density of the unconstrained vector, including the
/// Jacobian of the `ln sd` transform.
fn log_target(layout: &ParamLayout, v: &[f64], scratch: &mut ModelParams, data: &Dataset, prior: &PriorSpec) -> f64 {
    if v.iter().any(|x| !x.is_finite()) {
        return f64::NEG_INFINITY;
    }
    layout.unpack(v, scratch);
    if scratch.experts.iter().any(|e| !(e.noise_sd > 0.0) || !e.noise_sd.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let lp = match log_prior(scratch, prior) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    let ll = match log_likelihood(scratch, data) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    let total = ll + lp + layout.log_sds(v);
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// Starting point: least squares for every expert (jittered apart), zero gates.
fn initial_params<R: Rng + ?Sized>(data: &Dataset, m: usize, rng: &mut R) -> Result<ModelParams> {
    let n = data.n_covariates();
    let mut design = Matrix::zeros(data.len(), n + 1);
    for i in 0..data.len() {
        design[(i, 0)] = 1.0;
        design.row_mut(i)[1..].copy_from_slice(data.x(i));
    }
    let beta = least_squares(&design, data.responses(), 1e-8)?;
    let resid: f64 = (0..data.len())
        .map(|i| {
            let r = data.y(i) - beta[0] - crate::linalg::dot(&beta[1..], data.x(i));
            r * r
        })
        .sum();
    let sd = (resid / data.len() as f64).sqrt().max(1e-3);
    let mut experts = Vec::with_capacity(m);
    for _ in 0..m {
        let (intercept, slopes) = if m == 1 {
            (beta[0], beta[1..].to_vec())
        } else {
            let z: f64 = StandardNormal.sample(rng);
            let slopes = beta[1..]
                .iter()
                .map(|b| {
                    let z: f64 = StandardNormal.sample(rng);
                    b + 0.1 * z
                })
                .collect();
            (beta[0] + sd * z, slopes)
        };
        experts.push(ExpertParams::new(intercept, slopes, sd)?);
    }
    let mut mixing = MixingGateParams::zeros(m, n + 1);
    for v in mixing.free_values_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = 0.1 * z;
    }
    ModelParams::new(experts, mixing, BehaviorGateParams { coeffs: vec![0.0; n + 1] })
}

/// Proposal state of one block.
struct BlockKernel {
    range: core::ops::Range<usize>,
    log_scale: f64,
    mean: Vec<f64>,
    /// Running sum of outer products of centred samples (Welford).
    scatter: Matrix,
    count: usize,
    chol: Matrix,
    accepted: u64,
    proposed: u64,
}

impl BlockKernel {
    fn new(range: core::ops::Range<usize>, init_sd: &[f64]) -> Self {
        let d = range.len();
        let mut chol = Matrix::zeros(d, d);
        for (i, s) in init_sd.iter().enumerate() {
            chol[(i, i)] = *s;
        }
        BlockKernel {
            range,
            log_scale: (2.38 / (d as f64).sqrt()).ln(),
            mean: vec![0.0; d],
            scatter: Matrix::zeros(d, d),
            count: 0,
            chol,
            accepted: 0,
            proposed: 0,
        }
    }

    fn observe(&mut self, v: &[f64]) {
        self.count += 1;
        let x = &v[self.range.clone()];
        let d = x.len();
        let mut delta = vec![0.0; d];
        for i in 0..d {
            delta[i] = x[i] - self.mean[i];
            self.mean[i] += delta[i] / self.count as f64;
        }
        for i in 0..d {
            for j in 0..d {
                self.scatter[(i, j)] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn refresh_covariance(&mut self) {
        if self.count < 2 * self.range.len() + 10 {
            return;
        }
        let d = self.range.len();
        let mut cov = self.scatter.clone();
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] /= (self.count - 1) as f64;
            }
        }
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
            cov[(i, i)] += 1e-10 + 1e-6 * cov[(i, i)].abs();
        }
        if let Ok(l) = cov.cholesky() {
            self.chol = l;
        }
    }

    fn propose<R: Rng + ?Sized>(&self, current: &[f64], out: &mut [f64], rng: &mut R) {
        out.copy_from_slice(current);
        let d = self.range.len();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let scale = self.log_scale.exp();
        for i in 0..d {
            let step: f64 = (0..=i).map(|j| self.chol[(i, j)] * z[j]).sum();
            out[self.range.start + i] += scale * step;
        }
    }
}

/// Runs one chain. The RNG stream is seeded with `config.seed + chain`.
pub fn run_chain(data: &Dataset, prior: &PriorSpec, m: usize, config: &SamplerConfig, chain: usize) -> Result<ChainOutput> {
    config.validate()?;
    prior.validate()?;
    if m == 0 {
        return Err(invalid("at least one expert is required"));
    }
    if data.is_empty() {
        return Err(Error::InsufficientData { len: 0, needed: 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(chain as u64));
    let n = data.n_covariates();
    let layout = ParamLayout::new(m, n);
    let mut scratch = initial_params(data, m, &mut rng)?;
    let mut current = vec![0.0; layout.dim()];
    layout.pack(&scratch, &mut current);
    let mut current_lp = log_target(&layout, &current, &mut scratch, data, prior);
    if !current_lp.is_finite() {
        return Err(Error::Sampler("log posterior is not finite at the initial point".to_string()));
    }

    let resid_sd = scratch.experts[0].noise_sd;
    let y_scale = {
        let ys = data.responses();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        (ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / ys.len() as f64).sqrt().max(resid_sd)
    };
    let nf = data.len() as f64;
    let mut kernels: Vec<BlockKernel> = layout
        .blocks()
        .into_iter()
        .enumerate()
        .map(|(b, range)| {
            let d = range.len();
            let init: Vec<f64> = if b < m {
                // Expert blocks: coefficient scale ~ residual sd / sqrt(N), log-sd ~ 1/sqrt(2N).
                (0..d)
                    .map(|j| if j == d - 1 { (0.5 / nf).sqrt() } else { resid_sd / nf.sqrt() * (1.0 + y_scale / resid_sd).min(10.0) })
                    .collect()
            } else {
                vec![0.1; d]
            };
            BlockKernel::new(range, &init)
        })
        .collect();

    let total = config.burn_in + config.iterations;
    let mut proposal = current.clone();
    let mut draws = Vec::with_capacity(config.iterations.div_ceil(config.thin));
    let (mut accepted, mut proposed) = (0u64, 0u64);
    for it in 0..total {
        let burning = it < config.burn_in;
        for kernel in kernels.iter_mut() {
            kernel.propose(&current, &mut proposal, &mut rng);
            let lp = log_target(&layout, &proposal, &mut scratch, data, prior);
            let log_u: f64 = rng.random::<f64>().ln();
            let accept = lp.is_finite() && log_u < lp - current_lp;
            if accept {
                current[kernel.range.clone()].copy_from_slice(&proposal[kernel.range.clone()]);
                current_lp = lp;
            }
            if burning {
                let gain = 1.0 / ((it + 1) as f64).powf(0.6);
                let hit = if accept { 1.0 } else { 0.0 };
                kernel.log_scale += gain * (hit - config.target_acceptance);
                kernel.observe(&current);
                if (it + 1) % 50 == 0 {
                    kernel.refresh_covariance();
                }
            } else {
                kernel.proposed += 1;
                if accept {
                    kernel.accepted += 1;
                }
            }
        }
        if !burning && (it - config.burn_in).is_multiple_of(config.thin) {
            layout.unpack(&current, &mut scratch);
            draws.push(scratch.clone());
        }
    }
    for k in &kernels {
        accepted += k.accepted;
        proposed += k.proposed;
    }
    if accepted == 0 {
        return Err(Error::Sampler("no proposal was accepted after burn-in".to_string()));
    }
    Ok(ChainOutput { draws, accepted, proposed })
}

/// Runs every chain sequentially and pools the draws.
pub fn sample_posterior(data: &Dataset, prior: &PriorSpec, m: usize, config: &SamplerConfig) -> Result<PosteriorSample> {
    config.validate()?;
    let chains = (0..config.chains)
        .map(|c| run_chain(data, prior, m, config, c))
        .collect::<Result<Vec<_>>>()?;
    PosteriorSample::from_chains(chains, config.seed)
}

/// Row-major `S × N` matrix of `ln p(y_i | x_i; θ_s)`.
pub fn pointwise_log_lik(sample: &PosteriorSample, data: &Dataset) -> Result<Vec<f64>> {
    let n = data.len();
    let mut out = vec![0.0; sample.len() * n];
    let mut buf = ConditionalDensity::default();
    for (s, p) in sample.draws().iter().enumerate() {
        for i in 0..n {
            p.conditional_into(data.x(i), &mut buf)?;
            out[s * n + i] = buf.logpdf(data.y(i));
        }
    }
    Ok(out)
}

fn column(ll: &[f64], s_count: usize, n: usize, i: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..s_count).map(|s| ll[s * n + i]));
}

/// Log pointwise predictive density.
pub fn lppd(sample: &PosteriorSample, data: &Dataset) -> Result<f64> {
    let ll = pointwise_log_lik(sample, data)?;
    Ok(lppd_from_matrix(&ll, sample.len(), data.len()))
}

pub fn lppd_from_matrix(ll: &[f64], s_count: usize, n: usize) -> f64 {
    let ln_s = (s_count as f64).ln();
    let mut col = Vec::with_capacity(s_count);
    (0..n)
        .map(|i| {
            column(ll, s_count, n, i, &mut col);
            if col.iter().all(|v| *v == col[0]) {
                col[0]
            } else {
                log_sum_exp(&col) - ln_s
            }
        })
        .sum()
}

/// Leave-one-out estimate from importance sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct LooEstimate {
    pub estimate: f64,
    pub se: f64,
    pub pointwise: Vec<f64>,
    /// Fitted generalized Pareto shape per point (NaN when not smoothed).
    pub pareto_k: Vec<f64>,
    /// False when too few draws forced raw importance weights.
    pub smoothed: bool,
}

impl LooEstimate {
    pub fn max_k(&self) -> f64 {
        self.pareto_k.iter().copied().filter(|k| !k.is_nan()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Points whose shape estimate exceeds 0.7.
    pub fn unreliable_points(&self) -> Vec<usize> {
        self.pareto_k.iter().enumerate().filter(|(_, k)| **k > 0.7).map(|(i, _)| i).collect()
    }
}

/// Minimum number of draws for Pareto smoothing.
pub const PSIS_MIN_DRAWS: usize = 100;

/// Method-of-moments generalized Pareto fit to non-negative excesses:
/// returns `(shape k, scale σ)`.
pub fn gpd_fit_moments(excess: &[f64]) -> Option<(f64, f64)> {
    let n = excess.len() as f64;
    if excess.len() < 2 {
        return None;
    }
    let m = excess.iter().sum::<f64>() / n;
    let v = excess.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (n - 1.0);
    if !(v > 0.0) || !(m > 0.0) {
        return None;
    }
    let r = m * m / v;
    Some((0.5 * (1.0 - r), 0.5 * m * (1.0 + r)))
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (1.0 - p).ln()
    } else {
        sigma / k * ((1.0 - p).powf(-k) - 1.0)
    }
}

/// Smooths log importance weights in place and returns the fitted shape.
fn smooth_log_weights(log_w: &mut [f64]) -> f64 {
    let s = log_w.len();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|a, b| log_w[*a].total_cmp(&log_w[*b]));
    let tail = (s as f64 * 0.2).ceil() as usize;
    let cutoff = (log_w[order[s - tail - 1]] - max).exp();
    let excess: Vec<f64> = order[s - tail..].iter().map(|&j| (log_w[j] - max).exp() - cutoff).collect();
    let mut k = f64::NAN;
    if let Some((shape, sigma)) = gpd_fit_moments(&excess) {
        k = shape;
        for (rank, &j) in order[s - tail..].iter().enumerate() {
            let p = (rank as f64 + 0.5) / tail as f64;
            let w = (cutoff + gpd_quantile(p, shape, sigma)).min(1.0);
            log_w[j] = w.ln() + max;
        }
    } else if excess.iter().all(|e| *e == 0.0) {
        k = f64::NEG_INFINITY;
    }
    // Truncate at S^(3/4) times the mean weight.
    let lse = log_sum_exp(log_w);
    let cap = lse - (s as f64).ln() + 0.75 * (s as f64).ln();
    for w in log_w.iter_mut() {
        *w = w.min(cap);
    }
    k
}

/// Pareto-smoothed importance sampling leave-one-out predictive density.
pub fn psis_loo(sample: &PosteriorSample, data: &Dataset) -> Result<LooEstimate> {
    let ll = pointwise_log_lik(sample, data)?;
    psis_loo_from_matrix(&ll, sample.len(), data.len())
}

pub fn psis_loo_from_matrix(ll: &[f64], s_count: usize, n: usize) -> Result<LooEstimate> {
    if n == 0 {
        return Err(Error::Empty("data"));
    }
    if ll.len() != s_count * n || s_count == 0 {
        return Err(Error::DimensionMismatch { expected: s_count * n, found: ll.len() });
    }
    let smoothed = s_count >= PSIS_MIN_DRAWS;
    let mut pointwise = Vec::with_capacity(n);
    let mut pareto_k = Vec::with_capacity(n);
    let mut col = Vec::with_capacity(s_count);
    let mut log_w = vec![0.0; s_count];
    for i in 0..n {
        column(ll, s_count, n, i, &mut col);
        if col.iter().all(|v| *v == col[0]) {
            pointwise.push(col[0]);
            pareto_k.push(f64::NEG_INFINITY);
            continue;
        }
        for (w, l) in log_w.iter_mut().zip(&col) {
            *w = -l;
        }
        let k = if smoothed { smooth_log_weights(&mut log_w) } else { f64::NAN };
        let num: Vec<f64> = log_w.iter().zip(&col).map(|(w, l)| w + l).collect();
        pointwise.push(log_sum_exp(&num) - log_sum_exp(&log_w));
        pareto_k.push(k);
    }
    let nf = n as f64;
    let estimate: f64 = pointwise.iter().sum();
    let mean = estimate / nf;
    let var = if n > 1 { pointwise.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0) } else { 0.0 };
    Ok(LooEstimate { estimate, se: (nf * var).sqrt(), pointwise, pareto_k, smoothed })
}

/// Central credible interval of a single-draw conditional distribution.
pub fn credible_interval(params: &ModelParams, x: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("level must be in (0, 1)"));
    }
    let c = params.conditional(x)?;
    let tail = 0.5 * (1.0 - level);
    Ok((c.quantile(tail, 1e-10)?, c.quantile(1.0 - tail, 1e-10)?))
}

/// Fraction of `(draw, point)` pairs whose response lies in the draw's
/// central credible interval, with a binomial standard error over points.
///
/// `y ∈ [q_lo, q_hi]` is checked as `(1 − l)/2 ≤ F(y) ≤ (1 + l)/2`, which is
/// the same event for a continuous increasing CDF and needs no root finding.
pub fn cic(sample: &PosteriorSample, data: &Dataset, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("level must be in (0, 1)"));
    }
    if data.is_empty() {
        return Err(Error::Empty("data"));
    }
    let lo = 0.5 * (1.0 - level);
    let hi = 1.0 - lo;
    let mut buf = ConditionalDensity::default();
    let mut inside = 0u64;
    for p in sample.draws() {
        for i in 0..data.len() {
            p.conditional_into(data.x(i), &mut buf)?;
            let u = buf.cdf(data.y(i));
            if u >= lo && u <= hi {
                inside += 1;
            }
        }
    }
    let total = (sample.len() * data.len()) as f64;
    let c = inside as f64 / total;
    Ok((c, (c * (1.0 - c) / data.len() as f64).sqrt()))
}

/// Fit and coverage diagnostics of one posterior sample on one dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitDiagnostics {
    pub lppd: f64,
    pub psis_loo: f64,
    pub psis_loo_se: f64,
    pub cic95: f64,
    pub cic95_se: f64,
    pub pareto_k_max: f64,
}

pub fn diagnose(sample: &PosteriorSample, data: &Dataset) -> Result<FitDiagnostics> {
    let ll = pointwise_log_lik(sample, data)?;
    let loo = psis_loo_from_matrix(&ll, sample.len(), data.len())?;
    let (cic95, cic95_se) = cic(sample, data, 0.95)?;
    Ok(FitDiagnostics {
        lppd: lppd_from_matrix(&ll, sample.len(), data.len()),
        psis_loo: loo.estimate,
        psis_loo_se: loo.se,
        cic95,
        cic95_se,
        pareto_k_max: loo.max_k(),
    })
}

/// One posterior-predictive draw per posterior draw at `x`.
pub fn predictive_draws<R: Rng + ?Sized>(sample: &PosteriorSample, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut buf = ConditionalDensity::default();
    sample
        .draws()
        .iter()
        .map(|p| {
            p.conditional_into(x, &mut buf)?;
            Ok(buf.sample(rng))
        })
        .collect()
}

/// Posterior-predictive mean and quantiles at `x` from predictive draws.
pub fn predictive_summary<R: Rng + ?Sized>(sample: &PosteriorSample, x: &[f64], probs: &[f64], rng: &mut R) -> Result<(f64, Vec<f64>)> {
    let mut draws = predictive_draws(sample, x, rng)?;
    let mut buf = ConditionalDensity::default();
    let mut mean = 0.0;
    for p in sample.draws() {
        p.conditional_into(x, &mut buf)?;
        mean += buf.mean();
    }
    mean /= sample.len() as f64;
    draws.sort_by(math::total_cmp);
    Ok((mean, probs.iter().map(|p| math::quantile_sorted(&draws, *p)).collect()))
}
