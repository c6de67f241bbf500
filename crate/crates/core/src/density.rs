//! Fused mixture of affine Gaussian experts.
//!
//! At a covariate vector `x` the model embeds `Φ(x) = [1, x]`, computes
//! mixing probabilities `α = softmax(A Φ(x))` and a behavior weight
//! `β = expit(θ_B · Φ(x))`, and then fuses every base expert with the
//! α-weighted blend of all experts:
//!
//! ```text
//! mean_i = β (θ_i0 + x·θ_i) + (1 − β) Σ_j α_j (θ_j0 + x·θ_j)
//! sd_i   = sqrt(β σ_i² + (1 − β) Σ_j α_j σ_j²)
//! p(y|x) = Σ_i α_i N(y; mean_i, sd_i)
//! ```
//!
//! `β → 1` recovers a classical mixture of experts; `β → 0` collapses all
//! experts onto a single blended Gaussian. The last row of the mixing
//! matrix is frozen at zero so the softmax is identifiable.

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::invalid;
use crate::linalg::Matrix;
use crate::math::{self, log_sum_exp, normal_logpdf, std_normal_cdf};
use crate::{Error, Result};

/// One base expert: `y ~ N(intercept + x·slopes, noise_sd)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExpertParams {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub noise_sd: f64,
}

impl ExpertParams {
    pub fn new(intercept: f64, slopes: Vec<f64>, noise_sd: f64) -> Result<Self> {
        if !(noise_sd > 0.0) || !noise_sd.is_finite() {
            return Err(invalid("expert noise_sd must be positive and finite"));
        }
        Ok(ExpertParams { intercept, slopes, noise_sd })
    }

    pub fn mean_at(&self, x: &[f64]) -> f64 {
        self.intercept + crate::linalg::dot(&self.slopes, x)
    }
}

/// Softmax gate matrix, `M` rows by `n + 1` columns. Row `M − 1` is zero.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixingGateParams {
    matrix: Matrix,
}

impl MixingGateParams {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.rows() == 0 {
            return Err(invalid("mixing gate needs at least one row"));
        }
        if matrix.row(matrix.rows() - 1).iter().any(|&v| v != 0.0) {
            return Err(invalid("last mixing gate row must be identically zero"));
        }
        if matrix.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixing gate"));
        }
        Ok(MixingGateParams { matrix })
    }

    pub fn zeros(n_experts: usize, n_embed: usize) -> Self {
        MixingGateParams { matrix: Matrix::zeros(n_experts, n_embed) }
    }

    /// Builds the gate from its `M − 1` free rows; the reference row is appended.
    pub fn from_free_rows(free: &[Vec<f64>], n_embed: usize) -> Result<Self> {
        let mut m = Matrix::zeros(free.len() + 1, n_embed);
        for (i, r) in free.iter().enumerate() {
            if r.len() != n_embed {
                return Err(Error::DimensionMismatch { expected: n_embed, found: r.len() });
            }
            m.row_mut(i).copy_from_slice(r);
        }
        MixingGateParams::new(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn n_experts(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_embed(&self) -> usize {
        self.matrix.cols()
    }

    /// Mutable access to the free rows (all but the last).
    pub(crate) fn free_values_mut(&mut self) -> &mut [f64] {
        let len = (self.matrix.rows() - 1) * self.matrix.cols();
        &mut self.matrix.as_mut_slice()[..len]
    }

    fn logits_into(&self, phi: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = crate::linalg::dot(self.matrix.row(i), phi);
        }
    }
}

/// Logistic behavior gate coefficients, length `n + 1`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BehaviorGateParams {
    pub coeffs: Vec<f64>,
}

/// One draw of every model parameter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    pub experts: Vec<ExpertParams>,
    pub mixing: MixingGateParams,
    pub behavior: BehaviorGateParams,
}

impl ModelParams {
    pub fn new(experts: Vec<ExpertParams>, mixing: MixingGateParams, behavior: BehaviorGateParams) -> Result<Self> {
        let m = experts.len();
        if m == 0 {
            return Err(invalid("at least one expert is required"));
        }
        let n = experts[0].slopes.len();
        for e in &experts {
            if e.slopes.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: e.slopes.len() });
            }
            if !(e.noise_sd > 0.0) || !e.noise_sd.is_finite() {
                return Err(invalid("expert noise_sd must be positive and finite"));
            }
        }
        if mixing.n_experts() != m {
            return Err(Error::DimensionMismatch { expected: m, found: mixing.n_experts() });
        }
        if mixing.n_embed() != n + 1 {
            return Err(Error::DimensionMismatch { expected: n + 1, found: mixing.n_embed() });
        }
        if behavior.coeffs.len() != n + 1 {
            return Err(Error::DimensionMismatch { expected: n + 1, found: behavior.coeffs.len() });
        }
        if behavior.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("behavior gate"));
        }
        Ok(ModelParams { experts, mixing, behavior })
    }

    /// A single affine Gaussian expert; gates are trivial.
    pub fn single_expert(intercept: f64, slopes: Vec<f64>, noise_sd: f64) -> Result<Self> {
        let n = slopes.len();
        ModelParams::new(
            vec![ExpertParams::new(intercept, slopes, noise_sd)?],
            MixingGateParams::zeros(1, n + 1),
            BehaviorGateParams { coeffs: vec![0.0; n + 1] },
        )
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.experts[0].slopes.len()
    }

    /// Evaluates gates and fusion at `x`.
    pub fn conditional(&self, x: &[f64]) -> Result<ConditionalDensity> {
        let mut out = ConditionalDensity::with_capacity(self.n_experts());
        self.conditional_into(x, &mut out)?;
        Ok(out)
    }

    /// As [`ModelParams::conditional`], reusing the buffers of `out`.
    pub fn conditional_into(&self, x: &[f64], out: &mut ConditionalDensity) -> Result<()> {
        let n = self.n_covariates();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x.len() });
        }
        let m = self.n_experts();
        out.weights.resize(m, 0.0);
        out.means.resize(m, 0.0);
        out.sds.resize(m, 0.0);
        // Φ(x) = [1, x] is never materialised: gate rows are split as [b, a].
        for i in 0..m {
            let row = self.mixing.matrix.row(i);
            out.weights[i] = row[0] + crate::linalg::dot(&row[1..], x);
        }
        if out.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gate logits"));
        }
        math::softmax_in_place(&mut out.weights);
        let c = &self.behavior.coeffs;
        let beta = math::expit(c[0] + crate::linalg::dot(&c[1..], x));
        out.beta = beta;
        let mut blend_mean = 0.0;
        let mut blend_var = 0.0;
        for (i, e) in self.experts.iter().enumerate() {
            let mu = e.mean_at(x);
            out.means[i] = mu;
            blend_mean += out.weights[i] * mu;
            blend_var += out.weights[i] * e.noise_sd * e.noise_sd;
        }
        for (i, e) in self.experts.iter().enumerate() {
            out.means[i] = beta * out.means[i] + (1.0 - beta) * blend_mean;
            out.sds[i] = (beta * e.noise_sd * e.noise_sd + (1.0 - beta) * blend_var).sqrt();
        }
        Ok(())
    }

    /// Draws a response at `x`: allocate an expert from the mixing gate,
    /// then sample its fused Gaussian.
    pub fn sample_response<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        let c = self.conditional(x)?;
        Ok(c.sample(rng))
    }
}

/// Mixture weights and fused Gaussian components at one covariate vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditionalDensity {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub beta: f64,
}

impl ConditionalDensity {
    pub fn with_capacity(m: usize) -> Self {
        ConditionalDensity {
            weights: Vec::with_capacity(m),
            means: Vec::with_capacity(m),
            sds: Vec::with_capacity(m),
            beta: 0.0,
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (m, s))| w * math::normal_pdf(y, *m, *s))
            .sum()
    }

    pub fn logpdf(&self, y: f64) -> f64 {
        let m = self.weights.len();
        if m == 1 {
            return normal_logpdf(y, self.means[0], self.sds[0]);
        }
        let mut terms = [0.0f64; 16];
        if m <= terms.len() {
            for i in 0..m {
                terms[i] = self.weights[i].ln() + normal_logpdf(y, self.means[i], self.sds[i]);
            }
            log_sum_exp(&terms[..m])
        } else {
            let terms: Vec<f64> = (0..m)
                .map(|i| self.weights[i].ln() + normal_logpdf(y, self.means[i], self.sds[i]))
                .collect();
            log_sum_exp(&terms)
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let p: f64 = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (m, s))| w * std_normal_cdf((y - m) / s))
            .sum();
        p.clamp(math::TAIL_FLOOR, 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (m, s))| w * (s * s + (m - mu) * (m - mu)))
            .sum()
    }

    /// Bracket guaranteed to contain all quantiles of interest: mean ± 12 max sd.
    pub fn bracket(&self) -> (f64, f64) {
        let lo = self.means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sd = self.sds.iter().copied().fold(0.0, f64::max);
        (lo - 12.0 * sd, hi + 12.0 * sd)
    }

    /// Quantile by safeguarded Newton on the CDF; `tol` is on the CDF scale.
    pub fn quantile(&self, p: f64, tol: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(invalid("quantile level must be in (0, 1)"));
        }
        let (lo, hi) = self.bracket();
        math::solve_increasing(|y| self.cdf(y), |y| self.pdf(y), p, lo, hi, tol)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        self.means[chosen] + self.sds[chosen] * z
    }
}

/// `Φ(x) = [1, x]`.
pub fn embed(x: &[f64], n: usize) -> Result<Vec<f64>> {
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x.len() });
    }
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    out.extend_from_slice(x);
    Ok(out)
}

pub fn mixing_weights(params: &MixingGateParams, x: &[f64]) -> Result<Vec<f64>> {
    let phi = embed(x, params.n_embed() - 1)?;
    let mut out = vec![0.0; params.n_experts()];
    params.logits_into(&phi, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gate logits"));
    }
    math::softmax_in_place(&mut out);
    Ok(out)
}

pub fn behavior_beta(params: &BehaviorGateParams, x: &[f64]) -> Result<f64> {
    let phi = embed(x, params.coeffs.len() - 1)?;
    Ok(math::expit(crate::linalg::dot(&params.coeffs, &phi)))
}

/// Fused expert parameters at `x`. With `β = 1` this returns the base
/// experts; with `β = 0` every entry equals the blend.
pub fn fuse(params: &ModelParams, x: &[f64]) -> Result<Vec<ExpertParams>> {
    let alpha = mixing_weights(&params.mixing, x)?;
    let beta = behavior_beta(&params.behavior, x)?;
    Ok(fuse_with(params, &alpha, beta))
}

/// Fusion for given gate outputs.
pub fn fuse_with(params: &ModelParams, alpha: &[f64], beta: f64) -> Vec<ExpertParams> {
    let n = params.n_covariates();
    let mut blend_coef = vec![0.0; n + 1];
    let mut blend_var = 0.0;
    for (a, e) in alpha.iter().zip(&params.experts) {
        blend_coef[0] += a * e.intercept;
        for (b, s) in blend_coef[1..].iter_mut().zip(&e.slopes) {
            *b += a * s;
        }
        blend_var += a * e.noise_sd * e.noise_sd;
    }
    params
        .experts
        .iter()
        .map(|e| ExpertParams {
            intercept: beta * e.intercept + (1.0 - beta) * blend_coef[0],
            slopes: e
                .slopes
                .iter()
                .zip(&blend_coef[1..])
                .map(|(s, b)| beta * s + (1.0 - beta) * b)
                .collect(),
            noise_sd: (beta * e.noise_sd * e.noise_sd + (1.0 - beta) * blend_var).sqrt(),
        })
        .collect()
}

pub fn conditional_pdf(params: &ModelParams, x: &[f64], y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite("response"));
    }
    Ok(params.conditional(x)?.pdf(y))
}

pub fn conditional_logpdf(params: &ModelParams, x: &[f64], y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite("response"));
    }
    Ok(params.conditional(x)?.logpdf(y))
}

pub fn conditional_cdf(params: &ModelParams, x: &[f64], y: f64) -> Result<f64> {
    if y.is_nan() {
        return Err(Error::NonFinite("response"));
    }
    Ok(params.conditional(x)?.cdf(y))
}

/// Observations: `N × n` covariates (row-major), responses and timestamps
/// (seconds since the Unix epoch, UTC).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    n_covariates: usize,
    covariates: Vec<f64>,
    responses: Vec<f64>,
    timestamps: Vec<i64>,
}

impl Dataset {
    pub fn new(n_covariates: usize, covariates: Vec<f64>, responses: Vec<f64>, timestamps: Vec<i64>) -> Result<Self> {
        let len = responses.len();
        if covariates.len() != len * n_covariates {
            return Err(Error::DimensionMismatch { expected: len * n_covariates, found: covariates.len() });
        }
        if timestamps.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: timestamps.len() });
        }
        if timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("timestamps must be non-decreasing"));
        }
        Ok(Dataset { n_covariates, covariates, responses, timestamps })
    }

    pub fn empty(n_covariates: usize) -> Self {
        Dataset { n_covariates, covariates: Vec::new(), responses: Vec::new(), timestamps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.n_covariates..(i + 1) * self.n_covariates]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.responses[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    /// Rows at `indices`, which must be ascending.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut cov = Vec::with_capacity(indices.len() * self.n_covariates);
        let mut resp = Vec::with_capacity(indices.len());
        let mut ts = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(invalid("row index out of range"));
            }
            cov.extend_from_slice(self.x(i));
            resp.push(self.responses[i]);
            ts.push(self.timestamps[i]);
        }
        Dataset::new(self.n_covariates, cov, resp, ts)
    }

    /// Same covariates with responses replaced.
    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.n_covariates, self.covariates.clone(), responses, self.timestamps.clone())
    }
}

/// Laplace priors on expert and gate coefficients, log-normal on noise sds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PriorSpec {
    pub mean_coeff_location: f64,
    pub mean_coeff_scale: f64,
    pub gate_coeff_location: f64,
    pub gate_coeff_scale: f64,
    pub noise_log_location: f64,
    pub noise_log_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            mean_coeff_location: 0.0,
            mean_coeff_scale: 1.0,
            gate_coeff_location: 0.0,
            gate_coeff_scale: 1.0,
            noise_log_location: 0.0,
            noise_log_scale: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let scales = [self.mean_coeff_scale, self.gate_coeff_scale, self.noise_log_scale];
        if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid("prior scales must be positive"));
        }
        let locs = [self.mean_coeff_location, self.gate_coeff_location, self.noise_log_location];
        if locs.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("prior location"));
        }
        Ok(())
    }
}

/// `ln((1/2b) exp(−|x − μ|/b))`
pub fn laplace_logpdf(x: f64, location: f64, scale: f64) -> f64 {
    -(2.0 * scale).ln() - (x - location).abs() / scale
}

/// Log-density of a log-normal whose logarithm has the given location/scale.
pub fn lognormal_logpdf(x: f64, log_location: f64, log_scale: f64) -> f64 {
    let lx = x.ln();
    normal_logpdf(lx, log_location, log_scale) - lx
}

/// Sum of conditional log-densities (the conditionally independent likelihood).
pub fn log_likelihood(params: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.n_covariates() != params.n_covariates() {
        return Err(Error::DimensionMismatch { expected: params.n_covariates(), found: data.n_covariates() });
    }
    let mut buf = ConditionalDensity::with_capacity(params.n_experts());
    let mut total = 0.0;
    for i in 0..data.len() {
        params.conditional_into(data.x(i), &mut buf)?;
        total += buf.logpdf(data.y(i));
    }
    Ok(total)
}

pub fn log_prior(params: &ModelParams, spec: &PriorSpec) -> Result<f64> {
    spec.validate()?;
    let mut total = 0.0;
    for e in &params.experts {
        if !(e.noise_sd > 0.0) {
            return Err(invalid("noise_sd must be positive"));
        }
        total += laplace_logpdf(e.intercept, spec.mean_coeff_location, spec.mean_coeff_scale);
        for &s in &e.slopes {
            total += laplace_logpdf(s, spec.mean_coeff_location, spec.mean_coeff_scale);
        }
        total += lognormal_logpdf(e.noise_sd, spec.noise_log_location, spec.noise_log_scale);
    }
    let gate = params.mixing.matrix();
    // The reference row is fixed, not a parameter.
    for i in 0..gate.rows() - 1 {
        for &v in gate.row(i) {
            total += laplace_logpdf(v, spec.gate_coeff_location, spec.gate_coeff_scale);
        }
    }
    for &v in &params.behavior.coeffs {
        total += laplace_logpdf(v, spec.gate_coeff_location, spec.gate_coeff_scale);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("log prior"));
    }
    Ok(total)
}

impl core::fmt::Display for ModelParams {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "ModelParams(M={}, n={})", self.n_experts(), self.n_covariates())
    }
}
