//! Window anomaly scores.
//!
//! Every response in a window is mapped through the model CDF (its PIT
//! value, uniform on (0, 1) when the model is right). The PIT values are
//! combined into `Q = Σ w_s u_s` with exponentially decaying weights, and
//! `Q` is pushed through the exact CDF `F_W` of a convex combination of
//! independent uniforms:
//!
//! ```text
//! F_W(q) = Σ_{i: s_i < q} (−1)^{c_i} (q − s_i)^n / (n! Π w)
//! ```
//!
//! where `s_i`/`c_i` run over the sums/cardinalities of all subsets of the
//! `n` weights. The exponent and factorial use `n`, the number of summed
//! uniforms (the window length), which is what makes `F_W(1) = 1`.
//!
//! The anomaly score is `1 − 2 min(F_W(Q), 1 − F_W(Q))`, uniform on (0, 1)
//! under the model, and its posterior mean is the reported score.

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;


use crate::density::{ConditionalDensity, Dataset, ModelParams};
use crate::error::invalid;
use crate::math::{self, Dd};
use crate::posterior::PosteriorSample;
use crate::{Error, Result};

/// PIT values are kept in `[PIT_EPS, 1 − PIT_EPS]`.
pub const PIT_EPS: f64 = 1e-15;

/// Longest window whose subset sums are enumerated (2^20 entries).
pub const MAX_WINDOW: usize = 20;

/// `u = F(y | x; θ)`, clamped away from 0 and 1.
pub fn pit(params: &ModelParams, x: &[f64], y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite("response"));
    }
    Ok(clamp_pit(params.conditional(x)?.cdf(y)))
}

#[inline]
pub(crate) fn clamp_pit(u: f64) -> f64 {
    u.clamp(PIT_EPS, 1.0 - PIT_EPS)
}

/// Normalised window weights, oldest first.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightVector {
    weights: Vec<f64>,
    decay: f64,
}

impl WeightVector {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Arbitrary positive weights, normalised to sum to one. `decay` is
    /// recorded as NaN.
    pub fn from_weights(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("weights"));
        }
        if raw.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid("weights must be positive and finite"));
        }
        let total: f64 = raw.iter().sum();
        Ok(WeightVector { weights: raw.iter().map(|w| w / total).collect(), decay: f64::NAN })
    }
}

/// Default decay: the oldest of `k + 1` weights is 1% of the newest.
pub fn default_decay(k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        100f64.ln() / k as f64
    }
}

/// `w_s ∝ exp(−λ · lag)`, lag counted back from the newest element.
pub fn exp_weights(length: usize, decay: f64) -> Result<WeightVector> {
    if length == 0 {
        return Err(Error::Empty("window"));
    }
    if !(decay > 0.0) || !decay.is_finite() {
        return Err(invalid("decay must be positive and finite"));
    }
    // Normalise relative to the newest weight to avoid underflow of the oldest.
    let raw: Vec<f64> = (0..length).map(|s| (-decay * (length - 1 - s) as f64).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(WeightVector { weights: raw.iter().map(|w| w / total).collect(), decay })
}

/// Cached subset sums for exact queries of `F_W`.
#[derive(Debug, Clone)]
pub struct WeightedUniformSumDist {
    weights: WeightVector,
    /// Subset sums in double-double precision, ascending.
    sums: Vec<Dd>,
    /// `true` for odd cardinality.
    odd: Vec<bool>,
    /// `1 / (j w_(j))` for j = 1..n, applied one factor at a time so the
    /// normalisation never under- or overflows on its own.
    factors: Vec<Dd>,
    log_norm: f64,
    rounding_bound: f64,
}

/// Unit roundoff of double-double arithmetic.
const DD_EPS: f64 = 4.93e-32;

/// Largest tolerated bound on the absolute rounding error of [`WeightedUniformSumDist::cdf`].
pub const MAX_ROUNDING: f64 = 1e-13;

impl WeightedUniformSumDist {
    /// Enumerates the subset sums. Fails when the window exceeds
    /// [`MAX_WINDOW`] or when the weights are so uneven that the
    /// alternating sum cannot be resolved to [`MAX_ROUNDING`].
    pub fn new(weights: &WeightVector) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::Empty("weights"));
        }
        if n > MAX_WINDOW {
            return Err(Error::WindowTooLong { len: n, cap: MAX_WINDOW });
        }
        let w = weights.weights();
        let count = 1usize << n;
        let mut entries: Vec<(Dd, bool)> = Vec::with_capacity(count);
        entries.push((Dd::ZERO, false));
        // Subsets in binary-reflected order: each new weight doubles the list.
        for &wj in w {
            let wj = Dd::new(wj);
            for i in 0..entries.len() {
                let (s, odd) = entries[i];
                entries.push((s + wj, !odd));
            }
        }
        // Stable sort keeps ties in enumeration order.
        entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(core::cmp::Ordering::Equal));
        let (sums, odd): (Vec<Dd>, Vec<bool>) = entries.into_iter().unzip();
        let factors = w
            .iter()
            .enumerate()
            .map(|(j, &wj)| (Dd::new((j + 1) as f64) * Dd::new(wj)).recip())
            .collect();
        let log_norm = libm::lgamma(n as f64 + 1.0) + w.iter().map(|v| v.ln()).sum::<f64>();
        // Largest alternating terms occur at q = 1/2 (the upper half is reflected).
        let log_terms: Vec<f64> = sums
            .iter()
            .map(|s| s.to_f64())
            .take_while(|s| *s < 0.5)
            .map(|s| n as f64 * (0.5 - s).ln() - log_norm)
            .collect();
        let rounding_bound = math::log_sum_exp(&log_terms).exp() * (n + 2) as f64 * DD_EPS;
        if !(rounding_bound <= MAX_ROUNDING) {
            return Err(Error::IllConditioned { bound: rounding_bound });
        }
        Ok(WeightedUniformSumDist { weights: weights.clone(), sums, odd, factors, log_norm, rounding_bound })
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// Subset sums rounded to f64, ascending.
    pub fn subset_sums(&self) -> Vec<f64> {
        self.sums.iter().map(|s| s.to_f64()).collect()
    }

    /// Cardinality parities matching [`Self::subset_sums`]: `+1` even, `−1` odd.
    pub fn subset_signs(&self) -> Vec<i8> {
        self.odd.iter().map(|&o| if o { -1 } else { 1 }).collect()
    }

    /// `n! Π w_s`; may underflow to zero for steep weights, see [`Self::log_norm_const`].
    pub fn norm_const(&self) -> f64 {
        self.log_norm.exp()
    }

    pub fn log_norm_const(&self) -> f64 {
        self.log_norm
    }

    /// Bound on the absolute rounding error of [`Self::cdf`], from the size
    /// of the cancelling terms.
    pub fn rounding_bound(&self) -> f64 {
        self.rounding_bound
    }

    /// `F_W(q)`.
    pub fn cdf(&self, q: f64) -> f64 {
        if q.is_nan() {
            return f64::NAN;
        }
        if q <= 0.0 {
            return 0.0;
        }
        if q >= 1.0 {
            return 1.0;
        }
        // The sum is symmetric about 1/2; evaluate the lower tail, which
        // needs fewer terms and cancels less.
        if q > 0.5 {
            let upper = self.lower_tail(1.0 - q);
            return (Dd::new(1.0) - upper).to_f64().clamp(0.0, 1.0);
        }
        self.lower_tail(q).to_f64().clamp(0.0, 1.0)
    }

    fn lower_tail(&self, q: f64) -> Dd {
        let q = Dd::new(q);
        let end = self.sums.partition_point(|s| *s < q);
        let mut acc = Dd::ZERO;
        for i in 0..end {
            let d = q - self.sums[i];
            let mut term = Dd::new(1.0);
            for f in &self.factors {
                term = term * d * *f;
            }
            acc = if self.odd[i] { acc - term } else { acc + term };
        }
        acc
    }
}

/// Consecutive covariate/response pairs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    n_covariates: usize,
    covariates: Vec<f64>,
    responses: Vec<f64>,
    timestamps: Vec<i64>,
}

impl ObservationWindow {
    pub fn new(n_covariates: usize, covariates: Vec<f64>, responses: Vec<f64>, timestamps: Vec<i64>) -> Result<Self> {
        if responses.is_empty() {
            return Err(Error::Empty("window"));
        }
        if covariates.len() != responses.len() * n_covariates || timestamps.len() != responses.len() {
            return Err(Error::DimensionMismatch { expected: responses.len(), found: timestamps.len() });
        }
        if timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("window must be chronological"));
        }
        Ok(ObservationWindow { n_covariates, covariates, responses, timestamps })
    }

    /// Rows `end + 1 − len ..= end` of `data`.
    pub fn from_dataset(data: &Dataset, end: usize, len: usize) -> Result<Self> {
        if len == 0 || end >= data.len() || end + 1 < len {
            return Err(Error::InsufficientData { len: data.len(), needed: len });
        }
        let start = end + 1 - len;
        let n = data.n_covariates();
        Ok(ObservationWindow {
            n_covariates: n,
            covariates: data.covariates()[start * n..(end + 1) * n].to_vec(),
            responses: data.responses()[start..=end].to_vec(),
            timestamps: data.timestamps()[start..=end].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.n_covariates..(i + 1) * self.n_covariates]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.responses[i]
    }

    pub fn newest_timestamp(&self) -> i64 {
        *self.timestamps.last().expect("window is non-empty")
    }

    pub fn pits(&self, params: &ModelParams) -> Result<Vec<f64>> {
        (0..self.len()).map(|i| pit(params, self.x(i), self.y(i))).collect()
    }
}

/// `Q = Σ w_s u_s` over PIT values.
pub fn weighted_pit_sum(pits: &[f64], w: &WeightVector) -> Result<f64> {
    if pits.len() != w.len() {
        return Err(Error::DimensionMismatch { expected: w.len(), found: pits.len() });
    }
    Ok(pits.iter().zip(w.weights()).map(|(u, w)| u * w).sum())
}

pub fn q_statistic(window: &ObservationWindow, params: &ModelParams, w: &WeightVector) -> Result<f64> {
    if window.len() != w.len() {
        return Err(Error::DimensionMismatch { expected: w.len(), found: window.len() });
    }
    weighted_pit_sum(&window.pits(params)?, w)
}

/// `1 − 2 min(p, 1 − p)`.
#[inline]
pub fn fold_score(p: f64) -> f64 {
    1.0 - 2.0 * p.min(1.0 - p)
}

/// Anomaly score of a window's PIT values under one parameter draw.
pub fn as_from_pits(pits: &[f64], dist: &WeightedUniformSumDist) -> Result<f64> {
    let q = weighted_pit_sum(pits, dist.weights())?;
    Ok(fold_score(dist.cdf(q)))
}

pub fn as_theta(window: &ObservationWindow, params: &ModelParams, dist: &WeightedUniformSumDist) -> Result<f64> {
    if window.len() != dist.n() {
        return Err(Error::DimensionMismatch { expected: dist.n(), found: window.len() });
    }
    as_from_pits(&window.pits(params)?, dist)
}

/// Monte Carlo posterior mean of the anomaly score.
pub fn as_posterior(window: &ObservationWindow, sample: &PosteriorSample, w: &WeightVector) -> Result<f64> {
    let dist = WeightedUniformSumDist::new(w)?;
    let draws = sample.draws();
    let mut total = 0.0;
    for params in draws {
        total += as_theta(window, params, &dist)?;
    }
    Ok(total / draws.len() as f64)
}

/// Scores over sliding windows, one per window, stamped at its newest element.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnomalyScoreSeries {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    /// 5% and 95% quantiles of the per-draw scores.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub threshold: f64,
}

impl AnomalyScoreSeries {
    pub fn new(timestamps: Vec<i64>, values: Vec<f64>, threshold: f64) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: timestamps.len(), found: values.len() });
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid("threshold must be in (0, 1)"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("anomaly scores must lie in [0, 1]"));
        }
        Ok(AnomalyScoreSeries { lower: values.clone(), upper: values.clone(), timestamps, values, threshold })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Row-major `S × N` PIT values of every observation under every draw.
pub fn pit_matrix(data: &Dataset, sample: &PosteriorSample) -> Result<Vec<f64>> {
    let n = data.len();
    let mut out = vec![0.0; sample.len() * n];
    let mut buf = ConditionalDensity::default();
    for (s, params) in sample.draws().iter().enumerate() {
        let row = &mut out[s * n..(s + 1) * n];
        for (i, slot) in row.iter_mut().enumerate() {
            params.conditional_into(data.x(i), &mut buf)?;
            *slot = clamp_pit(buf.cdf(data.y(i)));
        }
    }
    Ok(out)
}

/// Sliding-window scores of a chronological dataset. Windows hold `k + 1`
/// observations; the first `k` timestamps get no score.
pub fn score_series(data: &Dataset, sample: &PosteriorSample, k: usize, decay: f64, threshold: f64) -> Result<AnomalyScoreSeries> {
    let pits = pit_matrix(data, sample)?;
    score_series_from_pits(data.timestamps(), &pits, sample.len(), k, decay, threshold)
}

/// As [`score_series`] for a precomputed PIT matrix (see [`pit_matrix`]).
pub fn score_series_from_pits(
    timestamps: &[i64],
    pits: &[f64],
    n_draws: usize,
    k: usize,
    decay: f64,
    threshold: f64,
) -> Result<AnomalyScoreSeries> {
    let n = timestamps.len();
    let len = k + 1;
    if n < len {
        return Err(Error::InsufficientData { len: n, needed: len });
    }
    if n_draws == 0 || pits.len() != n_draws * n {
        return Err(Error::DimensionMismatch { expected: n_draws * n, found: pits.len() });
    }
    let w = exp_weights(len, decay)?;
    let dist = WeightedUniformSumDist::new(&w)?;
    let n_windows = n - k;
    let mut values = Vec::with_capacity(n_windows);
    let mut lower = Vec::with_capacity(n_windows);
    let mut upper = Vec::with_capacity(n_windows);
    let mut per_draw = vec![0.0; n_draws];
    for end in k..n {
        for (s, slot) in per_draw.iter_mut().enumerate() {
            let row = &pits[s * n + end + 1 - len..=s * n + end];
            *slot = as_from_pits(row, &dist)?;
        }
        values.push(per_draw.iter().sum::<f64>() / n_draws as f64);
        per_draw.sort_by(math::total_cmp);
        lower.push(math::quantile_sorted(&per_draw, 0.05));
        upper.push(math::quantile_sorted(&per_draw, 0.95));
    }
    let mut series = AnomalyScoreSeries::new(timestamps[k..].to_vec(), values, threshold)?;
    series.lower = lower;
    series.upper = upper;
    Ok(series)
}
