//! Model selection on the fit/coverage Pareto front.
//!
//! Every trial carries a fit metric (higher is better, with a standard
//! error) and a coverage cost: the negative log-probability of the observed
//! coverage counts of central predictive intervals under their nominal
//! binomial laws. The Pareto set is traversed from the best-calibrated
//! trial onwards, moving to a worse-calibrated trial only when a one-sided
//! Chebyshev (Cantelli) bound on the probability that its fit is better
//! exceeds `ν`.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::density::Dataset;
use crate::error::invalid;
use crate::math::{self, ln_binomial_pmf};
use crate::posterior::{predictive_draws, PosteriorSample};
use crate::{Error, Result};

pub const DEFAULT_GRID_SIZE: usize = 20;
pub const DEFAULT_NU: f64 = 0.5;
/// Fewest predictive draws per point accepted by [`coverage_counts`].
pub const MIN_PREDICTIVE_DRAWS: usize = 100;

/// Coverage counts at levels `1/K, …, (K−1)/K`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoverageGrid {
    pub k: usize,
    pub n: u64,
    pub levels: Vec<f64>,
    pub counts: Vec<u64>,
}

impl CoverageGrid {
    pub fn levels(k: usize) -> Result<Vec<f64>> {
        if k < 2 {
            return Err(invalid("coverage grid needs K >= 2"));
        }
        Ok((1..k).map(|j| j as f64 / k as f64).collect())
    }

    pub fn new(k: usize, n: u64, counts: Vec<u64>) -> Result<Self> {
        let levels = Self::levels(k)?;
        if counts.len() != levels.len() {
            return Err(Error::DimensionMismatch { expected: levels.len(), found: counts.len() });
        }
        if counts.iter().any(|c| *c > n) {
            return Err(invalid("coverage count exceeds the number of points"));
        }
        Ok(CoverageGrid { k, n, levels, counts })
    }
}

/// Counts responses inside the empirical central predictive intervals,
/// using one predictive draw per posterior draw at each covariate vector.
pub fn coverage_counts(sample: &PosteriorSample, data: &Dataset, k: usize, seed: u64) -> Result<CoverageGrid> {
    let levels = CoverageGrid::levels(k)?;
    if sample.len() < MIN_PREDICTIVE_DRAWS {
        return Err(Error::InsufficientData { len: sample.len(), needed: MIN_PREDICTIVE_DRAWS });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = alloc::vec![0u64; levels.len()];
    for i in 0..data.len() {
        let mut draws = predictive_draws(sample, data.x(i), &mut rng)?;
        draws.sort_by(math::total_cmp);
        let y = data.y(i);
        for (c, &a) in counts.iter_mut().zip(&levels) {
            let lo = math::quantile_sorted(&draws, 0.5 * (1.0 - a));
            let hi = math::quantile_sorted(&draws, 0.5 * (1.0 + a));
            if y >= lo && y <= hi {
                *c += 1;
            }
        }
    }
    CoverageGrid::new(k, data.len() as u64, counts)
}

/// `Σ_α −ln Binomial(C_α; N, α)`.
pub fn coverage_cost(grid: &CoverageGrid) -> f64 {
    grid.counts.iter().zip(&grid.levels).map(|(&c, &a)| -ln_binomial_pmf(c, grid.n, a)).sum()
}

/// Cantelli lower bound on `P(B > A)` for independent evaluations with the
/// given means and standard errors.
pub fn chebyshev_lb(metric_a: f64, se_a: f64, metric_b: f64, se_b: f64) -> f64 {
    if !(metric_b > metric_a) {
        return 0.0;
    }
    let d = metric_b - metric_a;
    let var = se_a * se_a + se_b * se_b;
    if var == 0.0 {
        return 1.0;
    }
    let d2 = d * d;
    if !d2.is_finite() {
        return 1.0;
    }
    d2 / (d2 + var)
}

/// One hyperparameter configuration after fitting.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trial {
    pub id: usize,
    pub metric: f64,
    pub metric_se: f64,
    pub coverage_cost: f64,
}

impl Trial {
    fn is_valid(&self) -> bool {
        self.metric.is_finite() && self.coverage_cost.is_finite() && self.metric_se.is_finite() && self.metric_se >= 0.0
    }

    fn dominates(&self, other: &Trial) -> bool {
        self.metric >= other.metric
            && self.coverage_cost <= other.coverage_cost
            && (self.metric > other.metric || self.coverage_cost < other.coverage_cost)
    }
}

/// Non-dominated valid trials under (metric ↑, coverage cost ↓), in
/// traversal order: ascending cost, then descending metric, then id.
pub fn pareto_set(trials: &[Trial]) -> Vec<&Trial> {
    let valid: Vec<&Trial> = trials.iter().filter(|t| t.is_valid()).collect();
    let mut front: Vec<&Trial> = valid.iter().copied().filter(|t| !valid.iter().any(|u| u.dominates(t))).collect();
    front.sort_by(|a, b| {
        a.coverage_cost
            .total_cmp(&b.coverage_cost)
            .then(b.metric.total_cmp(&a.metric))
            .then(a.id.cmp(&b.id))
    });
    front
}

/// Walks the Pareto set from the cheapest coverage cost and returns the
/// final accepted trial.
pub fn select_best(trials: &[Trial], nu: f64) -> Result<&Trial> {
    if trials.is_empty() {
        return Err(Error::Empty("trials"));
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(invalid("nu must be in (0, 1)"));
    }
    let front = pareto_set(trials);
    let mut best: Option<&Trial> = None;
    for c in front {
        let accept = match best {
            None => true,
            Some(b) => chebyshev_lb(b.metric, b.metric_se, c.metric, c.metric_se) > nu,
        };
        if accept {
            best = Some(c);
        }
    }
    best.ok_or(Error::Empty("Pareto set"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(id: usize, metric: f64, se: f64, cost: f64) -> Trial {
        Trial { id, metric, metric_se: se, coverage_cost: cost }
    }

    #[test]
    fn cantelli_examples() {
        assert_eq!(chebyshev_lb(1.0, 1.0, 1.0, 1.0), 0.0);
        assert!((chebyshev_lb(0.0, 1.0, 1.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(chebyshev_lb(0.0, 0.0, 0.5, 0.0), 1.0);
        assert_eq!(chebyshev_lb(1.0, 0.0, 0.5, 0.0), 0.0);
    }

    #[test]
    fn single_trial_selected() {
        let trials = vec![t(3, -5.0, 1.0, 2.0)];
        assert_eq!(select_best(&trials, 0.5).unwrap().id, 3);
        assert!(select_best(&[], 0.5).is_err());
    }

    #[test]
    fn large_fit_gain_beats_calibration() {
        let trials = vec![t(0, -100.0, 1.0, 5.0), t(1, -50.0, 1.0, 9.0)];
        assert_eq!(select_best(&trials, 0.5).unwrap().id, 1);
        let close = vec![t(0, -100.0, 1.0, 5.0), t(1, -99.5, 1.0, 9.0)];
        assert_eq!(select_best(&close, 0.5).unwrap().id, 0);
    }

    #[test]
    fn dominated_never_selected() {
        let trials = vec![t(0, -10.0, 0.0, 1.0), t(1, -20.0, 0.0, 2.0)];
        assert_eq!(pareto_set(&trials).len(), 1);
        assert_eq!(select_best(&trials, 0.5).unwrap().id, 0);
    }

    #[test]
    fn invalid_trials_only_is_error() {
        let trials = vec![t(0, f64::NAN, 1.0, 1.0)];
        assert!(select_best(&trials, 0.5).is_err());
    }

    #[test]
    fn cost_minimised_at_modes() {
        let n = 50u64;
        let k = 4;
        let levels = CoverageGrid::levels(k).unwrap();
        // Mode of Binomial(n, a) is floor((n + 1) a).
        let modes: Vec<u64> = levels.iter().map(|a| ((n + 1) as f64 * a).floor() as u64).collect();
        let best = coverage_cost(&CoverageGrid::new(k, n, modes.clone()).unwrap());
        let mut brute = f64::INFINITY;
        for a in 0..=n {
            for b in a..=n {
                for c in b..=n {
                    let g = CoverageGrid::new(k, n, vec![a, b, c]).unwrap();
                    brute = brute.min(coverage_cost(&g));
                }
            }
        }
        assert!((best - brute).abs() < 1e-9);
        let full = coverage_cost(&CoverageGrid::new(k, n, vec![n; 3]).unwrap());
        assert!(full > best);
    }

    #[test]
    fn k2_is_single_term() {
        let g = CoverageGrid::new(2, 10, vec![5]).unwrap();
        assert!((coverage_cost(&g) + ln_binomial_pmf(5, 10, 0.5)).abs() < 1e-15);
    }
}
