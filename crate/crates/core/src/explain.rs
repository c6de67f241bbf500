//! Geometry of the mixing gate and score-space maps of a fitted model.
//!
//! With the reference row dropped, the posterior-mean gate is `A0 x + b`
//! (one logit per non-reference expert). The direction `a_i*` is the part
//! of row `a_i` orthogonal to every other row: moving along it raises
//! expert `i`'s logit and leaves all others untouched.
//!
//! A score-space map picks logit coordinates `ṽ` on a grid and embeds them
//! back into covariate space as
//!
//! ```text
//! x̃ = (I − A0⁺ A0) x̄ + A0⁺ (ṽ − b)
//! ```
//!
//! so that `A0 x̃ + b = ṽ` while the directions the gate cannot see stay at
//! the training mean `x̄`. The model is then evaluated at every `x̃`.

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;


use crate::density::{ConditionalDensity, ModelParams};
use crate::linalg::{dot, Matrix};
use crate::posterior::PosteriorSample;
use crate::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GateGeometry {
    /// `(M − 1) × n` slopes of the non-reference gate rows.
    pub a0: Matrix,
    pub b: Vec<f64>,
    /// One direction per non-reference expert, unnormalised.
    pub a_star: Vec<Vec<f64>>,
    /// `A0* = K A0`, only for three experts.
    pub k_matrix: Option<Matrix>,
    pub x_mean: Vec<f64>,
}

/// Component of `row` orthogonal to the span of `others`.
fn orthogonal_component(row: &[f64], others: &Matrix) -> Vec<f64> {
    if others.rows() == 0 {
        return row.to_vec();
    }
    // Projection onto the row space of `others` is O⁺ O.
    let coeffs = others.matvec(row).expect("matching widths");
    let proj = others.pinv(RANK_TOL).matvec(&coeffs).expect("matching widths");
    row.iter().zip(&proj).map(|(a, p)| a - p).collect()
}

impl GateGeometry {
    /// From a full `M × (n + 1)` gate matrix `[b | A]` whose last row is the reference.
    pub fn from_gate_matrix(gate: &Matrix, x_mean: &[f64]) -> Result<Self> {
        let m = gate.rows();
        if m < 2 {
            return Err(Error::RankDeficient { rank: 0, required: 1 });
        }
        let n = gate.cols() - 1;
        if x_mean.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x_mean.len() });
        }
        let rows: Vec<Vec<f64>> = (0..m - 1).map(|i| gate.row(i)[1..].to_vec()).collect();
        let a0 = Matrix::from_rows(&rows)?;
        let b = (0..m - 1).map(|i| gate.row(i)[0]).collect();
        let rank = a0.rank(RANK_TOL);
        if rank < m - 1 {
            return Err(Error::RankDeficient { rank, required: m - 1 });
        }
        let a_star = (0..m - 1)
            .map(|i| {
                let others: Vec<Vec<f64>> = rows.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.clone()).collect();
                let others = if others.is_empty() { Matrix::zeros(0, n) } else { Matrix::from_rows(&others).expect("equal widths") };
                orthogonal_component(&rows[i], &others)
            })
            .collect();
        let k_matrix = (m == 3).then(|| {
            let (a1, a2) = (&rows[0], &rows[1]);
            let c = dot(a1, a2);
            Matrix::from_row_major(2, 2, vec![1.0, -c / dot(a2, a2), -c / dot(a1, a1), 1.0]).expect("2x2")
        });
        Ok(GateGeometry { a0, b, a_star, k_matrix, x_mean: x_mean.to_vec() })
    }

    pub fn n_covariates(&self) -> usize {
        self.a0.cols()
    }

    /// Score space spanned by the gate rows themselves.
    pub fn score_space(&self) -> Result<ScoreSpace> {
        ScoreSpace::new(self.a0.clone(), self.b.clone(), self.x_mean.clone())
    }
}

/// Geometry of the posterior-mean gate.
pub fn gate_geometry(sample: &PosteriorSample, x_mean: &[f64]) -> Result<GateGeometry> {
    GateGeometry::from_gate_matrix(sample.mean_params().mixing.matrix(), x_mean)
}

/// Linear coordinates `ṽ = D x + c` and their embedding back into covariates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreSpace {
    pub directions: Matrix,
    pub offset: Vec<f64>,
    pub x_mean: Vec<f64>,
    pinv: Matrix,
    /// `(I − D⁺ D) x̄`
    anchor: Vec<f64>,
}

impl ScoreSpace {
    pub fn new(directions: Matrix, offset: Vec<f64>, x_mean: Vec<f64>) -> Result<Self> {
        let (d, n) = (directions.rows(), directions.cols());
        if offset.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: offset.len() });
        }
        if x_mean.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x_mean.len() });
        }
        let rank = directions.rank(RANK_TOL);
        if rank < d {
            return Err(Error::RankDeficient { rank, required: d });
        }
        let pinv = directions.pinv(RANK_TOL);
        let seen = pinv.matvec(&directions.matvec(&x_mean)?)?;
        let anchor = x_mean.iter().zip(&seen).map(|(x, s)| x - s).collect();
        Ok(ScoreSpace { directions, offset, x_mean, pinv, anchor })
    }

    pub fn dim(&self) -> usize {
        self.directions.rows()
    }

    /// Covariate vector whose coordinates are exactly `v`.
    pub fn embed(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        let centred: Vec<f64> = v.iter().zip(&self.offset).map(|(a, b)| a - b).collect();
        let lifted = self.pinv.matvec(&centred)?;
        Ok(lifted.iter().zip(&self.anchor).map(|(l, a)| l + a).collect())
    }

    /// Coordinates of a covariate vector.
    pub fn coordinates(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = self.directions.matvec(x)?;
        Ok(v.iter().zip(&self.offset).map(|(a, b)| a + b).collect())
    }

    /// Coordinates of each unit feature vector (without offset): one
    /// `dim`-vector per covariate.
    pub fn feature_arrows(&self) -> Vec<Vec<f64>> {
        (0..self.directions.cols()).map(|j| self.directions.column(j)).collect()
    }
}

/// Adds the behavior-gate slopes as a second coordinate for two experts.
pub fn augment_behavior(geometry: &GateGeometry, behavior_coeffs: &[f64]) -> Result<ScoreSpace> {
    if geometry.a0.rows() != 1 {
        return Err(crate::error::invalid("behavior augmentation applies to two experts"));
    }
    let n = geometry.n_covariates();
    if behavior_coeffs.len() != n + 1 {
        return Err(Error::DimensionMismatch { expected: n + 1, found: behavior_coeffs.len() });
    }
    let directions = Matrix::from_rows(&[geometry.a0.row(0).to_vec(), behavior_coeffs[1..].to_vec()])?;
    ScoreSpace::new(directions, vec![geometry.b[0], behavior_coeffs[0]], geometry.x_mean.clone())
}

/// Rank-2 truncation `A0 ≈ U2 Ã0` with `Ã0 = diag(σ1, σ2) V2ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGate {
    pub reduced: Matrix,
    pub left: Matrix,
}

impl ReducedGate {
    /// `U2 Ã0`, the best rank-2 approximation of the original matrix.
    pub fn lift(&self) -> Matrix {
        self.left.matmul(&self.reduced).expect("conforming")
    }
}

pub fn reduce_svd(a0: &Matrix) -> Result<ReducedGate> {
    let svd = a0.svd();
    let sv = &svd.singular_values;
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|s| **s > RANK_TOL * smax && **s > 0.0).count();
    if rank < 2 {
        return Err(Error::RankDeficient { rank, required: 2 });
    }
    let n = a0.cols();
    let mut reduced = Matrix::zeros(2, n);
    let mut left = Matrix::zeros(a0.rows(), 2);
    for k in 0..2 {
        for j in 0..n {
            reduced[(k, j)] = sv[k] * svd.v[(j, k)];
        }
        for i in 0..a0.rows() {
            left[(i, k)] = svd.u[(i, k)];
        }
    }
    Ok(ReducedGate { reduced, left })
}

/// Score space of the rank-2 truncation, with intercepts `U2ᵀ b`.
pub fn reduced_space(geometry: &GateGeometry) -> Result<ScoreSpace> {
    let r = reduce_svd(&geometry.a0)?;
    let offset = r.left.transpose().matvec(&geometry.b)?;
    ScoreSpace::new(r.reduced, offset, geometry.x_mean.clone())
}

/// Regular grid over `[lo, hi]^dim` with `points` values per axis; the
/// first coordinate varies slowest.
pub fn score_grid(dim: usize, lo: f64, hi: f64, points: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if points <= 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
    };
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

/// Default grid: 41 points per axis over logits in `[−4, 4]`.
pub fn default_grid(dim: usize) -> Vec<Vec<f64>> {
    score_grid(dim, -4.0, 4.0, 41)
}

/// Model summaries on embedded grid points.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExplanationMap {
    pub grid: Vec<Vec<f64>>,
    pub embedded: Vec<Vec<f64>>,
    /// Posterior-mean mixing probabilities per point.
    pub activations: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub arrows: Vec<Vec<f64>>,
}

pub fn embed_grid(space: &ScoreSpace, grid: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    grid.iter().map(|v| space.embed(v)).collect()
}

/// Evaluates every draw at every embedded point; the predictive sd combines
/// within-draw variance and the spread of draw means.
pub fn render_map(space: &ScoreSpace, grid: &[Vec<f64>], sample: &PosteriorSample) -> Result<ExplanationMap> {
    let embedded = embed_grid(space, grid)?;
    let m = sample.n_experts();
    let s = sample.len() as f64;
    let mut buf = ConditionalDensity::default();
    let mut activations = Vec::with_capacity(embedded.len());
    let mut mean = Vec::with_capacity(embedded.len());
    let mut sd = Vec::with_capacity(embedded.len());
    for x in &embedded {
        let mut act = vec![0.0; m];
        let (mut m1, mut m2, mut within) = (0.0, 0.0, 0.0);
        for p in sample.draws() {
            p.conditional_into(x, &mut buf)?;
            for (a, w) in act.iter_mut().zip(&buf.weights) {
                *a += w / s;
            }
            let mu = buf.mean();
            m1 += mu / s;
            m2 += mu * mu / s;
            within += buf.variance() / s;
        }
        activations.push(act);
        mean.push(m1);
        sd.push((within + (m2 - m1 * m1).max(0.0)).sqrt());
    }
    Ok(ExplanationMap { grid: grid.to_vec(), embedded, activations, mean, sd, arrows: space.feature_arrows() })
}

/// Gate logits of one parameter draw at `x` (reference row included).
pub fn gate_logits(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    let g = params.mixing.matrix();
    (0..g.rows()).map(|i| g.row(i)[0] + dot(&g.row(i)[1..], x)).collect()
}
