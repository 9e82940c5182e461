//! Calibrated anomaly scoring.
//!
//! The default scorer is the Mahalanobis distance of the attended vector from
//! the calibration distribution. The alternative residual scorer predicts the
//! next normalized window from the current attended vector and scores
//! `sigmoid(‖x − x̂‖)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

pub const DEFAULT_EPSILON_SCALE: f64 = 1e-6;
pub const EPSILON_FLOOR: f64 = 1e-9;
pub const DEFAULT_QUANTILE: f64 = 0.995;
pub const RESIDUAL_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub mu: Vec<f64>,
    /// Regularized covariance `Σ = C + εI`.
    pub sigma: Mat,
    pub sigma_inv: Mat,
    /// Lower Cholesky factor of `Σ`.
    pub sigma_chol: Mat,
    pub epsilon: f64,
    pub theta: f64,
    pub calibration_count: usize,
}

impl BaselineModel {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }
}

/// Fits `μ` and `Σ` on calibration attended vectors.
///
/// `Σ` is the sample covariance (denominator `n − 1`) plus `εI` with
/// `ε = epsilon_scale · trace(C) / d`, floored at [`EPSILON_FLOOR`] whenever
/// `epsilon_scale > 0`. With `epsilon_scale == 0` no ridge is added and the
/// covariance must itself be positive definite. `theta` starts at +∞ until a
/// threshold is selected.
pub fn fit_baseline(vectors: &[Vec<f64>], epsilon_scale: f64) -> Result<BaselineModel> {
    if vectors.len() < 2 {
        return Err(Error::Calibration(format!(
            "baseline needs at least 2 calibration vectors, got {}",
            vectors.len()
        )));
    }
    if !(epsilon_scale >= 0.0 && epsilon_scale.is_finite()) {
        return Err(Error::Parameter(format!("epsilon_scale must be >= 0, got {epsilon_scale}")));
    }
    let d = vectors[0].len();
    if d == 0 {
        return Err(Error::Calibration("zero-dimensional calibration vectors".into()));
    }
    for v in vectors {
        if v.len() != d {
            return Err(Error::dim(d, v.len(), "calibration vector"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite calibration vector".into()));
        }
    }
    let n = vectors.len();
    let mut mu = vec![0.0; d];
    for v in vectors {
        for (m, x) in mu.iter_mut().zip(v) {
            *m += x;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Mat::zeros(d, d);
    let mut centered = vec![0.0; d];
    for v in vectors {
        for ((c, x), m) in centered.iter_mut().zip(v).zip(&mu) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            for (j, cj) in centered[..=i].iter().enumerate() {
                cov.data[i * d + j] += ci * cj;
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = cov.data[i * d + j] / denom;
            cov.data[i * d + j] = v;
            cov.data[j * d + i] = v;
        }
    }
    let epsilon = if epsilon_scale > 0.0 {
        (epsilon_scale * cov.trace() / d as f64).max(EPSILON_FLOOR)
    } else {
        0.0
    };
    let mut sigma = cov;
    for i in 0..d {
        sigma.data[i * d + i] += epsilon;
    }
    let sigma_chol = linalg::cholesky_lower(&sigma).map_err(|_| {
        Error::Calibration(format!(
            "calibration covariance is singular (n = {n}, d = {d}, epsilon = {epsilon:e})"
        ))
    })?;
    let sigma_inv = linalg::spd_inverse(&sigma_chol);
    Ok(BaselineModel {
        mu,
        sigma,
        sigma_inv,
        sigma_chol,
        epsilon,
        theta: f64::INFINITY,
        calibration_count: n,
    })
}

/// `sqrt((h − μ)ᵀ Σ⁻¹ (h − μ))`, evaluated as `‖L⁻¹(h − μ)‖` so that the
/// result is exactly zero only at `h = μ`.
pub fn mahalanobis_score(h: &[f64], model: &BaselineModel) -> Result<f64> {
    if h.len() != model.dim() {
        return Err(Error::dim(model.dim(), h.len(), "scored vector"));
    }
    let delta: Vec<f64> = h.iter().zip(&model.mu).map(|(x, m)| x - m).collect();
    let y = linalg::forward_substitute(&model.sigma_chol, &delta);
    Ok(y.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// `∂S/∂h = Σ⁻¹(h − μ) / S`; `None` at `S = 0`, where the square root is not
/// differentiable.
pub fn mahalanobis_gradient(h: &[f64], model: &BaselineModel, score: f64) -> Option<Vec<f64>> {
    if score <= 0.0 {
        return None;
    }
    let delta: Vec<f64> = h.iter().zip(&model.mu).map(|(x, m)| x - m).collect();
    let mut g = model.sigma_inv.mul_vec(&delta);
    g.iter_mut().for_each(|v| *v /= score);
    Some(g)
}

/// 1 iff `score ≥ theta`.
#[inline]
pub fn decide(score: f64, theta: f64) -> u8 {
    u8::from(score >= theta)
}

/// Nearest-rank quantile: the `ceil(q·n)`-th smallest score (the minimum for
/// `q = 0`).
pub fn select_threshold(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Calibration("threshold selection needs at least one score".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Parameter(format!("quantile must lie in [0, 1], got {q}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank_index(sorted.len(), q)])
}

/// Zero-based index of the `ceil(q·n)`-th order statistic.
pub fn nearest_rank_index(n: usize, q: f64) -> usize {
    let rank = (q * n as f64).ceil() as usize;
    rank.clamp(1, n) - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualHead {
    /// `R`, (N·L) × d.
    pub weights: Mat,
    pub fitted: bool,
    pub theta: f64,
}

impl ResidualHead {
    pub fn predict(&self, attended: &[f64]) -> Result<Vec<f64>> {
        if attended.len() != self.weights.cols {
            return Err(Error::dim(self.weights.cols, attended.len(), "residual head input"));
        }
        Ok(self.weights.mul_vec(attended))
    }
}

/// Ridge regression (λ = [`RESIDUAL_RIDGE`]) from attended vectors to the
/// flattened normalized next window.
pub fn fit_residual_head(attended: &[Vec<f64>], next_targets: &[Vec<f64>]) -> Result<ResidualHead> {
    fit_residual_head_with(attended, next_targets, RESIDUAL_RIDGE)
}

pub fn fit_residual_head_with(attended: &[Vec<f64>], next_targets: &[Vec<f64>], lambda: f64) -> Result<ResidualHead> {
    if attended.len() != next_targets.len() {
        return Err(Error::dim(attended.len(), next_targets.len(), "residual head pairs"));
    }
    let d = attended.first().map_or(0, Vec::len);
    if d == 0 || attended.len() < d {
        return Err(Error::Calibration(format!(
            "residual head needs at least d = {d} pairs, got {}",
            attended.len()
        )));
    }
    let x = Mat::from_rows(attended)?;
    let y = Mat::from_rows(next_targets)?;
    let b = linalg::ridge_solve(&x, &y, lambda).map_err(|e| Error::Calibration(e.to_string()))?;
    Ok(ResidualHead {
        weights: b.transpose(),
        fitted: true,
        theta: f64::INFINITY,
    })
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `sigmoid(‖x − x̂‖₂)`, in `[0.5, 1)`.
pub fn residual_score(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    Ok(sigmoid(residual_norm(observed, predicted)?))
}

pub fn residual_norm(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(Error::dim(predicted.len(), observed.len(), "residual vectors"));
    }
    Ok(observed
        .iter()
        .zip(predicted)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_with(mu: Vec<f64>, sigma: Mat) -> BaselineModel {
        let chol = linalg::cholesky_lower(&sigma).unwrap();
        BaselineModel {
            mu,
            sigma_inv: linalg::spd_inverse(&chol),
            sigma,
            sigma_chol: chol,
            epsilon: 0.0,
            theta: 1.0,
            calibration_count: 0,
        }
    }

    #[test]
    fn mahalanobis_examples() {
        let m = model_with(vec![0.0, 0.0], Mat::identity(2));
        assert_eq!(mahalanobis_score(&[3.0, 4.0], &m).unwrap(), 5.0);
        assert_eq!(mahalanobis_score(&[0.0, 0.0], &m).unwrap(), 0.0);
        let m = model_with(vec![0.0, 0.0], Mat::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap());
        assert!((mahalanobis_score(&[2.0, 0.0], &m).unwrap() - 1.0).abs() <= 1e-15);
        assert!(mahalanobis_score(&[1.0], &m).is_err());
    }

    #[test]
    fn fit_two_points() {
        let m = fit_baseline(&[vec![0.0, 0.0], vec![2.0, 0.0]], 1e-6).unwrap();
        assert_eq!(m.mu, vec![1.0, 0.0]);
        // sample covariance diag(2, 0); ε = 1e-6 * 2 / 2
        assert!((m.epsilon - 1e-6).abs() < 1e-21);
        assert!((m.sigma.get(0, 0) - (2.0 + 1e-6)).abs() < 1e-15);
        assert_eq!(m.sigma.get(0, 1), 0.0);
        assert!((m.sigma.get(1, 1) - 1e-6).abs() < 1e-21);
    }

    #[test]
    fn identical_vectors_use_floor() {
        let v = vec![0.5, -0.25, 1.0];
        let m = fit_baseline(&vec![v.clone(); 10], 1e-6).unwrap();
        assert_eq!(m.mu, v);
        assert_eq!(m.epsilon, EPSILON_FLOOR);
        assert_eq!(mahalanobis_score(&v, &m).unwrap(), 0.0);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_baseline(&[vec![1.0]], 1e-6), Err(Error::Calibration(_))));
        assert!(matches!(
            fit_baseline(&[vec![1.0], vec![f64::NAN]], 1e-6),
            Err(Error::Data(_))
        ));
        // rank deficient with no ridge
        assert!(matches!(
            fit_baseline(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]], 0.0),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn inverse_matches_covariance() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64;
                vec![(t * 0.7).sin(), (t * 1.3).cos() + 0.2 * (t * 0.7).sin(), (t * 0.11).sin()]
            })
            .collect();
        let m = fit_baseline(&pts, 1e-6).unwrap();
        assert!(m.sigma.max_asymmetry() <= 1e-9);
        let prod = m.sigma_inv.matmul(&m.sigma).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - want).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn decide_boundary() {
        assert_eq!(decide(2.0, 2.0), 1);
        assert_eq!(decide(2.0 - 1e-9, 2.0), 0);
        assert_eq!(decide(12.0, 2.0), 1);
    }

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(select_threshold(&scores, 0.995).unwrap(), 995.0);
        assert_eq!(select_threshold(&scores, 1.0).unwrap(), 1000.0);
        assert_eq!(select_threshold(&scores, 0.0).unwrap(), 1.0);
        assert!(select_threshold(&[], 0.5).is_err());
        assert!(select_threshold(&scores, 1.5).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(residual_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.5);
        let r = residual_score(&[3f64.ln()], &[0.0]).unwrap();
        assert!((r - 0.75).abs() <= 1e-15);
        assert!(residual_score(&[1.0], &[1.0, 2.0]).is_err());
        let far = residual_score(&[30.0], &[0.0]).unwrap();
        assert!(far > 0.999_999 && far < 1.0);
    }

    #[test]
    fn residual_head_recovers_linear_targets() {
        // targets = R h for a fixed R, n >> d
        let d = 3;
        let r = Mat::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 0.3, 1.0], vec![2.0, 0.0, 0.0], vec![-1.0, 1.0, 1.0]]).unwrap();
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let t = i as f64;
                vec![(t * 0.37).sin(), (t * 0.91).cos(), (t * 0.13).sin() * 2.0]
            })
            .collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| r.mul_vec(x)).collect();
        let head = fit_residual_head_with(&xs, &ys, 1e-12).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let p = head.predict(x).unwrap();
            for (a, b) in p.iter().zip(y) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
        assert_eq!(head.weights.rows, 4);
        assert_eq!(head.weights.cols, d);
        // with the default ridge the recovery is still close
        let head = fit_residual_head(&xs, &ys).unwrap();
        let p = head.predict(&xs[7]).unwrap();
        assert!(p.iter().zip(&ys[7]).all(|(a, b)| (a - b).abs() <= 1e-6));
    }

    #[test]
    fn residual_head_zero_and_constant_targets() {
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.5).sin(), (i as f64 * 0.2).cos()]).collect();
        let zeros = vec![vec![0.0; 3]; 50];
        let head = fit_residual_head(&xs, &zeros).unwrap();
        assert!(head.weights.data.iter().all(|&w| w.abs() <= 1e-12));

        // zero-mean inputs, constant targets: no linear map (no intercept)
        // explains a constant, so R ≈ 0 and the residual is the target norm.
        let xs: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                let t = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
                vec![s, t]
            })
            .collect();
        let consts = vec![vec![2.0, -1.0]; 64];
        let head = fit_residual_head(&xs, &consts).unwrap();
        assert!(head.weights.data.iter().all(|&w| w.abs() <= 1e-9));
        let pred = head.predict(&xs[0]).unwrap();
        let r = residual_norm(&consts[0], &pred).unwrap();
        assert!((r - 5f64.sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn residual_head_needs_enough_pairs() {
        let xs = vec![vec![1.0, 2.0, 3.0]; 2];
        let ys = vec![vec![1.0]; 2];
        assert!(matches!(fit_residual_head(&xs, &ys), Err(Error::Calibration(_))));
    }
}
