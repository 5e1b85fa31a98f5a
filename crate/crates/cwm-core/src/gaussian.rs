//! Multivariate Gaussian marginals: log density through a cached Cholesky
//! factor and closed-form weighted moment updates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CwmError, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const RIDGE_START: f64 = 1e-6;
const RIDGE_MAX: f64 = 1e-2;

/// One Gaussian covariate component: mean, covariance, and a cached
/// factorization used for density evaluation.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl GaussianComponent {
    /// Build a component from a mean vector and a symmetric covariance
    /// matrix. A failing Cholesky factorization is retried with a ridge
    /// `eps * trace/d * I`, `eps` doubling from 1e-6 up to 1e-2, after which
    /// the component is reported as degenerate.
    pub fn new(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d || covariance.iter().any(|r| r.len() != d) {
            return Err(CwmError::DimensionMismatch(format!(
                "covariance must be {d}x{d} to match the mean"
            )));
        }
        let mean = DVector::from_vec(mean);
        let cov = DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
        Self::from_parts(mean, cov)
    }

    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(CwmError::InvalidInput("gaussian dimension must be positive".into()));
        }
        let scale = cov.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale.max(1.0) {
                    return Err(CwmError::InvalidInput(format!(
                        "covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        // Exact symmetry for the factorization.
        let sym = 0.5 * (&cov + cov.transpose());

        let mut attempt = sym.clone();
        let mut ridge = 0.0;
        let chol = loop {
            if let Some(ch) = Cholesky::new(attempt.clone()) {
                break ch;
            }
            ridge = if ridge == 0.0 { RIDGE_START } else { ridge * 2.0 };
            if ridge > RIDGE_MAX {
                return Err(CwmError::DegenerateComponent(
                    "covariance is not positive-definite after ridge regularization".into(),
                ));
            }
            let bump = ridge * sym.trace() / d as f64;
            attempt = sym.clone();
            for i in 0..d {
                attempt[(i, i)] += bump;
            }
        };
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { mean, covariance: attempt, chol, log_det })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Covariance rows (after any ridge regularization applied at construction).
    pub fn covariance_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.covariance.row(i).iter().copied().collect()).collect()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Log density at `x`, evaluated through the Cholesky factor.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        let diff = DVector::from_row_slice(x) - &self.mean;
        let half = self.chol.l_dirty().solve_lower_triangular(&diff).expect("factor is invertible");
        let quad = half.norm_squared();
        -0.5 * (self.dim() as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det + quad)
    }
}

/// Weighted mean and maximum-likelihood covariance (divisor `sum tau`).
///
/// Components whose effective weight falls below `d + 1` are reported as
/// degenerate so the EM driver can restart instead of chasing a collapsing
/// cluster.
pub fn weighted_mean_cov(x: &[Vec<f64>], tau: &[f64]) -> Result<GaussianComponent> {
    let n = x.len();
    if tau.len() != n {
        return Err(CwmError::DimensionMismatch(format!(
            "tau has {} entries for {n} observations",
            tau.len()
        )));
    }
    if n == 0 {
        return Err(CwmError::InvalidInput("no observations".into()));
    }
    let d = x[0].len();
    let total: f64 = tau.iter().sum();
    if !(total > 0.0) {
        return Err(CwmError::InvalidInput("tau must have positive total weight".into()));
    }
    if total < (d + 1) as f64 {
        return Err(CwmError::DegenerateComponent(format!(
            "effective weight {total:.4} is below d+1 = {}",
            d + 1
        )));
    }

    let mut mean = DVector::zeros(d);
    for (row, t) in x.iter().zip(tau) {
        for j in 0..d {
            mean[j] += t * row[j];
        }
    }
    mean /= total;

    let mut cov = DMatrix::zeros(d, d);
    let mut diff = DVector::zeros(d);
    for (row, t) in x.iter().zip(tau) {
        for j in 0..d {
            diff[j] = row[j] - mean[j];
        }
        cov.ger(*t, &diff, &diff, 1.0);
    }
    cov /= total;

    GaussianComponent::from_parts(mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_pdf_standard_values() {
        let g = GaussianComponent::new(vec![0.0], vec![vec![1.0]]).unwrap();
        assert!((g.log_pdf(&[0.0]) - (-0.9189385332046727)).abs() < 1e-12);

        let g = GaussianComponent::new(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        assert!((g.log_pdf(&[0.0, 0.0]) + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn log_pdf_matches_explicit_inverse() {
        // Correlated 2x2 case checked against the dense-inverse formula.
        let mean = vec![1.0, -2.0];
        let cov = vec![vec![2.0, 0.7], vec![0.7, 1.3]];
        let g = GaussianComponent::new(mean.clone(), cov.clone()).unwrap();

        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        for point in [[0.0, 0.0], [1.5, -1.0], [-2.0, 3.0]] {
            let dx = [point[0] - mean[0], point[1] - mean[1]];
            let quad = dx[0] * dx[0] * inv[0][0]
                + 2.0 * dx[0] * dx[1] * inv[0][1]
                + dx[1] * dx[1] * inv[1][1];
            let expected =
                -(2.0f64 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;
            assert!((g.log_pdf(&point) - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn log_pdf_integrates_to_one_in_1d() {
        // Gauss-Legendre quadrature over [mu - 8s, mu + 8s].
        let (mu, var) = (0.7, 2.3);
        let g = GaussianComponent::new(vec![mu], vec![vec![var]]).unwrap();
        let (nodes, weights) = gauss_legendre(80);
        let (a, b) = (mu - 8.0 * var.sqrt(), mu + 8.0 * var.sqrt());
        let mut total = 0.0;
        for (t, w) in nodes.iter().zip(&weights) {
            let x = 0.5 * (b - a) * t + 0.5 * (a + b);
            total += w * 0.5 * (b - a) * g.log_pdf(&[x]).exp();
        }
        assert!((total - 1.0).abs() < 1e-8, "integral {total}");
    }

    #[test]
    fn weighted_moments_simple() {
        // Unit weights, points 0 and 2: population moments.
        let g = weighted_mean_cov(&[vec![0.0], vec![2.0]], &[1.0, 1.0]).unwrap();
        assert!((g.mean()[0] - 1.0).abs() < 1e-15);
        assert!((g.covariance_rows()[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_moments_match_naive_loops() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let n = 50;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![next() * 4.0 - 2.0, next() * 3.0]).collect();
        let tau: Vec<f64> = (0..n).map(|_| 0.05 + next()).collect();

        let total: f64 = tau.iter().sum();
        let mut mean = [0.0; 2];
        for (row, t) in x.iter().zip(&tau) {
            mean[0] += t * row[0];
            mean[1] += t * row[1];
        }
        mean[0] /= total;
        mean[1] /= total;
        let mut cov = [[0.0; 2]; 2];
        for (row, t) in x.iter().zip(&tau) {
            let dx = [row[0] - mean[0], row[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += t * dx[i] * dx[j];
                }
            }
        }
        for r in &mut cov {
            for v in r.iter_mut() {
                *v /= total;
            }
        }

        let g = weighted_mean_cov(&x, &tau).unwrap();
        assert!((g.mean()[0] - mean[0]).abs() < 1e-10);
        assert!((g.mean()[1] - mean[1]).abs() < 1e-10);
        let rows = g.covariance_rows();
        for i in 0..2 {
            for j in 0..2 {
                assert!((rows[i][j] - cov[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn weighted_moments_invariant_to_tau_rescaling() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin() * 2.0, i as f64 * 0.1]).collect();
        let tau: Vec<f64> = (0..40).map(|i| 0.3 + 0.02 * i as f64).collect();
        let scaled: Vec<f64> = tau.iter().map(|t| t * 1.75).collect();
        let a = weighted_mean_cov(&x, &tau).unwrap();
        let b = weighted_mean_cov(&x, &scaled).unwrap();
        for j in 0..2 {
            assert!((a.mean()[j] - b.mean()[j]).abs() < 1e-12);
        }
        let (ra, rb) = (a.covariance_rows(), b.covariance_rows());
        for i in 0..2 {
            for j in 0..2 {
                assert!((ra[i][j] - rb[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_support_point_is_degenerate() {
        // One observation of effective weight cannot identify a 1-d covariance.
        let err = weighted_mean_cov(&[vec![3.0], vec![7.0]], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, CwmError::DegenerateComponent(_)), "{err}");
    }

    #[test]
    fn ridge_recovers_near_singular_covariance() {
        // Two covariate columns that are almost collinear.
        let x: Vec<Vec<f64>> = (0..30).map(|i| {
            let v = i as f64 * 0.1;
            vec![v, 2.0 * v + 1e-9 * (i as f64).cos()]
        }).collect();
        let tau = vec![1.0; 30];
        let g = weighted_mean_cov(&x, &tau).unwrap();
        // Factorization succeeded, so the density is finite everywhere.
        assert!(g.log_pdf(&[0.5, 2.0]).is_finite());
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let err = GaussianComponent::new(
            vec![0.0, 0.0],
            vec![vec![1.0, 0.2], vec![0.3, 1.0]],
        )
        .unwrap_err();
        assert!(matches!(err, CwmError::InvalidInput(_)));
    }

    /// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
    /// Legendre recurrence (test-only quadrature oracle).
    fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, t);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
                let dt = p1 / dp;
                t -= dt;
                if dt.abs() < 1e-15 {
                    break;
                }
            }
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            nodes[i] = t;
            weights[i] = 2.0 / ((1.0 - t * t) * dp * dp);
        }
        (nodes, weights)
    }
}
