//! Exponential-family response distributions with canonical links, and
//! weighted maximum-likelihood fitting via iteratively reweighted least
//! squares (IRLS).
//!
//! The linear predictor `eta = b0 + b1'x` is the natural parameter of the
//! family; the canonical links are logit (binomial), log (Poisson) and
//! identity (Gaussian). All densities are evaluated in log space.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CwmError, Result};

/// Clamp applied to the linear predictor inside link inversions so that
/// `exp(eta)` stays finite at working precision.
pub const ETA_CLAMP: f64 = 30.0;

const IRLS_MAX_ITER: usize = 50;
const IRLS_STEP_TOL: f64 = 1e-9;
/// Below this relative step size the concave objective is in its locally
/// quadratic regime, where a full Newton step ascends but measured objective
/// differences sit at evaluation-noise level.
const IRLS_TRUST_STEP: f64 = 1e-6;
const MAX_STEP_HALVINGS: usize = 20;

/// Response distribution of the regression conditional.
///
/// Other canonical-link members of the exponential family (gamma, inverse
/// Gaussian) would slot in as additional variants with their own cumulant
/// and link inversions; only these four are instantiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Family {
    /// Binomial with a single trial.
    Bernoulli,
    /// Binomial counts in `0..=trials` with logit link.
    Binomial { trials: u32 },
    /// Nonnegative counts with log link.
    Poisson,
    /// Real-valued response with identity link and free variance.
    #[serde(rename = "gaussian")]
    GaussianLinear,
}

impl Family {
    /// Number of trials for the binomial families, `None` otherwise.
    pub fn trials(&self) -> Option<u32> {
        match self {
            Family::Bernoulli => Some(1),
            Family::Binomial { trials } => Some(*trials),
            _ => None,
        }
    }

    /// Whether the dispersion parameter is a free parameter of the family.
    pub fn free_dispersion(&self) -> bool {
        matches!(self, Family::GaussianLinear)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Bernoulli => "bernoulli",
            Family::Binomial { .. } => "binomial",
            Family::Poisson => "poisson",
            Family::GaussianLinear => "gaussian",
        }
    }

    /// Check that the family parameters themselves are valid.
    pub fn validate(&self) -> Result<()> {
        if let Family::Binomial { trials } = self {
            if *trials < 1 {
                return Err(CwmError::InvalidInput(
                    "binomial trials must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Check that a single response value lies in the support.
    pub fn check_support(&self, y: f64) -> std::result::Result<(), String> {
        if !y.is_finite() {
            return Err(format!("response {y} is not finite"));
        }
        match self {
            Family::Bernoulli | Family::Binomial { .. } => {
                let m = f64::from(self.trials().unwrap());
                if y.fract() != 0.0 || y < 0.0 || y > m {
                    return Err(format!("response {y} is not an integer in 0..={m}"));
                }
            }
            Family::Poisson => {
                if y.fract() != 0.0 || y < 0.0 {
                    return Err(format!("response {y} is not a nonnegative integer"));
                }
            }
            Family::GaussianLinear => {}
        }
        Ok(())
    }

    /// Cumulant function `b(eta)` of the canonical form.
    pub fn cumulant(&self, eta: f64) -> f64 {
        match self {
            Family::Bernoulli | Family::Binomial { .. } => {
                f64::from(self.trials().unwrap()) * softplus(eta)
            }
            Family::Poisson => eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp(),
            Family::GaussianLinear => 0.5 * eta * eta,
        }
    }

    /// Log density of `y` given the linear predictor, `log q(y | eta)`.
    ///
    /// Finite for all in-support `y` and finite `eta`; overflow is avoided by
    /// evaluating in log space (softplus, log-gamma binomial coefficients).
    pub fn log_density(&self, y: f64, eta: f64, dispersion: f64) -> f64 {
        match self {
            Family::Bernoulli | Family::Binomial { .. } => {
                let m = f64::from(self.trials().unwrap());
                ln_choose(m, y) + y * eta - m * softplus(eta)
            }
            Family::Poisson => {
                let eta = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
                y * eta - eta.exp() - ln_gamma(y + 1.0)
            }
            Family::GaussianLinear => {
                let r = y - eta;
                -0.5 * ((2.0 * std::f64::consts::PI * dispersion).ln() + r * r / dispersion)
            }
        }
    }

    /// Conditional mean and variance implied by the linear predictor,
    /// `(b'(eta), a(dispersion) b''(eta))`.
    pub fn mean_variance(&self, eta: f64, dispersion: f64) -> (f64, f64) {
        match self {
            Family::Bernoulli | Family::Binomial { .. } => {
                let m = f64::from(self.trials().unwrap());
                let p = sigmoid(eta.clamp(-ETA_CLAMP, ETA_CLAMP));
                (m * p, m * p * (1.0 - p))
            }
            Family::Poisson => {
                let rate = eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp();
                (rate, rate)
            }
            Family::GaussianLinear => (eta, dispersion),
        }
    }

    /// Intercept of the null model fitted to a weighted mean response.
    fn null_intercept(&self, ybar: f64) -> f64 {
        match self {
            Family::Bernoulli | Family::Binomial { .. } => {
                let m = f64::from(self.trials().unwrap());
                let p = (ybar / m).clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            }
            Family::Poisson => ybar.max(1e-6).ln(),
            Family::GaussianLinear => ybar,
        }
    }
}

/// Regression coefficients and dispersion of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmComponent {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    /// Variance parameter for the Gaussian family; fixed at 1 for the
    /// discrete families.
    pub dispersion: f64,
}

impl GlmComponent {
    pub fn new(intercept: f64, slopes: Vec<f64>, dispersion: f64) -> Result<Self> {
        if !(dispersion > 0.0) {
            return Err(CwmError::InvalidInput(format!(
                "dispersion must be positive, got {dispersion}"
            )));
        }
        Ok(Self { intercept, slopes, dispersion })
    }

    /// Covariate dimension this component applies to.
    pub fn dim(&self) -> usize {
        self.slopes.len()
    }

    /// Linear predictor `b0 + b1'x` through the canonical link.
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        assert_eq!(
            x.len(),
            self.slopes.len(),
            "covariate dimension mismatch: expected {}, got {}",
            self.slopes.len(),
            x.len()
        );
        self.intercept + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// `log q(y | x)` for this component under `family`.
    pub fn log_density(&self, family: &Family, x: &[f64], y: f64) -> f64 {
        family.log_density(y, self.linear_predictor(x), self.dispersion)
    }

    /// Conditional mean and variance of the response at `x`.
    pub fn mean_variance(&self, family: &Family, x: &[f64]) -> (f64, f64) {
        family.mean_variance(self.linear_predictor(x), self.dispersion)
    }

    /// Coefficients as a flat `[intercept, slopes...]` vector.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(1 + self.slopes.len());
        c.push(self.intercept);
        c.extend_from_slice(&self.slopes);
        c
    }
}

/// Outcome of a weighted IRLS fit.
#[derive(Debug, Clone)]
pub struct IrlsFit {
    pub component: GlmComponent,
    /// False when the iteration cap was hit; the best iterate is still returned.
    pub converged: bool,
    pub n_iter: usize,
    /// Weighted log-likelihood of the returned coefficients.
    pub loglik: f64,
    /// Weighted log-likelihood after each iteration; non-decreasing.
    pub trace: Vec<f64>,
}

/// Maximize the weighted log-likelihood `sum_n w_n log q(y_n | x_n)` by
/// Fisher scoring with a working response, ridge jitter on near-singular
/// information matrices, and step-halving whenever a full step would
/// decrease the objective.
///
/// Observations with zero weight are skipped entirely. For the Gaussian
/// family the dispersion is estimated in closed form after the coefficients.
pub fn irls_weighted_fit(
    x: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    family: &Family,
    init: Option<&GlmComponent>,
) -> Result<IrlsFit> {
    let n = x.len();
    if y.len() != n || weights.len() != n {
        return Err(CwmError::DimensionMismatch(format!(
            "irls inputs: x has {n} rows, y has {}, weights has {}",
            y.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(CwmError::InvalidInput("irls weights must be finite and nonnegative".into()));
    }
    let active: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    let d = x.first().map_or(0, |r| r.len());
    let p = d + 1;
    if active.len() < p {
        return Err(CwmError::SingularDesign);
    }

    // Working copies restricted to positive-weight rows, with the intercept column.
    let rows: Vec<DVector<f64>> = active
        .iter()
        .map(|&i| {
            let mut z = DVector::zeros(p);
            z[0] = 1.0;
            for (j, v) in x[i].iter().enumerate() {
                z[j + 1] = *v;
            }
            z
        })
        .collect();
    let yy: Vec<f64> = active.iter().map(|&i| y[i]).collect();
    let ww: Vec<f64> = active.iter().map(|&i| weights[i]).collect();
    let wsum: f64 = ww.iter().sum();

    let mut beta = DVector::zeros(p);
    match init {
        Some(c) if c.dim() == d => {
            beta[0] = c.intercept;
            for (j, s) in c.slopes.iter().enumerate() {
                beta[j + 1] = *s;
            }
        }
        Some(c) => {
            return Err(CwmError::DimensionMismatch(format!(
                "irls warm start has dimension {}, data has {d}",
                c.dim()
            )));
        }
        None => {
            let ybar = ww.iter().zip(&yy).map(|(w, v)| w * v).sum::<f64>() / wsum;
            beta[0] = family.null_intercept(ybar);
        }
    }

    // Profile objective: for the Gaussian family the dispersion maximizer is
    // plugged in, so the beta search is dispersion-free.
    let objective = |b: &DVector<f64>| -> f64 {
        match family {
            Family::GaussianLinear => {
                let disp = gaussian_dispersion(&rows, &yy, &ww, b, wsum);
                rows.iter()
                    .zip(&yy)
                    .zip(&ww)
                    .map(|((z, yv), w)| w * family.log_density(*yv, b.dot(z), disp))
                    .sum()
            }
            _ => rows
                .iter()
                .zip(&yy)
                .zip(&ww)
                .map(|((z, yv), w)| w * family.log_density(*yv, b.dot(z), 1.0))
                .sum(),
        }
    };

    let mut obj = objective(&beta);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut n_iter = 0;

    for _ in 0..IRLS_MAX_ITER {
        n_iter += 1;

        // Fisher scoring step: solve (Z' W V Z) delta-target via the working response.
        let mut info = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for ((z, yv), w) in rows.iter().zip(&yy).zip(&ww) {
            let eta = beta.dot(z);
            let (mu, var) = family.mean_variance(eta, 1.0);
            let v = var.max(1e-10);
            let t = eta + (yv - mu) / v;
            let wv = w * v;
            info.ger(wv, z, z, 1.0);
            rhs.axpy(wv * t, z, 1.0);
        }

        let proposal = solve_spd_with_jitter(&info, &rhs)?;
        let delta = &proposal - &beta;

        // Quadratic convergence collapses the proposed step fast; once it is
        // negligible, stop. An objective-based threshold would quit with the
        // coefficients still carrying slack of the square root of that
        // threshold.
        let scale = 1.0 + beta.amax();
        if delta.amax() <= IRLS_STEP_TOL * scale {
            converged = true;
            break;
        }

        if delta.amax() <= IRLS_TRUST_STEP * scale {
            // Contracting regime: take the full step without an objective
            // comparison, which would branch on evaluation noise here.
            beta += &delta;
            obj = objective(&beta);
            trace.push(obj);
            continue;
        }

        // Step-halving keeps the weighted log-likelihood non-decreasing.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let cand = &beta + step * &delta;
            let cand_obj = objective(&cand);
            if cand_obj.is_finite() && cand_obj >= obj {
                accepted = Some((cand, cand_obj));
                break;
            }
            step *= 0.5;
        }
        let Some((new_beta, new_obj)) = accepted else {
            // No improving step exists at working precision.
            converged = true;
            break;
        };

        beta = new_beta;
        obj = new_obj;
        trace.push(obj);
    }

    if !converged {
        log::warn!("irls stopped after {IRLS_MAX_ITER} iterations without convergence");
    }

    let dispersion = match family {
        Family::GaussianLinear => gaussian_dispersion(&rows, &yy, &ww, &beta, wsum),
        _ => 1.0,
    };
    let slopes = (1..p).map(|j| beta[j]).collect();
    Ok(IrlsFit {
        component: GlmComponent { intercept: beta[0], slopes, dispersion },
        converged,
        n_iter,
        loglik: obj,
        trace,
    })
}

/// Weighted residual variance, floored away from zero.
fn gaussian_dispersion(
    rows: &[DVector<f64>],
    y: &[f64],
    w: &[f64],
    beta: &DVector<f64>,
    wsum: f64,
) -> f64 {
    let ss: f64 = rows
        .iter()
        .zip(y)
        .zip(w)
        .map(|((z, yv), wv)| {
            let r = yv - beta.dot(z);
            wv * r * r
        })
        .sum();
    (ss / wsum).max(1e-12)
}

/// Solve `A b = rhs` for symmetric positive-definite `A`, escalating a ridge
/// jitter (starting at 1e-8 of the mean diagonal) when the factorization fails.
fn solve_spd_with_jitter(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch.solve(rhs));
    }
    let p = a.nrows();
    let scale = (a.trace() / p as f64).abs().max(1e-300);
    let mut eps = 1e-8;
    while eps <= 1e-2 {
        let mut jittered = a.clone();
        for i in 0..p {
            jittered[(i, i)] += eps * scale;
        }
        if let Some(ch) = Cholesky::new(jittered) {
            return Ok(ch.solve(rhs));
        }
        eps *= 10.0;
    }
    Err(CwmError::SingularDesign)
}

/// `ln(1 + exp(v))` without overflow.
pub fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// Logistic function, numerically symmetric around 0.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn ln_gamma(v: f64) -> f64 {
    libm::lgamma(v)
}

/// `ln C(m, y)` via log-gamma.
fn ln_choose(m: f64, y: f64) -> f64 {
    ln_gamma(m + 1.0) - ln_gamma(y + 1.0) - ln_gamma(m - y + 1.0)
}
