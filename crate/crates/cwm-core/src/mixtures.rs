//! Finite mixtures of GLMs, with fixed mixing weights (FMR) or with
//! covariate-dependent multinomial-logit weights (FMRC). These are the
//! reference competitors for the cluster-weighted model, and its nested
//! special cases under the marginal constraints.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::Dataset;
use crate::driver::{run_em, EmEstimator};
use crate::em::{hard_tau, FitConfig, FitResult};
use crate::error::{CwmError, Result};
use crate::exp_family::{irls_weighted_fit, Family, GlmComponent};
use crate::numeric::{log_sum_exp, softmax_from_log};

const ALPHA_CLAMP: f64 = 50.0;
const LOGIT_MAX_ITER: usize = 25;
const LOGIT_REL_TOL: f64 = 1e-10;

/// Finite mixture of GLMs: constant mixing weights over G regression
/// conditionals, no covariate marginal.
#[derive(Debug, Clone)]
pub struct FmrModel {
    weights: Vec<f64>,
    glms: Vec<GlmComponent>,
    pub family: Family,
}

impl FmrModel {
    pub fn new(weights: Vec<f64>, glms: Vec<GlmComponent>, family: Family) -> Result<Self> {
        family.validate()?;
        let g = weights.len();
        if g == 0 || glms.len() != g {
            return Err(CwmError::DimensionMismatch("weights vs glms".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0))
            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(CwmError::InvalidInput(
                "mixing weights must be positive and sum to 1".into(),
            ));
        }
        Ok(Self { weights, glms, family })
    }

    pub fn g(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn glms(&self) -> &[GlmComponent] {
        &self.glms
    }

    fn component_log_terms(&self, x: &[f64], y: f64) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.glms)
            .map(|(w, c)| w.ln() + c.log_density(&self.family, x, y))
            .collect()
    }

    /// Log of the conditional mixture density `f(y | x)`.
    pub fn log_density(&self, x: &[f64], y: f64) -> f64 {
        log_sum_exp(&self.component_log_terms(x, y))
    }

    pub fn log_likelihood(&self, data: &Dataset) -> f64 {
        data.x.iter().zip(&data.y).map(|(x, y)| self.log_density(x, *y)).sum()
    }

    /// Posterior membership probabilities at one observation.
    pub fn posterior(&self, x: &[f64], y: f64) -> Vec<f64> {
        softmax_from_log(&self.component_log_terms(x, y))
    }
}

/// Multinomial-logit concomitant parameters, one row per component, with the
/// first component pinned at zero as the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcomitantParams {
    alpha0: Vec<f64>,
    alpha1: Vec<Vec<f64>>,
}

impl ConcomitantParams {
    pub fn new(alpha0: Vec<f64>, alpha1: Vec<Vec<f64>>) -> Result<Self> {
        let g = alpha0.len();
        if g == 0 || alpha1.len() != g {
            return Err(CwmError::DimensionMismatch("alpha0 vs alpha1".into()));
        }
        let d = alpha1[0].len();
        if alpha1.iter().any(|r| r.len() != d) {
            return Err(CwmError::DimensionMismatch("alpha1 rows".into()));
        }
        if alpha0[0] != 0.0 || alpha1[0].iter().any(|v| *v != 0.0) {
            return Err(CwmError::InvalidInput(
                "first concomitant row must be the zero baseline".into(),
            ));
        }
        Ok(Self { alpha0, alpha1 })
    }

    /// All-zero parameters: uniform weights everywhere.
    pub fn zeros(g: usize, d: usize) -> Self {
        Self { alpha0: vec![0.0; g], alpha1: vec![vec![0.0; d]; g] }
    }

    pub fn g(&self) -> usize {
        self.alpha0.len()
    }

    pub fn dim(&self) -> usize {
        self.alpha1[0].len()
    }

    pub fn alpha0(&self) -> &[f64] {
        &self.alpha0
    }

    pub fn alpha1(&self) -> &[Vec<f64>] {
        &self.alpha1
    }

    fn linear_terms(&self, x: &[f64]) -> Vec<f64> {
        self.alpha0
            .iter()
            .zip(&self.alpha1)
            .map(|(a0, a1)| a0 + a1.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }

    /// Mixing weights at `x`: a softmax over the linear terms.
    pub fn weights_at(&self, x: &[f64]) -> Vec<f64> {
        softmax_from_log(&self.linear_terms(x))
    }
}

/// Map shared-covariance Gaussian marginals to the concomitant parameters
/// that reproduce their posterior weight ratios, re-based so component 1 is
/// the zero baseline.
pub fn cwm_to_fmrc_alphas(means: &[Vec<f64>], sigma: &[Vec<f64>]) -> Result<ConcomitantParams> {
    let g = means.len();
    if g == 0 {
        return Err(CwmError::InvalidInput("need at least one mean".into()));
    }
    let d = means[0].len();
    if sigma.len() != d || sigma.iter().any(|r| r.len() != d) {
        return Err(CwmError::DimensionMismatch("sigma must be d x d".into()));
    }
    let sig = DMatrix::from_fn(d, d, |i, j| 0.5 * (sigma[i][j] + sigma[j][i]));
    let chol = Cholesky::new(sig)
        .ok_or_else(|| CwmError::InvalidInput("sigma is not positive-definite".into()))?;

    let mut alpha0 = Vec::with_capacity(g);
    let mut alpha1 = Vec::with_capacity(g);
    for mean in means {
        if mean.len() != d {
            return Err(CwmError::DimensionMismatch("mean dimensions disagree".into()));
        }
        let mu = DVector::from_row_slice(mean);
        let solved = chol.solve(&mu); // sigma^{-1} mu
        alpha0.push(-0.5 * mu.dot(&solved));
        alpha1.push(solved.iter().copied().collect::<Vec<f64>>());
    }
    // Re-base on component 1; the softmax is invariant to this shift.
    let base0 = alpha0[0];
    let base1 = alpha1[0].clone();
    for a in &mut alpha0 {
        *a -= base0;
    }
    for row in &mut alpha1 {
        for (v, b) in row.iter_mut().zip(&base1) {
            *v -= b;
        }
    }
    ConcomitantParams::new(alpha0, alpha1)
}

/// Finite mixture of GLMs whose mixing weights depend on the covariates
/// through a multinomial-logit concomitant model.
#[derive(Debug, Clone)]
pub struct FmrcModel {
    concomitant: ConcomitantParams,
    glms: Vec<GlmComponent>,
    pub family: Family,
}

impl FmrcModel {
    pub fn new(
        concomitant: ConcomitantParams,
        glms: Vec<GlmComponent>,
        family: Family,
    ) -> Result<Self> {
        family.validate()?;
        if concomitant.g() != glms.len() || glms.is_empty() {
            return Err(CwmError::DimensionMismatch("concomitant vs glms".into()));
        }
        Ok(Self { concomitant, glms, family })
    }

    pub fn g(&self) -> usize {
        self.glms.len()
    }

    pub fn concomitant(&self) -> &ConcomitantParams {
        &self.concomitant
    }

    pub fn glms(&self) -> &[GlmComponent] {
        &self.glms
    }

    fn component_log_terms(&self, x: &[f64], y: f64) -> Vec<f64> {
        let gate = self.concomitant.linear_terms(x);
        let shift = log_sum_exp(&gate);
        gate.iter()
            .zip(&self.glms)
            .map(|(t, c)| t - shift + c.log_density(&self.family, x, y))
            .collect()
    }

    pub fn log_density(&self, x: &[f64], y: f64) -> f64 {
        log_sum_exp(&self.component_log_terms(x, y))
    }

    pub fn log_likelihood(&self, data: &Dataset) -> f64 {
        data.x.iter().zip(&data.y).map(|(x, y)| self.log_density(x, *y)).sum()
    }

    pub fn posterior(&self, x: &[f64], y: f64) -> Vec<f64> {
        softmax_from_log(&self.component_log_terms(x, y))
    }
}

pub type FmrFitResult = FitResult<FmrModel>;
pub type FmrcFitResult = FitResult<FmrcModel>;

/// Fit a finite mixture of GLMs by best-of-restarts EM.
pub fn fit_fmr(
    data: &Dataset,
    g: usize,
    family: &Family,
    config: &FitConfig,
) -> Result<FmrFitResult> {
    data.validate_for(family)?;
    run_em(&FmrEstimator { g, family: *family }, data, config)
}

/// Fit a mixture of GLMs with multinomial-logit concomitant weights.
pub fn fit_fmrc(
    data: &Dataset,
    g: usize,
    family: &Family,
    config: &FitConfig,
) -> Result<FmrcFitResult> {
    data.validate_for(family)?;
    run_em(&FmrcEstimator { g, family: *family }, data, config)
}

/// Free parameters of an FMR model.
pub fn fmr_param_count(g: usize, d: usize, family: &Family) -> usize {
    (g - 1) + g * (d + 1) + if family.free_dispersion() { g } else { 0 }
}

/// Free parameters of an FMRC model: the concomitant has (G-1)(d+1) free
/// entries after fixing the baseline row.
pub fn fmrc_param_count(g: usize, d: usize, family: &Family) -> usize {
    (g - 1) * (d + 1) + g * (d + 1) + if family.free_dispersion() { g } else { 0 }
}

struct FmrEstimator {
    g: usize,
    family: Family,
}

impl EmEstimator for FmrEstimator {
    type Model = FmrModel;

    fn n_components(&self) -> usize {
        self.g
    }

    fn init_model(&self, data: &Dataset, labels: &[usize]) -> Result<FmrModel> {
        let tau = hard_tau(labels, self.g);
        fmr_m_step(data, &tau, &self.family, None)
    }

    fn e_step(&self, data: &Dataset, model: &FmrModel) -> (Vec<Vec<f64>>, f64) {
        let mut tau = Vec::with_capacity(data.n());
        let mut loglik = 0.0;
        for (x, y) in data.x.iter().zip(&data.y) {
            let terms = model.component_log_terms(x, *y);
            loglik += log_sum_exp(&terms);
            tau.push(softmax_from_log(&terms));
        }
        (tau, loglik)
    }

    fn m_step(&self, data: &Dataset, tau: &[Vec<f64>], prev: &FmrModel) -> Result<FmrModel> {
        fmr_m_step(data, tau, &self.family, Some(prev))
    }

    fn free_params(&self, dim: usize) -> usize {
        fmr_param_count(self.g, dim, &self.family)
    }
}

fn fmr_m_step(
    data: &Dataset,
    tau: &[Vec<f64>],
    family: &Family,
    prev: Option<&FmrModel>,
) -> Result<FmrModel> {
    let n = data.n();
    let g = tau[0].len();
    let mut weights = Vec::with_capacity(g);
    let mut glms = Vec::with_capacity(g);
    for j in 0..g {
        let col: Vec<f64> = tau.iter().map(|r| r[j]).collect();
        let total: f64 = col.iter().sum();
        if !(total > 0.0) {
            return Err(CwmError::DegenerateComponent(format!("component {j} has no weight")));
        }
        weights.push(total / n as f64);
        let warm = prev.map(|m| &m.glms[j]);
        glms.push(irls_weighted_fit(&data.x, &data.y, &col, family, warm)?.component);
    }
    // Keep the weight simplex exact against accumulated rounding.
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    FmrModel::new(weights, glms, *family)
}

struct FmrcEstimator {
    g: usize,
    family: Family,
}

impl EmEstimator for FmrcEstimator {
    type Model = FmrcModel;

    fn n_components(&self) -> usize {
        self.g
    }

    fn init_model(&self, data: &Dataset, labels: &[usize]) -> Result<FmrcModel> {
        let tau = hard_tau(labels, self.g);
        fmrc_m_step(data, &tau, &self.family, None)
    }

    fn e_step(&self, data: &Dataset, model: &FmrcModel) -> (Vec<Vec<f64>>, f64) {
        let mut tau = Vec::with_capacity(data.n());
        let mut loglik = 0.0;
        for (x, y) in data.x.iter().zip(&data.y) {
            let terms = model.component_log_terms(x, *y);
            loglik += log_sum_exp(&terms);
            tau.push(softmax_from_log(&terms));
        }
        (tau, loglik)
    }

    fn m_step(&self, data: &Dataset, tau: &[Vec<f64>], prev: &FmrcModel) -> Result<FmrcModel> {
        fmrc_m_step(data, tau, &self.family, Some(prev))
    }

    fn free_params(&self, dim: usize) -> usize {
        fmrc_param_count(self.g, dim, &self.family)
    }
}

fn fmrc_m_step(
    data: &Dataset,
    tau: &[Vec<f64>],
    family: &Family,
    prev: Option<&FmrcModel>,
) -> Result<FmrcModel> {
    let g = tau[0].len();
    let mut glms = Vec::with_capacity(g);
    for j in 0..g {
        let col: Vec<f64> = tau.iter().map(|r| r[j]).collect();
        if !(col.iter().sum::<f64>() > 0.0) {
            return Err(CwmError::DegenerateComponent(format!("component {j} has no weight")));
        }
        let warm = prev.map(|m| &m.glms[j]);
        glms.push(irls_weighted_fit(&data.x, &data.y, &col, family, warm)?.component);
    }
    let warm = prev
        .map(|m| m.concomitant.clone())
        .unwrap_or_else(|| ConcomitantParams::zeros(g, data.dim()));
    let concomitant = multinomial_logit_fit(&data.x, tau, &warm);
    FmrcModel::new(concomitant, glms, *family)
}

/// Weighted multinomial logistic regression with responsibilities as soft
/// targets: full Newton on the concave objective with step-halving, the
/// first component fixed as the baseline, and coefficients clamped at 50.
fn multinomial_logit_fit(
    x: &[Vec<f64>],
    tau: &[Vec<f64>],
    warm: &ConcomitantParams,
) -> ConcomitantParams {
    let g = warm.g();
    let d = warm.dim();
    let p = d + 1;
    if g == 1 {
        return ConcomitantParams::zeros(1, d);
    }
    let free = (g - 1) * p;

    // theta holds rows 2..G as [a0, a1...] blocks.
    let mut theta = DVector::zeros(free);
    for j in 1..g {
        theta[(j - 1) * p] = warm.alpha0[j];
        for k in 0..d {
            theta[(j - 1) * p + 1 + k] = warm.alpha1[j][k];
        }
    }

    let params_from = |t: &DVector<f64>| -> ConcomitantParams {
        let mut alpha0 = vec![0.0; g];
        let mut alpha1 = vec![vec![0.0; d]; g];
        for j in 1..g {
            alpha0[j] = t[(j - 1) * p];
            for k in 0..d {
                alpha1[j][k] = t[(j - 1) * p + 1 + k];
            }
        }
        ConcomitantParams { alpha0, alpha1 }
    };
    let objective = |t: &DVector<f64>| -> f64 {
        let params = params_from(t);
        x.iter()
            .zip(tau)
            .map(|(row, taus)| {
                let terms = params.linear_terms(row);
                let shift = log_sum_exp(&terms);
                taus.iter()
                    .zip(&terms)
                    .map(|(tv, term)| tv * (term - shift))
                    .sum::<f64>()
            })
            .sum()
    };

    let mut obj = objective(&theta);
    for _ in 0..LOGIT_MAX_ITER {
        let params = params_from(&theta);
        let mut grad: DVector<f64> = DVector::zeros(free);
        let mut hess: DMatrix<f64> = DMatrix::zeros(free, free);
        let mut z: DVector<f64> = DVector::zeros(p);
        for (row, taus) in x.iter().zip(tau) {
            z[0] = 1.0;
            for (k, v) in row.iter().enumerate() {
                z[k + 1] = *v;
            }
            let w = params.weights_at(row);
            for j in 1..g {
                let resid = taus[j] - w[j];
                for a in 0..p {
                    grad[(j - 1) * p + a] += resid * z[a];
                }
                for h in 1..g {
                    let coupling = w[j] * (f64::from(u8::from(j == h)) - w[h]);
                    for a in 0..p {
                        for b in 0..p {
                            hess[((j - 1) * p + a, (h - 1) * p + b)] += coupling * z[a] * z[b];
                        }
                    }
                }
            }
        }
        // Newton step on the negated Hessian (positive semi-definite).
        let mut lifted = hess;
        let scale: f64 = (lifted.trace() / free as f64).abs().max(1e-12);
        for i in 0..free {
            lifted[(i, i)] += 1e-8 * scale;
        }
        let Some(chol) = Cholesky::new(lifted) else { break };
        let delta = chol.solve(&grad);

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..LOGIT_MAX_ITER {
            let mut cand = &theta + step * &delta;
            for v in cand.iter_mut() {
                *v = v.clamp(-ALPHA_CLAMP, ALPHA_CLAMP);
            }
            let cand_obj = objective(&cand);
            if cand_obj.is_finite() && cand_obj >= obj {
                if cand.iter().any(|v| v.abs() >= ALPHA_CLAMP) {
                    log::warn!("concomitant coefficients clamped at |alpha| = {ALPHA_CLAMP}");
                }
                let improvement = cand_obj - obj;
                theta = cand;
                obj = cand_obj;
                accepted = improvement > LOGIT_REL_TOL * (1.0 + obj.abs());
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    params_from(&theta)
}
