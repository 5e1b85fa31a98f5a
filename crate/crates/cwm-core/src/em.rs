//! The cluster-weighted model and its EM estimation: posterior
//! responsibilities, closed-form Gaussian updates, responsibility-weighted
//! IRLS for the regression coefficients, and the constraint modes that tie
//! marginal parameters across components.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::driver::{run_em, EmEstimator};
use crate::error::{CwmError, Result};
use crate::exp_family::{irls_weighted_fit, Family, GlmComponent};
use crate::gaussian::{weighted_mean_cov, GaussianComponent};
use crate::numeric::{log_sum_exp, softmax_from_log};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Ties on the Gaussian marginal parameters across components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// Every component has its own mean, covariance, and mixing weight.
    Unconstrained,
    /// One shared mean and covariance for all components; the covariate
    /// factor then cancels from the posterior.
    CommonGaussian,
    /// Shared covariance, component-specific means, and equal weights 1/G;
    /// the covariate factor acts like a multinomial-logit gate.
    CommonSigmaEqualWeights,
}

impl Constraint {
    pub fn name(&self) -> &'static str {
        match self {
            Constraint::Unconstrained => "none",
            Constraint::CommonGaussian => "common-gaussian",
            Constraint::CommonSigmaEqualWeights => "common-sigma-equal-weights",
        }
    }
}

/// A fitted or hand-built cluster-weighted model: mixing weights, Gaussian
/// covariate marginals, and exponential-family regression conditionals.
#[derive(Debug, Clone)]
pub struct CwmModel {
    weights: Vec<f64>,
    gaussians: Vec<GaussianComponent>,
    glms: Vec<GlmComponent>,
    pub family: Family,
    pub constraint: Constraint,
}

impl CwmModel {
    pub fn new(
        weights: Vec<f64>,
        gaussians: Vec<GaussianComponent>,
        glms: Vec<GlmComponent>,
        family: Family,
        constraint: Constraint,
    ) -> Result<Self> {
        family.validate()?;
        let g = weights.len();
        if g == 0 || gaussians.len() != g || glms.len() != g {
            return Err(CwmError::DimensionMismatch(format!(
                "component counts disagree: {g} weights, {} gaussians, {} glms",
                gaussians.len(),
                glms.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(CwmError::InvalidInput("mixing weights must be strictly positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(CwmError::InvalidInput(format!(
                "mixing weights sum to {total}, expected 1"
            )));
        }
        let d = gaussians[0].dim();
        if gaussians.iter().any(|c| c.dim() != d) || glms.iter().any(|c| c.dim() != d) {
            return Err(CwmError::DimensionMismatch(
                "components disagree on the covariate dimension".into(),
            ));
        }
        match constraint {
            Constraint::Unconstrained => {}
            Constraint::CommonGaussian => {
                for c in &gaussians[1..] {
                    if c.mean() != gaussians[0].mean()
                        || c.covariance_rows() != gaussians[0].covariance_rows()
                    {
                        return Err(CwmError::InvalidInput(
                            "common-gaussian requires identical marginals".into(),
                        ));
                    }
                }
            }
            Constraint::CommonSigmaEqualWeights => {
                for c in &gaussians[1..] {
                    if c.covariance_rows() != gaussians[0].covariance_rows() {
                        return Err(CwmError::InvalidInput(
                            "common-sigma requires identical covariances".into(),
                        ));
                    }
                }
                let uniform = 1.0 / g as f64;
                if weights.iter().any(|w| (w - uniform).abs() > WEIGHT_SUM_TOL) {
                    return Err(CwmError::InvalidInput(
                        "equal-weights constraint requires weights 1/G".into(),
                    ));
                }
            }
        }
        Ok(Self { weights, gaussians, glms, family, constraint })
    }

    pub fn g(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.gaussians[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gaussians(&self) -> &[GaussianComponent] {
        &self.gaussians
    }

    pub fn glms(&self) -> &[GlmComponent] {
        &self.glms
    }

    /// Per-component joint log terms `ln pi_g + ln phi(x) + ln q(y|x)`.
    fn component_log_terms(&self, x: &[f64], y: f64) -> Vec<f64> {
        (0..self.g())
            .map(|g| {
                self.weights[g].ln()
                    + self.gaussians[g].log_pdf(x)
                    + self.glms[g].log_density(&self.family, x, y)
            })
            .collect()
    }

    /// Log of the mixture joint density at `(x, y)`.
    pub fn joint_log_density(&self, x: &[f64], y: f64) -> f64 {
        log_sum_exp(&self.component_log_terms(x, y))
    }

    /// Observed-data log-likelihood over a dataset.
    pub fn log_likelihood(&self, data: &Dataset) -> f64 {
        data.x
            .iter()
            .zip(&data.y)
            .map(|(x, y)| self.joint_log_density(x, *y))
            .sum()
    }

    /// Posterior membership probabilities at one observation.
    pub fn posterior(&self, x: &[f64], y: f64) -> Vec<f64> {
        softmax_from_log(&self.component_log_terms(x, y))
    }

    /// The same model with components re-indexed by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.g() {
            return Err(CwmError::DimensionMismatch("permutation length".into()));
        }
        Ok(Self {
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
            gaussians: perm.iter().map(|&i| self.gaussians[i].clone()).collect(),
            glms: perm.iter().map(|&i| self.glms[i].clone()).collect(),
            family: self.family,
            constraint: self.constraint,
        })
    }
}

/// Posterior membership probabilities of every observation, one row per
/// observation, each row summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    tau: Vec<Vec<f64>>,
}

impl Responsibilities {
    pub(crate) fn from_rows(tau: Vec<Vec<f64>>) -> Self {
        debug_assert!(tau
            .iter()
            .all(|row| (row.iter().sum::<f64>() - 1.0).abs() < 1e-10));
        Self { tau }
    }

    pub fn n(&self) -> usize {
        self.tau.len()
    }

    pub fn g(&self) -> usize {
        self.tau.first().map_or(0, |r| r.len())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.tau
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.tau[n]
    }

    pub fn column(&self, g: usize) -> Vec<f64> {
        self.tau.iter().map(|r| r[g]).collect()
    }

    /// MAP classification: row-wise argmax, ties resolved to the lowest index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.tau
            .iter()
            .map(|row| {
                let mut best = 0;
                for (j, v) in row.iter().enumerate().skip(1) {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// How the EM run is initialized and stopped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Hard cap on EM iterations; at least 3 (the stopping rule looks at
    /// three consecutive log-likelihood values).
    pub max_iter: usize,
    /// Threshold on the Aitken-projected remaining log-likelihood gain.
    pub epsilon: f64,
    /// Additional random-partition starts beyond the primary one.
    pub n_restarts: usize,
    pub init: InitStrategy,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    RandomPartition,
    KMeansOnX,
    GivenLabels,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { max_iter: 200, epsilon: 0.05, n_restarts: 10, init: InitStrategy::KMeansOnX, seed: 0 }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 3 {
            return Err(CwmError::InvalidInput("max_iter must be at least 3".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(CwmError::InvalidInput("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a best-of-restarts EM fit.
#[derive(Debug, Clone)]
pub struct FitResult<M> {
    pub model: M,
    /// Observed-data log-likelihood after each iteration; non-decreasing.
    pub loglik_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    pub bic: f64,
    pub responsibilities: Responsibilities,
}

impl<M> FitResult<M> {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

pub type CwmFitResult = FitResult<CwmModel>;

/// E-step: responsibilities and the observed-data log-likelihood, both in
/// log space through log-sum-exp.
pub fn e_step(model: &CwmModel, data: &Dataset) -> (Responsibilities, f64) {
    let mut tau = Vec::with_capacity(data.n());
    let mut loglik = 0.0;
    for (x, y) in data.x.iter().zip(&data.y) {
        let terms = model.component_log_terms(x, *y);
        loglik += log_sum_exp(&terms);
        tau.push(softmax_from_log(&terms));
    }
    (Responsibilities::from_rows(tau), loglik)
}

/// M-step under the given constraint. Regression coefficients are
/// warm-started from the previous model.
pub fn m_step(
    data: &Dataset,
    tau: &Responsibilities,
    family: &Family,
    constraint: Constraint,
    prev: &CwmModel,
) -> Result<CwmModel> {
    m_step_impl(data, tau.rows(), family, constraint, Some(prev))
}

fn m_step_impl(
    data: &Dataset,
    tau: &[Vec<f64>],
    family: &Family,
    constraint: Constraint,
    prev: Option<&CwmModel>,
) -> Result<CwmModel> {
    let n = data.n();
    let g = tau.first().map_or(0, |r| r.len());
    if tau.len() != n || g == 0 {
        return Err(CwmError::DimensionMismatch("responsibility matrix shape".into()));
    }

    let column = |j: usize| -> Vec<f64> { tau.iter().map(|r| r[j]).collect() };
    // Column means of tau sum to one only up to accumulated rounding, which
    // the model validation would reject on large samples; renormalize.
    let tau_weights = || -> Vec<f64> {
        let raw: Vec<f64> = (0..g).map(|j| column(j).iter().sum::<f64>() / n as f64).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    };

    let glms: Vec<GlmComponent> = (0..g)
        .map(|j| {
            let warm = prev.map(|m| &m.glms[j]);
            irls_weighted_fit(&data.x, &data.y, &column(j), family, warm)
                .map(|fit| fit.component)
        })
        .collect::<Result<_>>()?;

    let (weights, gaussians) = match constraint {
        Constraint::Unconstrained => {
            let gaussians = (0..g)
                .map(|j| weighted_mean_cov(&data.x, &column(j)))
                .collect::<Result<Vec<_>>>()?;
            (tau_weights(), gaussians)
        }
        Constraint::CommonGaussian => {
            let shared = weighted_mean_cov(&data.x, &vec![1.0; n])?;
            (tau_weights(), vec![shared; g])
        }
        Constraint::CommonSigmaEqualWeights => {
            let d = data.dim();
            let mut means = Vec::with_capacity(g);
            for j in 0..g {
                let col = column(j);
                let total: f64 = col.iter().sum();
                if total < (d + 1) as f64 {
                    return Err(CwmError::DegenerateComponent(format!(
                        "component {j} effective weight {total:.4} is below d+1"
                    )));
                }
                let mut mean = vec![0.0; d];
                for (row, t) in data.x.iter().zip(&col) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += t * v;
                    }
                }
                for m in &mut mean {
                    *m /= total;
                }
                means.push(mean);
            }
            // Pooled covariance of the per-component centered residuals.
            let mut pooled = vec![vec![0.0; d]; d];
            for (row, taus) in data.x.iter().zip(tau) {
                for (j, t) in taus.iter().enumerate() {
                    for a in 0..d {
                        let da = row[a] - means[j][a];
                        for b in 0..d {
                            let db = row[b] - means[j][b];
                            pooled[a][b] += t * da * db;
                        }
                    }
                }
            }
            for r in &mut pooled {
                for v in r.iter_mut() {
                    *v /= n as f64;
                }
            }
            let gaussians = means
                .into_iter()
                .map(|mean| GaussianComponent::new(mean, pooled.clone()))
                .collect::<Result<Vec<_>>>()?;
            (vec![1.0 / g as f64; g], gaussians)
        }
    };

    CwmModel::new(weights, gaussians, glms, *family, constraint)
}

struct CwmEstimator {
    g: usize,
    family: Family,
    constraint: Constraint,
}

impl EmEstimator for CwmEstimator {
    type Model = CwmModel;

    fn n_components(&self) -> usize {
        self.g
    }

    fn init_model(&self, data: &Dataset, labels: &[usize]) -> Result<CwmModel> {
        let tau = hard_tau(labels, self.g);
        m_step_impl(data, &tau, &self.family, self.constraint, None)
    }

    fn e_step(&self, data: &Dataset, model: &CwmModel) -> (Vec<Vec<f64>>, f64) {
        let (resp, loglik) = e_step(model, data);
        (resp.tau, loglik)
    }

    fn m_step(&self, data: &Dataset, tau: &[Vec<f64>], prev: &CwmModel) -> Result<CwmModel> {
        m_step_impl(data, tau, &self.family, self.constraint, Some(prev))
    }

    fn free_params(&self, dim: usize) -> usize {
        free_param_count(self.g, dim, &self.family, self.constraint)
    }
}

pub(crate) fn hard_tau(labels: &[usize], g: usize) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|&l| {
            let mut row = vec![0.0; g];
            row[l] = 1.0;
            row
        })
        .collect()
}

/// Fit a G-component cluster-weighted model by best-of-restarts EM.
pub fn fit(
    data: &Dataset,
    g: usize,
    family: &Family,
    constraint: Constraint,
    config: &FitConfig,
) -> Result<CwmFitResult> {
    data.validate_for(family)?;
    let estimator = CwmEstimator { g, family: *family, constraint };
    run_em(&estimator, data, config)
}

/// Number of free parameters of a G-component model on d covariates.
pub fn free_param_count(g: usize, d: usize, family: &Family, constraint: Constraint) -> usize {
    let weight_params = match constraint {
        Constraint::Unconstrained | Constraint::CommonGaussian => g - 1,
        Constraint::CommonSigmaEqualWeights => 0,
    };
    let cov_params = d * (d + 1) / 2;
    let gaussian_params = match constraint {
        Constraint::Unconstrained => g * d + g * cov_params,
        Constraint::CommonGaussian => d + cov_params,
        Constraint::CommonSigmaEqualWeights => g * d + cov_params,
    };
    let glm_params = g * (d + 1) + if family.free_dispersion() { g } else { 0 };
    weight_params + gaussian_params + glm_params
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(constraint: Constraint) -> CwmModel {
        let g1 = GaussianComponent::new(vec![0.0], vec![vec![2.25]]).unwrap();
        let g2 = match constraint {
            Constraint::Unconstrained => {
                GaussianComponent::new(vec![5.0], vec![vec![0.64]]).unwrap()
            }
            Constraint::CommonGaussian => g1.clone(),
            Constraint::CommonSigmaEqualWeights => {
                GaussianComponent::new(vec![5.0], vec![vec![2.25]]).unwrap()
            }
        };
        let weights = match constraint {
            Constraint::CommonSigmaEqualWeights => vec![0.5, 0.5],
            _ => vec![0.375, 0.625],
        };
        CwmModel::new(
            weights,
            vec![g1, g2],
            vec![
                GlmComponent::new(1.0, vec![0.2], 1.0).unwrap(),
                GlmComponent::new(0.0, vec![0.5], 1.0).unwrap(),
            ],
            Family::Poisson,
            constraint,
        )
        .unwrap()
    }

    #[test]
    fn joint_log_density_single_component_is_exact_sum() {
        let gauss = GaussianComponent::new(vec![1.0], vec![vec![2.0]]).unwrap();
        let glm = GlmComponent::new(0.3, vec![0.1], 1.0).unwrap();
        let model = CwmModel::new(
            vec![1.0],
            vec![gauss.clone()],
            vec![glm.clone()],
            Family::Poisson,
            Constraint::Unconstrained,
        )
        .unwrap();
        let x = [0.7];
        let y = 2.0;
        let expected = gauss.log_pdf(&x) + glm.log_density(&Family::Poisson, &x, y);
        assert_eq!(model.joint_log_density(&x, y), expected);
    }

    #[test]
    fn joint_log_density_matches_naive_sum() {
        let model = small_model(Constraint::Unconstrained);
        for (x, y) in [(5.0, 12.0), (0.0, 3.0), (2.5, 7.0)] {
            let naive: f64 = (0..2)
                .map(|g| {
                    model.weights()[g]
                        * model.gaussians()[g].log_pdf(&[x]).exp()
                        * model.glms()[g].log_density(&Family::Poisson, &[x], y).exp()
                })
                .sum();
            let v = model.joint_log_density(&[x], y);
            assert!((v - naive.ln()).abs() < 1e-12, "x={x} y={y}: {v} vs {}", naive.ln());
        }
    }

    #[test]
    fn joint_log_density_invariant_under_relabeling() {
        let model = small_model(Constraint::Unconstrained);
        let permuted = model.permuted(&[1, 0]).unwrap();
        for (x, y) in [(5.0, 12.0), (-1.0, 0.0), (3.3, 20.0)] {
            assert_eq!(model.joint_log_density(&[x], y), permuted.joint_log_density(&[x], y));
        }
    }

    #[test]
    fn e_step_single_component_and_identical_components() {
        let data = Dataset::new(vec![vec![0.5], vec![1.5], vec![-0.2]], vec![1.0, 3.0, 0.0])
            .unwrap();

        let gauss = GaussianComponent::new(vec![0.0], vec![vec![1.0]]).unwrap();
        let glm = GlmComponent::new(0.0, vec![0.3], 1.0).unwrap();
        let single = CwmModel::new(
            vec![1.0],
            vec![gauss.clone()],
            vec![glm.clone()],
            Family::Poisson,
            Constraint::Unconstrained,
        )
        .unwrap();
        let (resp, _) = e_step(&single, &data);
        assert!(resp.rows().iter().all(|r| r == &vec![1.0]));

        let twin = CwmModel::new(
            vec![0.5, 0.5],
            vec![gauss.clone(), gauss],
            vec![glm.clone(), glm],
            Family::Poisson,
            Constraint::CommonGaussian,
        )
        .unwrap();
        let (resp, _) = e_step(&twin, &data);
        for row in resp.rows() {
            assert!((row[0] - 0.5).abs() < 1e-15 && (row[1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn e_step_far_point_is_sharply_classified() {
        let model = small_model(Constraint::Unconstrained);
        // Deep inside the second component's covariate region.
        let (resp, _) = e_step(
            &model,
            &Dataset::new(vec![vec![5.2]], vec![10.0]).unwrap(),
        );
        assert!(resp.row(0)[1] > 0.99, "{:?}", resp.row(0));
    }

    #[test]
    fn e_step_rows_sum_to_one() {
        let model = small_model(Constraint::Unconstrained);
        let data = Dataset::new(
            (0..40).map(|i| vec![i as f64 * 0.2 - 2.0]).collect(),
            (0..40).map(|i| f64::from(i % 7)).collect(),
        )
        .unwrap();
        let (resp, _) = e_step(&model, &data);
        for row in resp.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn m_step_hard_labels_recovers_group_moments() {
        let x: Vec<Vec<f64>> = vec![
            vec![0.0], vec![1.0], vec![2.0],      // group 0
            vec![10.0], vec![11.0], vec![12.0], vec![13.0], // group 1
        ];
        let y = vec![1.0, 2.0, 1.0, 8.0, 9.0, 12.0, 11.0];
        let labels = vec![0, 0, 0, 1, 1, 1, 1];
        let data = Dataset::new(x.clone(), y.clone()).unwrap();

        let tau = hard_tau(&labels, 2);
        let model =
            m_step_impl(&data, &tau, &Family::Poisson, Constraint::Unconstrained, None).unwrap();

        // Gaussian part equals per-group sample moments.
        assert!((model.gaussians()[0].mean()[0] - 1.0).abs() < 1e-12);
        assert!((model.gaussians()[1].mean()[0] - 11.5).abs() < 1e-12);
        let var0 = (0.0f64 - 1.0).powi(2) + 0.0 + 1.0;
        assert!((model.gaussians()[0].covariance_rows()[0][0] - var0 / 3.0).abs() < 1e-12);

        // GLM part equals the per-group unweighted fit.
        for g in 0..2 {
            let idx: Vec<usize> = (0..7).filter(|i| labels[*i] == g).collect();
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let solo =
                irls_weighted_fit(&xs, &ys, &vec![1.0; xs.len()], &Family::Poisson, None).unwrap();
            assert!((solo.component.intercept - model.glms()[g].intercept).abs() < 1e-8);
            assert!((solo.component.slopes[0] - model.glms()[g].slopes[0]).abs() < 1e-8);
        }

        // Weights are the label frequencies.
        assert!((model.weights()[0] - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn m_step_uniform_tau_gives_identical_gaussians() {
        let data = Dataset::new(
            (0..12).map(|i| vec![i as f64]).collect(),
            (0..12).map(|i| f64::from(i % 4)).collect(),
        )
        .unwrap();
        let tau = vec![vec![0.5, 0.5]; 12];
        let model =
            m_step_impl(&data, &tau, &Family::Poisson, Constraint::Unconstrained, None).unwrap();
        assert_eq!(model.gaussians()[0].mean(), model.gaussians()[1].mean());
        assert_eq!(
            model.gaussians()[0].covariance_rows(),
            model.gaussians()[1].covariance_rows()
        );
    }

    #[test]
    fn free_param_count_examples() {
        assert_eq!(free_param_count(1, 1, &Family::Poisson, Constraint::Unconstrained), 4);
        assert_eq!(free_param_count(2, 1, &Family::Poisson, Constraint::Unconstrained), 9);
        assert_eq!(free_param_count(2, 1, &Family::Poisson, Constraint::CommonGaussian), 7);
        assert_eq!(
            free_param_count(2, 1, &Family::Poisson, Constraint::CommonSigmaEqualWeights),
            2 + 1 + 4
        );
        assert_eq!(free_param_count(2, 1, &Family::GaussianLinear, Constraint::Unconstrained), 11);
    }

    #[test]
    fn hard_labels_argmax_with_tie_rule() {
        let resp = Responsibilities::from_rows(vec![
            vec![0.9, 0.1],
            vec![0.5, 0.5],
            vec![0.2, 0.8],
        ]);
        assert_eq!(resp.hard_labels(), vec![0, 0, 1]);
    }

    #[test]
    fn model_validation_rejects_bad_weights() {
        let gauss = GaussianComponent::new(vec![0.0], vec![vec![1.0]]).unwrap();
        let glm = GlmComponent::new(0.0, vec![0.0], 1.0).unwrap();
        let err = CwmModel::new(
            vec![0.7, 0.7],
            vec![gauss.clone(), gauss],
            vec![glm.clone(), glm],
            Family::Poisson,
            Constraint::Unconstrained,
        )
        .unwrap_err();
        assert!(matches!(err, CwmError::InvalidInput(_)));
    }
}
