//! Seeded generators for cluster-weighted populations and replication
//! studies over competing fit recipes.
//!
//! Randomness comes from ChaCha12 with one stream per (replication, group)
//! pair, so any group of any replication can be regenerated independently
//! and results are reproducible across platforms for a fixed crate version.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::em::{self, Constraint, FitConfig};
use crate::error::{CwmError, Result};
use crate::exp_family::{Family, GlmComponent, ETA_CLAMP};
use crate::metrics;
use crate::mixtures;

/// Covariate distribution of one group.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

impl CovariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::Gaussian { mean, .. } => mean.len(),
            CovariateLaw::Uniform { lower, .. } => lower.len(),
        }
    }
}

/// Ground truth for one simulated group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSpec {
    pub n: usize,
    pub covariates: CovariateLaw,
    /// Regression truth as `[intercept, slopes...]`.
    pub beta: Vec<f64>,
    #[serde(default = "default_dispersion")]
    pub dispersion: f64,
}

fn default_dispersion() -> f64 {
    1.0
}

/// A full simulation design: the response family, a seed, and per-group
/// sizes, covariate laws, and regression truths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub family: Family,
    pub seed: u64,
    pub groups: Vec<GroupSpec>,
}

fn default_schema() -> u32 {
    1
}

impl SimSpec {
    pub fn dim(&self) -> usize {
        self.groups.first().map_or(0, |g| g.covariates.dim())
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.schema != 1 {
            return Err(CwmError::InvalidInput(format!("unsupported schema {}", self.schema)));
        }
        if self.groups.is_empty() {
            return Err(CwmError::InvalidInput("simulation needs at least one group".into()));
        }
        let d = self.dim();
        if d == 0 {
            return Err(CwmError::InvalidInput("covariate dimension must be positive".into()));
        }
        for (i, group) in self.groups.iter().enumerate() {
            if group.n < 1 {
                return Err(CwmError::InvalidInput(format!("group {i} has no observations")));
            }
            if group.covariates.dim() != d {
                return Err(CwmError::InvalidInput(format!(
                    "group {i} covariate dimension differs from group 0"
                )));
            }
            if group.beta.len() != d + 1 {
                return Err(CwmError::InvalidInput(format!(
                    "group {i} beta must have d+1 = {} entries",
                    d + 1
                )));
            }
            if !(group.dispersion > 0.0) {
                return Err(CwmError::InvalidInput(format!("group {i} dispersion must be positive")));
            }
            match &group.covariates {
                CovariateLaw::Uniform { lower, upper } => {
                    if upper.len() != d || lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
                        return Err(CwmError::InvalidInput(format!(
                            "group {i} uniform bounds must satisfy lower < upper"
                        )));
                    }
                }
                CovariateLaw::Gaussian { cov, .. } => {
                    if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                        return Err(CwmError::InvalidInput(format!(
                            "group {i} covariance must be {d}x{d}"
                        )));
                    }
                    let m = DMatrix::from_fn(d, d, |a, b| 0.5 * (cov[a][b] + cov[b][a]));
                    if Cholesky::new(m).is_none() {
                        return Err(CwmError::InvalidInput(format!(
                            "group {i} covariance is not positive-definite"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The GLM truth of each group as components.
    pub fn true_glms(&self) -> Vec<GlmComponent> {
        self.groups
            .iter()
            .map(|g| GlmComponent {
                intercept: g.beta[0],
                slopes: g.beta[1..].to_vec(),
                dispersion: g.dispersion,
            })
            .collect()
    }
}

/// Draw a dataset from the design; deterministic given the seed. Rows are
/// ordered by group, with exactly the requested group sizes, and the true
/// labels attached.
pub fn generate(spec: &SimSpec) -> Result<Dataset> {
    generate_replicate(spec, 0)
}

/// Draw the `rep`-th independent replication of the same design.
pub fn generate_replicate(spec: &SimSpec, rep: u64) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dim();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut labels = Vec::new();

    for (g, group) in spec.groups.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        rng.set_stream((rep << 16) | g as u64);

        let chol = match &group.covariates {
            CovariateLaw::Gaussian { cov, .. } => {
                let m = DMatrix::from_fn(d, d, |a, b| 0.5 * (cov[a][b] + cov[b][a]));
                Some(Cholesky::new(m).expect("validated above"))
            }
            CovariateLaw::Uniform { .. } => None,
        };

        for _ in 0..group.n {
            let xs: Vec<f64> = match &group.covariates {
                CovariateLaw::Gaussian { mean, .. } => {
                    let z = DVector::from_fn(d, |_, _| {
                        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                    });
                    let v = chol.as_ref().unwrap().l() * z;
                    mean.iter().zip(v.iter()).map(|(m, e)| m + e).collect()
                }
                CovariateLaw::Uniform { lower, upper } => lower
                    .iter()
                    .zip(upper)
                    .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                    .collect(),
            };
            let eta = group.beta[0]
                + group.beta[1..].iter().zip(&xs).map(|(b, v)| b * v).sum::<f64>();
            let response = draw_response(&spec.family, eta, group.dispersion, &mut rng);
            x.push(xs);
            y.push(response);
            labels.push(g);
        }
    }

    let mut ds = Dataset::new(x, y)?.with_labels(labels)?;
    ds.trials = spec.family.trials();
    Ok(ds)
}

fn draw_response(family: &Family, eta: f64, dispersion: f64, rng: &mut ChaCha12Rng) -> f64 {
    match family {
        Family::Bernoulli | Family::Binomial { .. } => {
            let m = family.trials().unwrap();
            f64::from(binomial_inversion(m, eta, family, rng))
        }
        Family::Poisson => {
            let rate = eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp();
            Poisson::new(rate).expect("positive rate").sample(rng)
        }
        Family::GaussianLinear => {
            let z: f64 = StandardNormal.sample(rng);
            eta + dispersion.sqrt() * z
        }
    }
}

/// Binomial draw by CDF inversion. Each pmf value is evaluated in log space,
/// so saturated success probabilities stay exact.
fn binomial_inversion(m: u32, eta: f64, family: &Family, rng: &mut ChaCha12Rng) -> u32 {
    let u: f64 = rng.random();
    let mut cdf = 0.0;
    for k in 0..=m {
        cdf += family.log_density(f64::from(k), eta, 1.0).exp();
        if u <= cdf {
            return k;
        }
    }
    m
}

/// One arm of a replication study.
#[derive(Debug, Clone)]
pub struct FitRecipe {
    pub name: String,
    pub kind: RecipeKind,
    pub g: usize,
    pub config: FitConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecipeKind {
    Cwm(Constraint),
    Fmr,
    Fmrc,
}

/// Per-arm aggregates over the successful replications.
#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub name: String,
    pub ari_mean: f64,
    pub ari_sd: f64,
    pub misclassification_mean: f64,
    pub misclassification_sd: f64,
    pub bic_mean: f64,
}

/// Outcome of a replication study.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationSummary {
    pub n_reps: usize,
    /// Replications dropped because some arm failed to fit.
    pub failures: usize,
    pub arms: Vec<ArmSummary>,
    /// Mean/sd of the coefficient discrepancy between the first two arms;
    /// absent when fewer than two arms are requested.
    pub discrepancy_mean: Option<f64>,
    pub discrepancy_sd: Option<f64>,
}

struct RepOutcome {
    ari: Vec<f64>,
    misclass: Vec<f64>,
    bic: Vec<f64>,
    discrepancy: Option<f64>,
}

/// Generate `n_reps` independent datasets from the design and fit every
/// recipe on each, aggregating clustering agreement and the pairwise
/// coefficient discrepancy between the first two arms. Each arm uses its
/// own derived seed per replication.
pub fn replication_study(
    spec: &SimSpec,
    n_reps: usize,
    recipes: &[FitRecipe],
) -> Result<ReplicationSummary> {
    if n_reps < 1 {
        return Err(CwmError::InvalidInput("need at least one replication".into()));
    }
    if recipes.is_empty() {
        return Err(CwmError::InvalidInput("need at least one fit recipe".into()));
    }
    spec.validate()?;

    let reps: Vec<u64> = (0..n_reps as u64).collect();
    let run_rep = |rep: &u64| -> Result<Option<RepOutcome>> {
        let data = generate_replicate(spec, *rep)?;
        let truth = data.labels.clone().expect("generated data is labeled");
        let mut ari = Vec::with_capacity(recipes.len());
        let mut misclass = Vec::with_capacity(recipes.len());
        let mut bic = Vec::with_capacity(recipes.len());
        let mut betas: Vec<Vec<GlmComponent>> = Vec::with_capacity(recipes.len());
        for recipe in recipes {
            let mut config = recipe.config;
            // Identical recipes stay bit-identical across arms; distinct
            // seeds between arms are the recipe author's choice.
            config.seed = config.seed.wrapping_add(rep.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let fitted = match recipe.kind {
                RecipeKind::Cwm(constraint) => {
                    em::fit(&data, recipe.g, &spec.family, constraint, &config).map(|r| {
                        let labels = r.responsibilities.hard_labels();
                        (labels, r.bic, r.model.glms().to_vec())
                    })
                }
                RecipeKind::Fmr => {
                    mixtures::fit_fmr(&data, recipe.g, &spec.family, &config).map(|r| {
                        let labels = r.responsibilities.hard_labels();
                        (labels, r.bic, r.model.glms().to_vec())
                    })
                }
                RecipeKind::Fmrc => {
                    mixtures::fit_fmrc(&data, recipe.g, &spec.family, &config).map(|r| {
                        let labels = r.responsibilities.hard_labels();
                        (labels, r.bic, r.model.glms().to_vec())
                    })
                }
            };
            match fitted {
                Ok((labels, fit_bic, glms)) => {
                    ari.push(metrics::adjusted_rand_index(&truth, &labels)?);
                    misclass.push(metrics::misclassification_error(&truth, &labels)?);
                    bic.push(fit_bic);
                    betas.push(glms);
                }
                Err(CwmError::AllRestartsFailed(_)) | Err(CwmError::DegenerateComponent(_)) => {
                    return Ok(None);
                }
                Err(other) => return Err(other),
            }
        }
        let discrepancy = if recipes.len() >= 2 {
            Some(metrics::coefficient_discrepancy(&betas[0], &betas[1])?)
        } else {
            None
        };
        Ok(Some(RepOutcome { ari, misclass, bic, discrepancy }))
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<Option<RepOutcome>>> = {
        use rayon::prelude::*;
        reps.par_iter().map(run_rep).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<Option<RepOutcome>>> = reps.iter().map(run_rep).collect();

    let mut kept: Vec<RepOutcome> = Vec::new();
    let mut failures = 0usize;
    for outcome in outcomes {
        match outcome? {
            Some(rep) => kept.push(rep),
            None => failures += 1,
        }
    }
    if kept.is_empty() {
        return Err(CwmError::AllRestartsFailed(n_reps));
    }

    let mean_sd = |values: &[f64]| -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };

    let arms = recipes
        .iter()
        .enumerate()
        .map(|(a, recipe)| {
            let ari: Vec<f64> = kept.iter().map(|r| r.ari[a]).collect();
            let mis: Vec<f64> = kept.iter().map(|r| r.misclass[a]).collect();
            let bic: Vec<f64> = kept.iter().map(|r| r.bic[a]).collect();
            let (ari_mean, ari_sd) = mean_sd(&ari);
            let (mis_mean, mis_sd) = mean_sd(&mis);
            ArmSummary {
                name: recipe.name.clone(),
                ari_mean,
                ari_sd,
                misclassification_mean: mis_mean,
                misclassification_sd: mis_sd,
                bic_mean: mean_sd(&bic).0,
            }
        })
        .collect();

    let (discrepancy_mean, discrepancy_sd) = if recipes.len() >= 2 {
        let values: Vec<f64> = kept.iter().map(|r| r.discrepancy.unwrap()).collect();
        let (m, s) = mean_sd(&values);
        (Some(m), Some(s))
    } else {
        (None, None)
    };

    Ok(ReplicationSummary { n_reps, failures, arms, discrepancy_mean, discrepancy_sd })
}
