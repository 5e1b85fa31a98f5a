//! Cluster-weighted models with exponential-family regression conditionals.
//!
//! The joint density of a covariate vector and a response is modeled as a
//! G-component mixture in which every component is the product of a
//! multivariate Gaussian covariate marginal and a canonical-link GLM
//! response conditional. Fitting is by EM: closed-form updates for the
//! marginals and mixing weights, responsibility-weighted IRLS for the
//! regression coefficients, and an Aitken-accelerated stopping rule.
//!
//! The crate also ships the two standard competitors, finite mixtures of
//! GLMs with fixed weights ([`mixtures::FmrModel`]) or multinomial-logit
//! concomitant weights ([`mixtures::FmrcModel`]), which arise from the
//! cluster-weighted model under the [`em::Constraint`] modes, together with
//! clustering and goodness-of-fit metrics, seeded simulation designs, and
//! JSON/CSV persistence.
//!
//! ```
//! use cwm_core::em::{self, Constraint, FitConfig};
//! use cwm_core::exp_family::Family;
//! use cwm_core::metrics::adjusted_rand_index;
//! use cwm_core::sim::{self, CovariateLaw, GroupSpec, SimSpec};
//!
//! // Two Poisson regression regimes living in different covariate regions.
//! let design = SimSpec {
//!     schema: 1,
//!     family: Family::Poisson,
//!     seed: 7,
//!     groups: vec![
//!         GroupSpec {
//!             n: 120,
//!             covariates: CovariateLaw::Gaussian { mean: vec![0.0], cov: vec![vec![2.25]] },
//!             beta: vec![1.0, 0.2],
//!             dispersion: 1.0,
//!         },
//!         GroupSpec {
//!             n: 180,
//!             covariates: CovariateLaw::Gaussian { mean: vec![5.0], cov: vec![vec![0.64]] },
//!             beta: vec![0.0, 0.5],
//!             dispersion: 1.0,
//!         },
//!     ],
//! };
//! let data = sim::generate(&design)?;
//!
//! let config = FitConfig { n_restarts: 4, seed: 1, ..FitConfig::default() };
//! let fit = em::fit(&data, 2, &Family::Poisson, Constraint::Unconstrained, &config)?;
//! assert!(fit.converged);
//!
//! let truth = data.labels.as_ref().unwrap();
//! let ari = adjusted_rand_index(truth, &fit.responsibilities.hard_labels())?;
//! assert!(ari > 0.9);
//! # Ok::<(), cwm_core::CwmError>(())
//! ```

pub mod data;
mod driver;
pub mod em;
pub mod error;
pub mod exp_family;
pub mod gaussian;
pub mod metrics;
pub mod mixtures;
pub mod model_io;
pub mod numeric;
pub mod sim;

pub use data::Dataset;
pub use em::{Constraint, CwmFitResult, CwmModel, FitConfig, FitResult, InitStrategy, Responsibilities};
pub use error::{CwmError, Result};
pub use exp_family::{Family, GlmComponent};
pub use gaussian::GaussianComponent;
pub use mixtures::{ConcomitantParams, FmrFitResult, FmrModel, FmrcFitResult, FmrcModel};
