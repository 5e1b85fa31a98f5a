//! JSON persistence for fitted models. The file schema is versioned and
//! numbers round-trip losslessly (shortest-representation decimal
//! serialization of IEEE doubles).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::{Constraint, CwmFitResult, CwmModel};
use crate::error::{CwmError, Result};
use crate::exp_family::{Family, GlmComponent};
use crate::gaussian::GaussianComponent;
use crate::mixtures::{ConcomitantParams, FmrFitResult, FmrModel, FmrcFitResult, FmrcModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: u32,
    pub family: Family,
    #[serde(flatten)]
    pub payload: ModelPayload,
    pub fit: FitMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelPayload {
    Cwm {
        constraint: Constraint,
        g: usize,
        weights: Vec<f64>,
        components: Vec<CwmComponentIo>,
    },
    Fmr {
        g: usize,
        weights: Vec<f64>,
        components: Vec<GlmIo>,
    },
    Fmrc {
        g: usize,
        concomitant: ConcomitantIo,
        components: Vec<GlmIo>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CwmComponentIo {
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub covariance: Vec<Vec<f64>>,
    /// `[intercept, slopes...]`.
    pub beta: Vec<f64>,
    pub dispersion: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmIo {
    pub beta: Vec<f64>,
    pub dispersion: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcomitantIo {
    pub alpha0: Vec<f64>,
    pub alpha1: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMeta {
    pub loglik: f64,
    pub bic: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub seed: u64,
}

/// A loaded model of any of the three classes.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Cwm(CwmModel),
    Fmr(FmrModel),
    Fmrc(FmrcModel),
}

impl AnyModel {
    pub fn family(&self) -> &Family {
        match self {
            AnyModel::Cwm(m) => &m.family,
            AnyModel::Fmr(m) => &m.family,
            AnyModel::Fmrc(m) => &m.family,
        }
    }

    pub fn glms(&self) -> &[GlmComponent] {
        match self {
            AnyModel::Cwm(m) => m.glms(),
            AnyModel::Fmr(m) => m.glms(),
            AnyModel::Fmrc(m) => m.glms(),
        }
    }

    pub fn dim(&self) -> usize {
        self.glms()[0].dim()
    }
}

fn glm_io(c: &GlmComponent) -> GlmIo {
    GlmIo { beta: c.coefficients(), dispersion: c.dispersion }
}

fn glm_from_io(io: &GlmIo) -> Result<GlmComponent> {
    if io.beta.is_empty() {
        return Err(CwmError::InvalidInput("beta must contain the intercept".into()));
    }
    GlmComponent::new(io.beta[0], io.beta[1..].to_vec(), io.dispersion)
}

impl ModelFile {
    pub fn from_cwm(result: &CwmFitResult, seed: u64) -> Self {
        let model = &result.model;
        let components = model
            .gaussians()
            .iter()
            .zip(model.glms())
            .map(|(gauss, glm)| CwmComponentIo {
                mean: gauss.mean().to_vec(),
                covariance: gauss.covariance_rows(),
                beta: glm.coefficients(),
                dispersion: glm.dispersion,
            })
            .collect();
        Self {
            schema: SCHEMA_VERSION,
            family: model.family,
            payload: ModelPayload::Cwm {
                constraint: model.constraint,
                g: model.g(),
                weights: model.weights().to_vec(),
                components,
            },
            fit: FitMeta {
                loglik: result.loglik(),
                bic: result.bic,
                n_iter: result.n_iter,
                converged: result.converged,
                seed,
            },
        }
    }

    pub fn from_fmr(result: &FmrFitResult, seed: u64) -> Self {
        let model = &result.model;
        Self {
            schema: SCHEMA_VERSION,
            family: model.family,
            payload: ModelPayload::Fmr {
                g: model.g(),
                weights: model.weights().to_vec(),
                components: model.glms().iter().map(glm_io).collect(),
            },
            fit: FitMeta {
                loglik: result.loglik(),
                bic: result.bic,
                n_iter: result.n_iter,
                converged: result.converged,
                seed,
            },
        }
    }

    pub fn from_fmrc(result: &FmrcFitResult, seed: u64) -> Self {
        let model = &result.model;
        Self {
            schema: SCHEMA_VERSION,
            family: model.family,
            payload: ModelPayload::Fmrc {
                g: model.g(),
                concomitant: ConcomitantIo {
                    alpha0: model.concomitant().alpha0().to_vec(),
                    alpha1: model.concomitant().alpha1().to_vec(),
                },
                components: model.glms().iter().map(glm_io).collect(),
            },
            fit: FitMeta {
                loglik: result.loglik(),
                bic: result.bic,
                n_iter: result.n_iter,
                converged: result.converged,
                seed,
            },
        }
    }

    /// Reconstruct the typed model, re-validating every invariant.
    pub fn to_model(&self) -> Result<AnyModel> {
        if self.schema != SCHEMA_VERSION {
            return Err(CwmError::InvalidInput(format!(
                "unsupported model schema {}",
                self.schema
            )));
        }
        match &self.payload {
            ModelPayload::Cwm { constraint, g, weights, components } => {
                if components.len() != *g || weights.len() != *g {
                    return Err(CwmError::InvalidInput("g disagrees with component count".into()));
                }
                let gaussians = components
                    .iter()
                    .map(|c| GaussianComponent::new(c.mean.clone(), c.covariance.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let glms = components
                    .iter()
                    .map(|c| {
                        glm_from_io(&GlmIo { beta: c.beta.clone(), dispersion: c.dispersion })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(AnyModel::Cwm(CwmModel::new(
                    weights.clone(),
                    gaussians,
                    glms,
                    self.family,
                    *constraint,
                )?))
            }
            ModelPayload::Fmr { g, weights, components } => {
                if components.len() != *g || weights.len() != *g {
                    return Err(CwmError::InvalidInput("g disagrees with component count".into()));
                }
                let glms = components.iter().map(glm_from_io).collect::<Result<Vec<_>>>()?;
                Ok(AnyModel::Fmr(FmrModel::new(weights.clone(), glms, self.family)?))
            }
            ModelPayload::Fmrc { g, concomitant, components } => {
                if components.len() != *g || concomitant.alpha0.len() != *g {
                    return Err(CwmError::InvalidInput("g disagrees with component count".into()));
                }
                let glms = components.iter().map(glm_from_io).collect::<Result<Vec<_>>>()?;
                let params =
                    ConcomitantParams::new(concomitant.alpha0.clone(), concomitant.alpha1.clone())?;
                Ok(AnyModel::Fmrc(FmrcModel::new(params, glms, self.family)?))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
