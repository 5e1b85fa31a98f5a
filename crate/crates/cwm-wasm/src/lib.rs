//! Browser bindings for the cluster-weighted model crate.
//!
//! Every export takes and returns JSON strings, so the page's JavaScript
//! only moves plain data in and out of the wasm module and does its own
//! canvas drawing. The logic lives in plain-Rust functions with thin
//! `wasm_bindgen` wrappers, which keeps it testable without a browser.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use cwm_core::data::Dataset;
use cwm_core::em::{self, Constraint, FitConfig, InitStrategy};
use cwm_core::error::CwmError;
use cwm_core::exp_family::Family;
use cwm_core::metrics::{adjusted_rand_index, misclassification_error};
use cwm_core::mixtures;
use cwm_core::model_io::{AnyModel, ModelFile};
use cwm_core::sim::SimSpec;

#[derive(Serialize, Deserialize)]
struct DataJson {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trials: Option<u32>,
}

impl DataJson {
    fn into_dataset(self) -> Result<Dataset, CwmError> {
        let mut ds = Dataset::new(self.x, self.y)?;
        if let Some(labels) = self.labels {
            ds = ds.with_labels(labels)?;
        }
        ds.trials = self.trials;
        Ok(ds)
    }
}

#[derive(Deserialize)]
struct FitOptions {
    model: String,
    family: Family,
    g: usize,
    #[serde(default)]
    constraint: Option<Constraint>,
    #[serde(default = "default_restarts")]
    restarts: usize,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default)]
    seed: u64,
}

fn default_restarts() -> usize {
    6
}

fn default_max_iter() -> usize {
    200
}

fn default_epsilon() -> f64 {
    0.05
}

#[derive(Serialize)]
struct FitJson {
    model: ModelFile,
    labels: Vec<usize>,
    loglik: f64,
    bic: f64,
    n_iter: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    ari: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    misclassification: Option<f64>,
}

#[derive(Deserialize)]
struct GridJson {
    x_min: f64,
    x_max: f64,
    nx: usize,
    y_min: f64,
    y_max: f64,
    ny: usize,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Draw a labeled dataset from a simulation design JSON (the same schema the
/// command-line tool consumes).
#[wasm_bindgen]
pub fn simulate(spec_json: &str) -> Result<String, JsError> {
    simulate_impl(spec_json).map_err(|m| JsError::new(&m))
}

fn simulate_impl(spec_json: &str) -> Result<String, String> {
    let spec: SimSpec = serde_json::from_str(spec_json).map_err(err)?;
    let data = cwm_core::sim::generate(&spec).map_err(err)?;
    let out = DataJson { x: data.x, y: data.y, labels: data.labels, trials: data.trials };
    serde_json::to_string(&out).map_err(err)
}

/// Fit one of the three model classes to a dataset and return the fitted
/// parameters, cluster labels, and agreement scores against the dataset's
/// labels when present.
#[wasm_bindgen]
pub fn fit(data_json: &str, options_json: &str) -> Result<String, JsError> {
    fit_impl(data_json, options_json).map_err(|m| JsError::new(&m))
}

fn fit_impl(data_json: &str, options_json: &str) -> Result<String, String> {
    let data: DataJson = serde_json::from_str(data_json).map_err(err)?;
    let options: FitOptions = serde_json::from_str(options_json).map_err(err)?;
    let dataset = data.into_dataset().map_err(err)?;
    let config = FitConfig {
        max_iter: options.max_iter,
        epsilon: options.epsilon,
        n_restarts: options.restarts,
        init: InitStrategy::KMeansOnX,
        seed: options.seed,
    };

    let (file, labels) = match options.model.as_str() {
        "cwm" => {
            let constraint = options.constraint.unwrap_or(Constraint::Unconstrained);
            let fit = em::fit(&dataset, options.g, &options.family, constraint, &config)
                .map_err(err)?;
            let labels = fit.responsibilities.hard_labels();
            (ModelFile::from_cwm(&fit, options.seed), labels)
        }
        "fmr" => {
            let fit =
                mixtures::fit_fmr(&dataset, options.g, &options.family, &config).map_err(err)?;
            let labels = fit.responsibilities.hard_labels();
            (ModelFile::from_fmr(&fit, options.seed), labels)
        }
        "fmrc" => {
            let fit =
                mixtures::fit_fmrc(&dataset, options.g, &options.family, &config).map_err(err)?;
            let labels = fit.responsibilities.hard_labels();
            (ModelFile::from_fmrc(&fit, options.seed), labels)
        }
        other => return Err(format!("unknown model '{other}'")),
    };

    let (ari, misclassification) = match &dataset.labels {
        Some(truth) => (
            Some(adjusted_rand_index(truth, &labels).map_err(err)?),
            Some(misclassification_error(truth, &labels).map_err(err)?),
        ),
        None => (None, None),
    };
    let out = FitJson {
        loglik: file.fit.loglik,
        bic: file.fit.bic,
        n_iter: file.fit.n_iter,
        converged: file.fit.converged,
        model: file,
        labels,
        ari,
        misclassification,
    };
    serde_json::to_string(&out).map_err(err)
}

/// Evaluate the model's density on an (x, y) grid for heatmap rendering:
/// the joint density for the cluster-weighted model, the conditional
/// density for the mixture classes. Returns row-major values (y outermost)
/// plus the grid maximum.
#[wasm_bindgen]
pub fn density_grid(model_json: &str, grid_json: &str) -> Result<String, JsError> {
    density_grid_impl(model_json, grid_json).map_err(|m| JsError::new(&m))
}

fn density_grid_impl(model_json: &str, grid_json: &str) -> Result<String, String> {
    let file: ModelFile = serde_json::from_str(model_json).map_err(err)?;
    let grid: GridJson = serde_json::from_str(grid_json).map_err(err)?;
    if grid.nx < 2 || grid.ny < 2 {
        return Err("grid needs at least 2 points per axis".into());
    }
    let model = file.to_model().map_err(err)?;
    if model.dim() != 1 {
        return Err("density grids are for single-covariate models".into());
    }
    let discrete = !matches!(model.family(), Family::GaussianLinear);

    let mut values = Vec::with_capacity(grid.nx * grid.ny);
    let mut max = 0.0f64;
    for iy in 0..grid.ny {
        let y_raw = grid.y_min + (grid.y_max - grid.y_min) * iy as f64 / (grid.ny - 1) as f64;
        // Discrete families only have mass on integers.
        let y = if discrete { y_raw.round().max(0.0) } else { y_raw };
        for ix in 0..grid.nx {
            let x = grid.x_min + (grid.x_max - grid.x_min) * ix as f64 / (grid.nx - 1) as f64;
            let log_density = match &model {
                AnyModel::Cwm(m) => m.joint_log_density(&[x], y),
                AnyModel::Fmr(m) => m.log_density(&[x], y),
                AnyModel::Fmrc(m) => m.log_density(&[x], y),
            };
            let v = log_density.exp();
            max = max.max(v);
            values.push(v);
        }
    }
    serde_json::to_string(&serde_json::json!({ "values": values, "max": max })).map_err(err)
}

/// Per-component conditional mean of the response over an x grid, for curve
/// overlays.
#[wasm_bindgen]
pub fn mean_curves(model_json: &str, x_min: f64, x_max: f64, n: usize) -> Result<String, JsError> {
    mean_curves_impl(model_json, x_min, x_max, n).map_err(|m| JsError::new(&m))
}

fn mean_curves_impl(model_json: &str, x_min: f64, x_max: f64, n: usize) -> Result<String, String> {
    let file: ModelFile = serde_json::from_str(model_json).map_err(err)?;
    let model = file.to_model().map_err(err)?;
    if model.dim() != 1 || n < 2 {
        return Err("curves are for single-covariate models and n >= 2".into());
    }
    let xs: Vec<f64> =
        (0..n).map(|i| x_min + (x_max - x_min) * i as f64 / (n - 1) as f64).collect();
    let curves: Vec<Vec<f64>> = model
        .glms()
        .iter()
        .map(|glm| xs.iter().map(|x| glm.mean_variance(model.family(), &[*x]).0).collect())
        .collect();
    serde_json::to_string(&serde_json::json!({ "x": xs, "curves": curves })).map_err(err)
}
