//! Shared EM machinery: restart scheduling, initial classifications, and the
//! Aitken-accelerated stopping rule. The model classes plug in their own
//! E/M steps through [`EmEstimator`].

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::data::Dataset;
use crate::em::{FitConfig, FitResult, InitStrategy, Responsibilities};
use crate::error::{CwmError, Result};
use crate::metrics;

/// Increment guard below which consecutive log-likelihoods are treated as
/// equal and the Aitken ratio as undefined.
const AITKEN_GUARD: f64 = 1e-12;

/// Attempts at re-seeding a start whose components collapsed.
const MAX_RESEEDS: usize = 3;

pub(crate) trait EmEstimator: Sync {
    type Model: Clone + Send;

    fn n_components(&self) -> usize;

    /// First M-step, driven by a hard initial classification.
    fn init_model(&self, data: &Dataset, labels: &[usize]) -> Result<Self::Model>;

    /// Responsibilities and the observed-data log-likelihood.
    fn e_step(&self, data: &Dataset, model: &Self::Model) -> (Vec<Vec<f64>>, f64);

    fn m_step(&self, data: &Dataset, tau: &[Vec<f64>], prev: &Self::Model) -> Result<Self::Model>;

    fn free_params(&self, dim: usize) -> usize;
}

struct RunOutcome<M> {
    model: M,
    tau: Vec<Vec<f64>>,
    trace: Vec<f64>,
    converged: bool,
}

pub(crate) fn run_em<E: EmEstimator>(
    estimator: &E,
    data: &Dataset,
    config: &FitConfig,
) -> Result<FitResult<E::Model>> {
    config.validate()?;
    let g = estimator.n_components();
    let n = data.n();
    if g < 1 {
        return Err(CwmError::InvalidInput("need at least one component".into()));
    }
    if n <= g * (data.dim() + 1) {
        return Err(CwmError::InvalidInput(format!(
            "need more than G(d+1) = {} observations, got {n}",
            g * (data.dim() + 1)
        )));
    }
    if matches!(config.init, InitStrategy::GivenLabels) {
        let labels = data
            .labels
            .as_ref()
            .ok_or_else(|| CwmError::InvalidInput("GivenLabels requires dataset labels".into()))?;
        if labels.iter().any(|&l| l >= g) {
            return Err(CwmError::InvalidInput(format!("given labels must be below G = {g}")));
        }
    }

    let n_starts = 1 + config.n_restarts;
    let starts: Vec<usize> = (0..n_starts).collect();
    let run_start = |s: &usize| -> Result<Option<RunOutcome<E::Model>>> {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        rng.set_stream(*s as u64);
        let strategy = if *s == 0 { config.init } else { InitStrategy::RandomPartition };
        let mut labels = initial_labels(data, g, strategy, &mut rng)?;
        for _ in 0..=MAX_RESEEDS {
            match single_run(estimator, data, &labels, config) {
                Ok(outcome) => return Ok(Some(outcome)),
                Err(CwmError::DegenerateComponent(_)) | Err(CwmError::SingularDesign) => {
                    labels = initial_labels(data, g, InitStrategy::RandomPartition, &mut rng)?;
                }
                Err(other) => return Err(other),
            }
        }
        Ok(None)
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<Option<RunOutcome<E::Model>>>> = {
        use rayon::prelude::*;
        starts.par_iter().map(run_start).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<Option<RunOutcome<E::Model>>>> =
        starts.iter().map(run_start).collect();

    let mut best: Option<RunOutcome<E::Model>> = None;
    for outcome in outcomes {
        let Some(run) = outcome? else { continue };
        let better = match &best {
            None => true,
            Some(b) => {
                let (bl, rl) = (*b.trace.last().unwrap(), *run.trace.last().unwrap());
                rl > bl || (rl == bl && run.trace.len() < b.trace.len())
            }
        };
        if better {
            best = Some(run);
        }
    }
    let best = best.ok_or(CwmError::AllRestartsFailed(n_starts))?;

    let m = estimator.free_params(data.dim());
    let bic = metrics::bic(*best.trace.last().unwrap(), m, n);
    Ok(FitResult {
        model: best.model,
        n_iter: best.trace.len(),
        converged: best.converged,
        bic,
        responsibilities: Responsibilities::from_rows(best.tau),
        loglik_trace: best.trace,
    })
}

fn single_run<E: EmEstimator>(
    estimator: &E,
    data: &Dataset,
    labels: &[usize],
    config: &FitConfig,
) -> Result<RunOutcome<E::Model>> {
    let mut model = estimator.init_model(data, labels)?;
    let mut trace: Vec<f64> = Vec::new();
    loop {
        let (tau, loglik) = estimator.e_step(data, &model);
        if let Some(prev) = trace.last() {
            debug_assert!(loglik >= *prev - 1e-8, "log-likelihood decreased: {prev} -> {loglik}");
        }
        trace.push(loglik);
        let converged = aitken_converged(&trace, config.epsilon);
        if converged || trace.len() >= config.max_iter {
            return Ok(RunOutcome { model, tau, trace, converged });
        }
        model = estimator.m_step(data, &tau, &model)?;
    }
}

/// Stopping rule: extrapolate the log-likelihood sequence to its asymptote
/// with the Aitken ratio `a = (l2-l1)/(l1-l0)` and stop once the projected
/// remaining gain falls below `epsilon`. Degenerate ratios fall back to the
/// plain-increment criterion.
fn aitken_converged(trace: &[f64], epsilon: f64) -> bool {
    let k = trace.len();
    if k < 3 {
        return false;
    }
    let (l0, l1, l2) = (trace[k - 3], trace[k - 2], trace[k - 1]);
    if (l2 - l1).abs() < AITKEN_GUARD || (l1 - l0).abs() < AITKEN_GUARD {
        return true;
    }
    let a = (l2 - l1) / (l1 - l0);
    if a >= 1.0 {
        return l2 - l1 < epsilon;
    }
    let asymptote = l1 + (l2 - l1) / (1.0 - a);
    asymptote - l1 < epsilon
}

fn initial_labels(
    data: &Dataset,
    g: usize,
    strategy: InitStrategy,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<usize>> {
    match strategy {
        InitStrategy::GivenLabels => Ok(data.labels.clone().expect("checked by run_em")),
        InitStrategy::RandomPartition => Ok(random_partition(data.n(), g, rng)),
        InitStrategy::KMeansOnX => Ok(kmeans_labels(&data.x, g, rng)),
    }
}

/// Uniform multinomial labels, re-drawn (bounded) until every group is nonempty.
fn random_partition(n: usize, g: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    for _ in 0..50 {
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..g)).collect();
        let mut seen = vec![false; g];
        for &l in &labels {
            seen[l] = true;
        }
        if seen.iter().all(|&s| s) {
            return labels;
        }
    }
    // Guaranteed cover: round-robin the first G entries.
    (0..n).map(|i| i % g).collect()
}

/// Hard k-means on the covariates: centers drawn from the data, ten Lloyd
/// iterations, empty clusters re-seeded at the farthest point.
fn kmeans_labels(x: &[Vec<f64>], g: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let n = x.len();
    let mut centers: Vec<Vec<f64>> = {
        let idx: Vec<usize> = (0..n).collect();
        idx.choose_multiple(rng, g).map(|&i| x[i].clone()).collect()
    };
    let mut labels = vec![0usize; n];
    for _ in 0..10 {
        for (i, row) in x.iter().enumerate() {
            labels[i] = nearest(row, &centers);
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = x
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == c)
                .map(|(row, _)| row)
                .collect();
            if members.is_empty() {
                let far = x
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        let da = sq_dist(a, center.as_slice());
                        let db = sq_dist(b, center.as_slice());
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                *center = x[far].clone();
                continue;
            }
            for j in 0..center.len() {
                center[j] = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    for (i, row) in x.iter().enumerate() {
        labels[i] = nearest(row, &centers);
    }
    labels
}

fn nearest(row: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(row, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
