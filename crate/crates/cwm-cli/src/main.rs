//! Command-line front end: simulate datasets, fit cluster-weighted or
//! mixture-of-GLM models, evaluate saved models, and compare model classes.
//!
//! Exit codes: 0 ok, 2 usage/config error, 3 fit failure, 4 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use cwm_core::data::Dataset;
use cwm_core::em::{self, Constraint, FitConfig, InitStrategy};
use cwm_core::error::CwmError;
use cwm_core::exp_family::Family;
use cwm_core::metrics::{
    adjusted_rand_index, bic, cgof, generalized_deviance, misclassification_error, rand_index,
    EvalReport,
};
use cwm_core::mixtures::{self, fmr_param_count, fmrc_param_count};
use cwm_core::model_io::{AnyModel, ModelFile};
use cwm_core::sim::{self, FitRecipe, RecipeKind, SimSpec};

#[derive(Parser)]
#[command(name = "cwm", version, about = "Cluster-weighted models over exponential-family regressions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Cwm,
    Fmr,
    Fmrc,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Bernoulli,
    Binomial,
    Poisson,
    Gaussian,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConstraintArg {
    None,
    CommonGaussian,
    CommonSigmaEqualWeights,
}

impl From<ConstraintArg> for Constraint {
    fn from(value: ConstraintArg) -> Self {
        match value {
            ConstraintArg::None => Constraint::Unconstrained,
            ConstraintArg::CommonGaussian => Constraint::CommonGaussian,
            ConstraintArg::CommonSigmaEqualWeights => Constraint::CommonSigmaEqualWeights,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset CSV (plus a spec sidecar) from a simulation design
    Simulate {
        /// Simulation design JSON
        #[arg(long)]
        spec: PathBuf,
        /// Output CSV path; the sidecar lands next to it as `<stem>.spec.json`
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to a CSV dataset and save it as JSON
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// Number of mixture components
        #[arg(long = "G")]
        g: usize,
        /// Marginal constraint (cluster-weighted model only)
        #[arg(long, value_enum, default_value = "none")]
        constraint: ConstraintArg,
        /// Binomial trial count (required for --family binomial unless the
        /// CSV carries a trials column)
        #[arg(long)]
        trials: Option<u32>,
        /// Extra random-partition EM starts beyond the k-means one
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        /// Stopping threshold on the projected remaining log-likelihood gain
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Human-readable summary instead of a JSON line
        #[arg(long)]
        pretty: bool,
    },
    /// Evaluate a saved model against a dataset
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model_file: PathBuf,
        /// Name of the true-label column (must exist in the CSV)
        #[arg(long)]
        labels: Option<String>,
        #[arg(long)]
        pretty: bool,
    },
    /// Fit several model classes on the same data and tabulate agreement
    Compare {
        /// Dataset CSV, or a simulation design JSON when --reps > 1
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "G")]
        g: usize,
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// Comma-separated subset of cwm,fmr,fmrc
        #[arg(long, default_value = "cwm,fmr,fmrc")]
        models: String,
        #[arg(long, value_enum, default_value = "none")]
        constraint: ConstraintArg,
        #[arg(long)]
        trials: Option<u32>,
        /// Replications of a simulated design (1 = fit the given CSV once)
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        pretty: bool,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    configure_threads();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// CWM_THREADS caps the number of concurrently running restarts and
/// replications; the default is the available parallelism.
fn configure_threads() {
    if let Ok(v) = std::env::var("CWM_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring unparseable CWM_THREADS={v}"),
        }
    }
}

fn exit_code(err: &CwmError) -> u8 {
    match err {
        CwmError::SupportViolation { .. }
        | CwmError::DataError(_)
        | CwmError::DimensionMismatch(_) => 4,
        CwmError::AllRestartsFailed(_)
        | CwmError::DegenerateComponent(_)
        | CwmError::SingularDesign => 3,
        _ => 2,
    }
}

fn run(command: Command) -> Result<(), CwmError> {
    match command {
        Command::Simulate { spec, out } => cmd_simulate(&spec, &out),
        Command::Fit {
            data,
            model,
            family,
            g,
            constraint,
            trials,
            restarts,
            max_iter,
            epsilon,
            seed,
            out,
            pretty,
        } => {
            let dataset = Dataset::read_csv(&data)?;
            let family = resolve_family(family, trials, &dataset)?;
            if model != ModelKind::Cwm && constraint != ConstraintArg::None {
                return Err(CwmError::InvalidInput(
                    "--constraint applies to --model cwm only".into(),
                ));
            }
            let config = FitConfig {
                max_iter,
                epsilon,
                n_restarts: restarts,
                init: InitStrategy::KMeansOnX,
                seed,
            };
            let file = match model {
                ModelKind::Cwm => {
                    let fit = em::fit(&dataset, g, &family, constraint.into(), &config)?;
                    ModelFile::from_cwm(&fit, seed)
                }
                ModelKind::Fmr => {
                    let fit = mixtures::fit_fmr(&dataset, g, &family, &config)?;
                    ModelFile::from_fmr(&fit, seed)
                }
                ModelKind::Fmrc => {
                    let fit = mixtures::fit_fmrc(&dataset, g, &family, &config)?;
                    ModelFile::from_fmrc(&fit, seed)
                }
            };
            file.save(&out)?;
            if pretty {
                println!(
                    "fit: loglik {:.6}, BIC {:.6}, {} iterations, converged: {}",
                    file.fit.loglik, file.fit.bic, file.fit.n_iter, file.fit.converged
                );
            } else {
                println!(
                    "{}",
                    json!({
                        "loglik": file.fit.loglik,
                        "bic": file.fit.bic,
                        "n_iter": file.fit.n_iter,
                        "converged": file.fit.converged,
                    })
                );
            }
            Ok(())
        }
        Command::Eval { data, model_file, labels, pretty } => {
            cmd_eval(&data, &model_file, labels.as_deref(), pretty)
        }
        Command::Compare {
            data,
            g,
            family,
            models,
            constraint,
            trials,
            reps,
            restarts,
            max_iter,
            epsilon,
            seed,
            pretty,
        } => {
            let kinds = parse_models(&models)?;
            let config = FitConfig {
                max_iter,
                epsilon,
                n_restarts: restarts,
                init: InitStrategy::KMeansOnX,
                seed,
            };
            if reps > 1 {
                cmd_compare_reps(&data, g, family, trials, &kinds, constraint, reps, config, pretty)
            } else {
                cmd_compare_once(&data, g, family, trials, &kinds, constraint, config, pretty)
            }
        }
    }
}

fn cmd_simulate(spec_path: &Path, out: &Path) -> Result<(), CwmError> {
    let text = std::fs::read_to_string(spec_path)?;
    let spec: SimSpec = serde_json::from_str(&text)?;
    // Everything is generated before anything is written, so a failure
    // leaves no partial output.
    let dataset = sim::generate(&spec)?;
    let sidecar = out.with_extension("spec.json");
    dataset.write_csv(out)?;
    // The sidecar may coincide with the input spec path; never clobber it.
    let same = std::fs::canonicalize(&sidecar)
        .ok()
        .zip(std::fs::canonicalize(spec_path).ok())
        .is_some_and(|(a, b)| a == b);
    if !same {
        std::fs::write(&sidecar, serde_json::to_string_pretty(&spec)? + "\n")?;
    }
    eprintln!(
        "wrote {} rows to {} (spec sidecar: {})",
        dataset.n(),
        out.display(),
        sidecar.display()
    );
    Ok(())
}

/// Resolve the response family from the flag, the optional --trials value,
/// and the dataset's trials column.
fn resolve_family(arg: FamilyArg, trials: Option<u32>, data: &Dataset) -> Result<Family, CwmError> {
    let family = match arg {
        FamilyArg::Bernoulli => {
            if let Some(m) = trials {
                if m != 1 {
                    return Err(CwmError::InvalidInput(
                        "--family bernoulli implies --trials 1".into(),
                    ));
                }
            }
            Family::Bernoulli
        }
        FamilyArg::Binomial => {
            let m = match (trials, data.trials) {
                (Some(a), Some(b)) if a != b => {
                    return Err(CwmError::InvalidInput(format!(
                        "--trials {a} conflicts with the trials column ({b})"
                    )));
                }
                (Some(a), _) => a,
                (None, Some(b)) => b,
                (None, None) => {
                    return Err(CwmError::InvalidInput(
                        "--family binomial requires --trials or a trials column".into(),
                    ));
                }
            };
            Family::Binomial { trials: m }
        }
        FamilyArg::Poisson | FamilyArg::Gaussian => {
            if trials.is_some() {
                return Err(CwmError::InvalidInput(
                    "--trials applies to the binomial family only".into(),
                ));
            }
            match arg {
                FamilyArg::Poisson => Family::Poisson,
                _ => Family::GaussianLinear,
            }
        }
    };
    data.validate_for(&family)?;
    Ok(family)
}

fn cmd_eval(
    data_path: &Path,
    model_path: &Path,
    labels: Option<&str>,
    pretty: bool,
) -> Result<(), CwmError> {
    let dataset = Dataset::read_csv(data_path)?;
    let file = ModelFile::load(model_path)?;
    let model = file.to_model()?;
    if model.dim() != dataset.dim() {
        return Err(CwmError::DimensionMismatch(format!(
            "model covers {} covariates, dataset has {}",
            model.dim(),
            dataset.dim()
        )));
    }
    dataset.validate_for(model.family())?;
    let truth: Option<&[usize]> = match labels {
        Some(column) => {
            if column != "label" || dataset.labels.is_none() {
                return Err(CwmError::InvalidInput(format!(
                    "label column '{column}' not present in the dataset"
                )));
            }
            dataset.labels.as_deref()
        }
        None => dataset.labels.as_deref(),
    };

    let n = dataset.n();
    let (loglik, m, hard): (f64, usize, Vec<usize>) = match &model {
        AnyModel::Cwm(m0) => {
            let (resp, ll) = em::e_step(m0, &dataset);
            let m = em::free_param_count(m0.g(), m0.dim(), &m0.family, m0.constraint);
            (ll, m, resp.hard_labels())
        }
        AnyModel::Fmr(m0) => {
            let ll = m0.log_likelihood(&dataset);
            let hard = map_labels(&dataset, |x, y| m0.posterior(x, y));
            (ll, fmr_param_count(m0.g(), dataset.dim(), &m0.family), hard)
        }
        AnyModel::Fmrc(m0) => {
            let ll = m0.log_likelihood(&dataset);
            let hard = map_labels(&dataset, |x, y| m0.posterior(x, y));
            (ll, fmrc_param_count(m0.g(), dataset.dim(), &m0.family), hard)
        }
    };

    let gof = cgof(&dataset, &hard, model.glms(), model.family())?;
    let gsd = match model.family() {
        Family::GaussianLinear => None,
        family => Some(generalized_deviance(&dataset, &hard, model.glms(), family)?.scaled),
    };
    let report = EvalReport {
        loglik,
        bic: bic(loglik, m, n),
        cgof: gof.value,
        cgof_skipped: gof.skipped,
        gsd,
        rand: truth.map(|t| rand_index(t, &hard)).transpose()?,
        ari: truth.map(|t| adjusted_rand_index(t, &hard)).transpose()?,
        misclassification: truth.map(|t| misclassification_error(t, &hard)).transpose()?,
    };
    if pretty {
        println!("loglik            {:>14.6}", report.loglik);
        println!("BIC               {:>14.6}", report.bic);
        println!("CGOF              {:>14.6} ({} skipped)", report.cgof, report.cgof_skipped);
        if let Some(v) = report.gsd {
            println!("GSD               {v:>14.6}");
        }
        if let (Some(ri), Some(ari), Some(mis)) =
            (report.rand, report.ari, report.misclassification)
        {
            println!("Rand index        {ri:>14.6}");
            println!("adjusted Rand     {ari:>14.6}");
            println!("misclassification {mis:>14.6}");
        }
    } else {
        println!("{}", serde_json::to_string(&report)?);
    }
    Ok(())
}

fn map_labels(data: &Dataset, posterior: impl Fn(&[f64], f64) -> Vec<f64>) -> Vec<usize> {
    data.x
        .iter()
        .zip(&data.y)
        .map(|(x, y)| {
            let p = posterior(x, *y);
            let mut best = 0;
            for (j, v) in p.iter().enumerate().skip(1) {
                if *v > p[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn parse_models(models: &str) -> Result<Vec<ModelKind>, CwmError> {
    let mut kinds = Vec::new();
    for name in models.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind = match name {
            "cwm" => ModelKind::Cwm,
            "fmr" => ModelKind::Fmr,
            "fmrc" => ModelKind::Fmrc,
            other => {
                return Err(CwmError::InvalidInput(format!("unknown model '{other}'")));
            }
        };
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(CwmError::InvalidInput("--models must name at least one model".into()));
    }
    Ok(kinds)
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Cwm => "cwm",
        ModelKind::Fmr => "fmr",
        ModelKind::Fmrc => "fmrc",
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare_once(
    data_path: &Path,
    g: usize,
    family: FamilyArg,
    trials: Option<u32>,
    kinds: &[ModelKind],
    constraint: ConstraintArg,
    config: FitConfig,
    pretty: bool,
) -> Result<(), CwmError> {
    let dataset = Dataset::read_csv(data_path)?;
    let family = resolve_family(family, trials, &dataset)?;
    let truth = dataset.labels.clone();

    let mut rows = Vec::new();
    let mut successes = 0usize;
    for kind in kinds {
        let outcome: Result<(f64, bool, Vec<usize>, f64), CwmError> = match kind {
            ModelKind::Cwm => em::fit(&dataset, g, &family, constraint.into(), &config)
                .map(|r| (r.bic, r.converged, r.responsibilities.hard_labels(), r.loglik())),
            ModelKind::Fmr => mixtures::fit_fmr(&dataset, g, &family, &config)
                .map(|r| (r.bic, r.converged, r.responsibilities.hard_labels(), r.loglik())),
            ModelKind::Fmrc => mixtures::fit_fmrc(&dataset, g, &family, &config)
                .map(|r| (r.bic, r.converged, r.responsibilities.hard_labels(), r.loglik())),
        };
        match outcome {
            Ok((bic_value, converged, hard, loglik)) => {
                successes += 1;
                let (ari, mis) = match &truth {
                    Some(t) => (
                        Some(adjusted_rand_index(t, &hard)?),
                        Some(misclassification_error(t, &hard)?),
                    ),
                    None => (None, None),
                };
                rows.push(json!({
                    "model": model_name(*kind),
                    "loglik": loglik,
                    "bic": bic_value,
                    "converged": converged,
                    "ari": ari,
                    "misclassification": mis,
                }));
            }
            Err(err) => {
                rows.push(json!({ "model": model_name(*kind), "error": err.to_string() }));
            }
        }
    }
    print_compare_rows(&rows, pretty);
    if successes == 0 {
        return Err(CwmError::AllRestartsFailed(kinds.len()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare_reps(
    spec_path: &Path,
    g: usize,
    family: FamilyArg,
    trials: Option<u32>,
    kinds: &[ModelKind],
    constraint: ConstraintArg,
    reps: usize,
    config: FitConfig,
    pretty: bool,
) -> Result<(), CwmError> {
    let text = std::fs::read_to_string(spec_path)?;
    let spec: SimSpec = serde_json::from_str(&text)?;
    let flag_family = match family {
        FamilyArg::Bernoulli => Family::Bernoulli,
        FamilyArg::Binomial => Family::Binomial { trials: trials.unwrap_or(0) },
        FamilyArg::Poisson => Family::Poisson,
        FamilyArg::Gaussian => Family::GaussianLinear,
    };
    if flag_family.name() != spec.family.name() {
        return Err(CwmError::InvalidInput(format!(
            "--family {} conflicts with the design's {} family",
            flag_family.name(),
            spec.family.name()
        )));
    }
    if let (Some(m), Some(spec_m)) = (trials, spec.family.trials()) {
        if m != spec_m {
            return Err(CwmError::InvalidInput(format!(
                "--trials {m} conflicts with the design's trial count {spec_m}"
            )));
        }
    }
    let recipes: Vec<FitRecipe> = kinds
        .iter()
        .map(|kind| FitRecipe {
            name: model_name(*kind).to_string(),
            kind: match kind {
                ModelKind::Cwm => RecipeKind::Cwm(constraint.into()),
                ModelKind::Fmr => RecipeKind::Fmr,
                ModelKind::Fmrc => RecipeKind::Fmrc,
            },
            g,
            config,
        })
        .collect();
    let summary = sim::replication_study(&spec, reps, &recipes)?;
    if pretty {
        println!(
            "{} replications ({} dropped after fit failures)",
            summary.n_reps, summary.failures
        );
        println!(
            "{:<6} {:>12} {:>12} {:>12} {:>12} {:>14}",
            "model", "ARI mean", "ARI sd", "misclass", "misclass sd", "BIC mean"
        );
        for arm in &summary.arms {
            println!(
                "{:<6} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>14.4}",
                arm.name,
                arm.ari_mean,
                arm.ari_sd,
                arm.misclassification_mean,
                arm.misclassification_sd,
                arm.bic_mean
            );
        }
        if let (Some(m), Some(s)) = (summary.discrepancy_mean, summary.discrepancy_sd) {
            println!(
                "coefficient discrepancy between {} and {}: mean {m:.6}, sd {s:.6}",
                summary.arms[0].name, summary.arms[1].name
            );
        }
    } else {
        println!("{}", serde_json::to_string(&summary)?);
    }
    Ok(())
}

fn print_compare_rows(rows: &[serde_json::Value], pretty: bool) {
    if !pretty {
        for row in rows {
            println!("{row}");
        }
        return;
    }
    println!(
        "{:<6} {:>14} {:>14} {:>10} {:>12} {:>10}",
        "model", "loglik", "BIC", "ARI", "misclass", "converged"
    );
    for row in rows {
        if let Some(err) = row.get("error").and_then(|v| v.as_str()) {
            println!("{:<6} failed: {err}", row["model"].as_str().unwrap_or("?"));
            continue;
        }
        let fmt_opt = |v: &serde_json::Value| -> String {
            v.as_f64().map_or_else(|| "-".into(), |f| format!("{f:.5}"))
        };
        println!(
            "{:<6} {:>14.4} {:>14.4} {:>10} {:>12} {:>10}",
            row["model"].as_str().unwrap_or("?"),
            row["loglik"].as_f64().unwrap_or(f64::NAN),
            row["bic"].as_f64().unwrap_or(f64::NAN),
            fmt_opt(&row["ari"]),
            fmt_opt(&row["misclassification"]),
            row["converged"].as_bool().map_or("-".into(), |b| b.to_string()),
        );
    }
}
