//! Model selection and clustering/goodness-of-fit measures: BIC, the Rand
//! and adjusted Rand indices, permutation-matched misclassification error,
//! the conditional goodness-of-fit statistic, generalized (scaled)
//! deviances, and the coefficient-discrepancy index.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CwmError, Result};
use crate::exp_family::{Family, GlmComponent};

/// Largest cluster count for which label matching is done exactly over all
/// permutations; beyond it a greedy matching is used.
const EXACT_MATCH_LIMIT: usize = 8;

/// Evaluation summary serialized by the command-line front end. Clustering
/// agreement fields are present only when true labels are available.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub loglik: f64,
    pub bic: f64,
    pub cgof: f64,
    /// Observations skipped in the CGOF sum because the conditional variance
    /// vanished at working precision.
    pub cgof_skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gsd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rand: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclassification: Option<f64>,
}

/// Bayesian information criterion, `2 l - m ln N`. Larger is better under
/// this sign convention.
pub fn bic(loglik: f64, m: usize, n: usize) -> f64 {
    assert!(n >= 1, "BIC needs at least one observation");
    2.0 * loglik - (m as f64) * (n as f64).ln()
}

fn contingency(a: &[usize], b: &[usize]) -> (Vec<Vec<u64>>, Vec<u64>, Vec<u64>) {
    let dense = |labels: &[usize]| -> (Vec<usize>, usize) {
        let mut map = std::collections::BTreeMap::new();
        let ids: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        (ids, map.len())
    };
    let (ia, ka) = dense(a);
    let (ib, kb) = dense(b);
    let mut table = vec![vec![0u64; kb]; ka];
    for (ra, rb) in ia.iter().zip(&ib) {
        table[*ra][*rb] += 1;
    }
    let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    (table, rows, cols)
}

fn choose2(v: u64) -> u64 {
    v * v.saturating_sub(1) / 2
}

/// Rand index: the fraction of observation pairs on which the two
/// partitions agree (together-together plus apart-apart).
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    check_partitions(a, b)?;
    let n = a.len() as u64;
    let (table, rows, cols) = contingency(a, b);
    let together_both: u64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let together_a: u64 = rows.iter().map(|&v| choose2(v)).sum();
    let together_b: u64 = cols.iter().map(|&v| choose2(v)).sum();
    let pairs = choose2(n);
    let agreements = pairs + 2 * together_both - together_a - together_b;
    Ok(agreements as f64 / pairs as f64)
}

/// Adjusted Rand index under the permutation model: 1 for identical
/// partitions, expectation 0 under random labeling. The degenerate case
/// where the maximum equals the expectation returns 0 by convention.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    check_partitions(a, b)?;
    let n = a.len() as u64;
    let (table, rows, cols) = contingency(a, b);
    let index: f64 = table.iter().flatten().map(|&v| choose2(v) as f64).sum();
    let sum_a: f64 = rows.iter().map(|&v| choose2(v) as f64).sum();
    let sum_b: f64 = cols.iter().map(|&v| choose2(v) as f64).sum();
    let pairs = choose2(n) as f64;
    let expected = sum_a * sum_b / pairs;
    let maximum = 0.5 * (sum_a + sum_b);
    if maximum == expected {
        return Ok(0.0);
    }
    Ok((index - expected) / (maximum - expected))
}

fn check_partitions(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CwmError::DimensionMismatch(format!(
            "partitions have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(CwmError::InvalidInput("pair-counting needs at least 2 observations".into()));
    }
    Ok(())
}

/// Fraction of observations whose predicted component disagrees with the
/// truth, minimized over all component relabelings.
pub fn misclassification_error(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(CwmError::DimensionMismatch("label vectors differ in length".into()));
    }
    if truth.is_empty() {
        return Err(CwmError::InvalidInput("empty label vectors".into()));
    }
    let (table, rows, cols) = contingency(truth, predicted);
    let k = rows.len().max(cols.len());
    let mut square = vec![vec![0u64; k]; k];
    for (i, row) in table.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            square[i][j] = *v;
        }
    }
    let n = truth.len() as u64;
    let matched = if k <= EXACT_MATCH_LIMIT {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = 0u64;
        permute(&mut perm, 0, &mut |p| {
            let s: u64 = (0..k).map(|j| square[p[j]][j]).sum();
            best = best.max(s);
        });
        best
    } else {
        log::warn!("more than {EXACT_MATCH_LIMIT} clusters: falling back to greedy label matching");
        greedy_match(&square)
    };
    Ok((n - matched) as f64 / n as f64)
}

fn permute(perm: &mut Vec<usize>, at: usize, visit: &mut impl FnMut(&[usize])) {
    if at == perm.len() {
        visit(perm);
        return;
    }
    for i in at..perm.len() {
        perm.swap(at, i);
        permute(perm, at + 1, visit);
        perm.swap(at, i);
    }
}

fn greedy_match(square: &[Vec<u64>]) -> u64 {
    let k = square.len();
    let mut cells: Vec<(u64, usize, usize)> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| (square[i][j], i, j))
        .collect();
    cells.sort_unstable_by(|a, b| b.cmp(a));
    let (mut used_r, mut used_c) = (vec![false; k], vec![false; k]);
    let mut total = 0;
    for (v, i, j) in cells {
        if !used_r[i] && !used_c[j] {
            used_r[i] = true;
            used_c[j] = true;
            total += v;
        }
    }
    total
}

/// Conditional goodness-of-fit value plus the count of skipped
/// zero-variance observations.
#[derive(Debug, Clone, Copy)]
pub struct Cgof {
    pub value: f64,
    pub skipped: usize,
}

/// Conditional goodness-of-fit: the group-weighted Pearson statistic over N,
/// with observations assigned to components by the hard labels.
///
/// With a single component this is the classical generalized Pearson
/// chi-square divided by N.
pub fn cgof(
    data: &Dataset,
    hard_labels: &[usize],
    glms: &[GlmComponent],
    family: &Family,
) -> Result<Cgof> {
    if hard_labels.len() != data.n() {
        return Err(CwmError::DimensionMismatch("labels vs observations".into()));
    }
    let mut total = 0.0;
    let mut skipped = 0usize;
    for ((x, y), label) in data.x.iter().zip(&data.y).zip(hard_labels) {
        let comp = glms
            .get(*label)
            .ok_or_else(|| CwmError::InvalidInput(format!("label {label} out of range")))?;
        let (mean, var) = comp.mean_variance(family, x);
        if var <= 0.0 || !var.is_finite() {
            skipped += 1;
            continue;
        }
        total += (y - mean) * (y - mean) / var;
    }
    Ok(Cgof { value: total / data.n() as f64, skipped })
}

/// Generalized deviance and its scaled form, with a count of infinite terms
/// (a zero fitted mean against a positive count).
#[derive(Debug, Clone, Copy)]
pub struct Deviance {
    pub deviance: f64,
    pub scaled: f64,
    pub infinite_terms: usize,
}

/// Group-summed GLM deviance against the saturated model, using hard
/// assignments; defined for the discrete families. The scaled form divides
/// by the trial count for binomial responses and is the deviance itself for
/// Poisson. `0 ln 0` terms are taken as zero.
pub fn generalized_deviance(
    data: &Dataset,
    hard_labels: &[usize],
    glms: &[GlmComponent],
    family: &Family,
) -> Result<Deviance> {
    if hard_labels.len() != data.n() {
        return Err(CwmError::DimensionMismatch("labels vs observations".into()));
    }
    let trials = match family {
        Family::Poisson => None,
        Family::Bernoulli | Family::Binomial { .. } => Some(f64::from(family.trials().unwrap())),
        Family::GaussianLinear => {
            return Err(CwmError::InvalidInput(
                "generalized deviance is defined for the discrete families".into(),
            ));
        }
    };
    let xlogx = |num: f64, den: f64| -> f64 {
        if num == 0.0 {
            0.0
        } else {
            num * (num / den).ln()
        }
    };
    let mut total = 0.0;
    let mut infinite = 0usize;
    for ((x, y), label) in data.x.iter().zip(&data.y).zip(hard_labels) {
        let comp = glms
            .get(*label)
            .ok_or_else(|| CwmError::InvalidInput(format!("label {label} out of range")))?;
        let (mean, _) = comp.mean_variance(family, x);
        let term = match trials {
            Some(m) => xlogx(*y, mean) + xlogx(m - y, m - mean),
            None => {
                if mean <= 0.0 && *y > 0.0 {
                    infinite += 1;
                    f64::INFINITY
                } else {
                    xlogx(*y, mean) - (y - mean)
                }
            }
        };
        total += 2.0 * term;
    }
    let scaled = match trials {
        Some(m) => total / m,
        None => total,
    };
    Ok(Deviance { deviance: total, scaled, infinite_terms: infinite })
}

/// Mean absolute difference between two coefficient sets over all
/// G(d+1) entries, minimized over component matchings.
pub fn coefficient_discrepancy(a: &[GlmComponent], b: &[GlmComponent]) -> Result<f64> {
    let g = a.len();
    if g == 0 || b.len() != g {
        return Err(CwmError::DimensionMismatch("component counts differ".into()));
    }
    let d = a[0].dim();
    if a.iter().chain(b).any(|c| c.dim() != d) {
        return Err(CwmError::DimensionMismatch("coefficient dimensions differ".into()));
    }
    if g > EXACT_MATCH_LIMIT {
        return Err(CwmError::InvalidInput(format!(
            "exact matching supports up to {EXACT_MATCH_LIMIT} components"
        )));
    }
    let coefs_a: Vec<Vec<f64>> = a.iter().map(GlmComponent::coefficients).collect();
    let coefs_b: Vec<Vec<f64>> = b.iter().map(GlmComponent::coefficients).collect();
    let mut perm: Vec<usize> = (0..g).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = (0..g)
            .map(|j| {
                coefs_a[j]
                    .iter()
                    .zip(&coefs_b[p[j]])
                    .map(|(u, v)| (u - v).abs())
                    .sum::<f64>()
            })
            .sum();
        best = best.min(total);
    });
    Ok(best / (g * (d + 1)) as f64)
}
