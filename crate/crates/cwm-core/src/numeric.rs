//! Small numerical helpers shared across modules.

/// Log of a sum of exponentials, max-shifted.
///
/// Terms are accumulated in sorted order so the result is invariant under
/// permutations of the input (component relabeling must not change any
/// likelihood value, even at the last bit).
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mut shifted: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
    shifted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite after shift"));
    max + shifted.iter().sum::<f64>().ln()
}

/// Normalized exponentials of log-scale terms. Falls back to uniform when
/// every term is negative infinity.
pub fn softmax_from_log(terms: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(terms);
    if !lse.is_finite() {
        return vec![1.0 / terms.len() as f64; terms.len()];
    }
    terms.iter().map(|t| (t - lse).exp()).collect()
}
