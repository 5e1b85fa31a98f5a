//! Property-based invariants: relabeling and shift invariances, posterior
//! normalization, and chance-level agreement of the adjusted Rand index.

use proptest::prelude::*;

use cwm_core::em::{self, Constraint};
use cwm_core::exp_family::{Family, GlmComponent};
use cwm_core::gaussian::GaussianComponent;
use cwm_core::metrics::{adjusted_rand_index, misclassification_error, rand_index};
use cwm_core::mixtures::ConcomitantParams;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

proptest! {
    #[test]
    fn concomitant_weights_invariant_to_common_shift(
        alpha0 in prop::collection::vec(-5.0f64..5.0, 3),
        alpha1 in prop::collection::vec(-3.0f64..3.0, 3),
        shift0 in -10.0f64..10.0,
        shift1 in -10.0f64..10.0,
        x in -4.0f64..4.0,
    ) {
        // Re-base both parameter sets on row 0 so they are valid baselines,
        // then add a common column shift to every row: a softmax invariant.
        let base = |a: &[f64]| -> Vec<f64> { a.iter().map(|v| v - a[0]).collect() };
        let a0 = base(&alpha0);
        let a1 = base(&alpha1);
        let params = ConcomitantParams::new(
            a0.clone(),
            a1.iter().map(|v| vec![*v]).collect(),
        ).unwrap();

        // The shifted parameters no longer have a zero baseline, so compute
        // the softmax directly from the linear terms.
        let direct = |a0: &[f64], a1: &[f64]| -> Vec<f64> {
            let terms: Vec<f64> = a0.iter().zip(a1).map(|(c, s)| c + s * x).collect();
            cwm_core::numeric::softmax_from_log(&terms)
        };
        let shifted0: Vec<f64> = a0.iter().map(|v| v + shift0).collect();
        let shifted1: Vec<f64> = a1.iter().map(|v| v + shift1).collect();

        let w_params = params.weights_at(&[x]);
        let w_shifted = direct(&shifted0, &shifted1);
        for (a, b) in w_params.iter().zip(&w_shifted) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rand_indices_invariant_under_relabeling(
        labels_a in prop::collection::vec(0usize..4, 8..40),
        labels_b_seed in prop::collection::vec(0usize..4, 8..40),
        perm_pick in 0usize..24,
    ) {
        let n = labels_a.len().min(labels_b_seed.len());
        let a = &labels_a[..n];
        let b = &labels_b_seed[..n];

        // A fixed permutation of the 4 symbols applied to one side.
        let perms: Vec<Vec<usize>> = {
            let mut all = Vec::new();
            let mut sym = vec![0, 1, 2, 3];
            heap_permutations(&mut sym, 0, &mut all);
            all
        };
        let p = &perms[perm_pick % perms.len()];
        let b_relabeled: Vec<usize> = b.iter().map(|l| p[*l]).collect();

        prop_assert_eq!(
            rand_index(a, b).unwrap().to_bits(),
            rand_index(a, &b_relabeled).unwrap().to_bits()
        );
        prop_assert_eq!(
            adjusted_rand_index(a, b).unwrap().to_bits(),
            adjusted_rand_index(a, &b_relabeled).unwrap().to_bits()
        );
        // Misclassification against a permuted copy of itself is zero.
        let a_relabeled: Vec<usize> = a.iter().map(|l| p[*l]).collect();
        prop_assert_eq!(misclassification_error(a, &a_relabeled).unwrap(), 0.0);
    }

    #[test]
    fn posterior_rows_are_normalized(
        mu2 in -6.0f64..6.0,
        b11 in -1.0f64..1.0,
        b12 in -1.0f64..1.0,
        x in -8.0f64..8.0,
        y in 0u32..40,
    ) {
        let model = em::CwmModel::new(
            vec![0.4, 0.6],
            vec![
                GaussianComponent::new(vec![0.0], vec![vec![1.0]]).unwrap(),
                GaussianComponent::new(vec![mu2], vec![vec![2.0]]).unwrap(),
            ],
            vec![
                GlmComponent::new(0.5, vec![b11], 1.0).unwrap(),
                GlmComponent::new(-0.5, vec![b12], 1.0).unwrap(),
            ],
            Family::Poisson,
            Constraint::Unconstrained,
        ).unwrap();
        let post = model.posterior(&[x], f64::from(y));
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(post.iter().all(|p| *p >= 0.0));
    }
}

fn heap_permutations(sym: &mut Vec<usize>, at: usize, out: &mut Vec<Vec<usize>>) {
    if at == sym.len() {
        out.push(sym.clone());
        return;
    }
    for i in at..sym.len() {
        sym.swap(at, i);
        heap_permutations(sym, at + 1, out);
        sym.swap(at, i);
    }
}

#[test]
fn ari_against_random_partitions_is_centered_at_zero() {
    // Empirical mean over 200 independent uniform partitions at N = 200.
    let n = 200;
    let mut rng = ChaCha12Rng::seed_from_u64(314);
    let reference: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let mut total = 0.0;
    for _ in 0..200 {
        let random: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        total += adjusted_rand_index(&reference, &random).unwrap();
    }
    let mean = total / 200.0;
    assert!(mean.abs() < 0.05, "empirical ARI mean {mean}");
}
