//! Cross-module equivalences between the constrained cluster-weighted model
//! and the two mixture-of-GLM classes: posterior identities and the
//! estimation-level agreement when both are driven from the same initial
//! classification.

use cwm_core::em::{self, Constraint, FitConfig, InitStrategy};
use cwm_core::exp_family::{Family, GlmComponent};
use cwm_core::gaussian::GaussianComponent;
use cwm_core::mixtures::{self, cwm_to_fmrc_alphas, FmrModel, FmrcModel};
use cwm_core::sim::{self, CovariateLaw, GroupSpec, SimSpec};

fn two_group_poisson_spec(seed: u64) -> SimSpec {
    SimSpec {
        schema: 1,
        family: Family::Poisson,
        seed,
        groups: vec![
            GroupSpec {
                n: 120,
                covariates: CovariateLaw::Gaussian { mean: vec![5.0], cov: vec![vec![0.8]] },
                beta: vec![1.0, 0.2],
                dispersion: 1.0,
            },
            GroupSpec {
                n: 160,
                covariates: CovariateLaw::Gaussian { mean: vec![5.0], cov: vec![vec![0.8]] },
                beta: vec![0.0, 0.6],
                dispersion: 1.0,
            },
        ],
    }
}

#[test]
fn common_gaussian_posterior_equals_fmr_posterior() {
    let shared = GaussianComponent::new(vec![1.0], vec![vec![0.7]]).unwrap();
    let glms = vec![
        GlmComponent::new(0.5, vec![0.3], 1.0).unwrap(),
        GlmComponent::new(-0.2, vec![0.8], 1.0).unwrap(),
    ];
    let weights = vec![0.3, 0.7];
    let cwm = em::CwmModel::new(
        weights.clone(),
        vec![shared.clone(), shared],
        glms.clone(),
        Family::Poisson,
        Constraint::CommonGaussian,
    )
    .unwrap();
    let fmr = FmrModel::new(weights, glms, Family::Poisson).unwrap();

    let data = sim::generate(&two_group_poisson_spec(21)).unwrap();
    let (resp, _) = em::e_step(&cwm, &data);
    for (i, (x, y)) in data.x.iter().zip(&data.y).enumerate() {
        let from_fmr = fmr.posterior(x, *y);
        for (a, b) in resp.row(i).iter().zip(&from_fmr) {
            assert!((a - b).abs() < 1e-12, "row {i}: {a} vs {b}");
        }
    }
}

#[test]
fn common_sigma_posterior_equals_fmrc_with_mapped_alphas() {
    let sigma = vec![vec![1.1]];
    let means = vec![vec![-0.5], vec![2.5]];
    let gaussians: Vec<GaussianComponent> = means
        .iter()
        .map(|m| GaussianComponent::new(m.clone(), sigma.clone()).unwrap())
        .collect();
    let glms = vec![
        GlmComponent::new(0.5, vec![0.3], 1.0).unwrap(),
        GlmComponent::new(-0.2, vec![0.8], 1.0).unwrap(),
    ];
    let cwm = em::CwmModel::new(
        vec![0.5, 0.5],
        gaussians,
        glms.clone(),
        Family::Poisson,
        Constraint::CommonSigmaEqualWeights,
    )
    .unwrap();
    let mapped = cwm_to_fmrc_alphas(&means, &sigma).unwrap();
    let fmrc = FmrcModel::new(mapped, glms, Family::Poisson).unwrap();

    let data = sim::generate(&two_group_poisson_spec(22)).unwrap();
    let (resp, _) = em::e_step(&cwm, &data);
    for (i, (x, y)) in data.x.iter().zip(&data.y).enumerate() {
        let from_fmrc = fmrc.posterior(x, *y);
        for (a, b) in resp.row(i).iter().zip(&from_fmrc) {
            assert!((a - b).abs() < 1e-10, "row {i}: {a} vs {b}");
        }
    }
}

#[test]
fn common_gaussian_em_update_matches_fmr_update_per_iteration() {
    // The covariate factor cancels from every posterior under the shared
    // marginal, so one full EM iteration of either model maps a common
    // {beta, pi} state to the same next state. Walk the constrained chain
    // and re-derive every iterate with the mixture-of-GLMs update.
    let data = sim::generate(&two_group_poisson_spec(23)).unwrap();
    let n = data.n();
    let shared = {
        let mean = data.x.iter().map(|r| r[0]).sum::<f64>() / n as f64;
        let var =
            data.x.iter().map(|r| (r[0] - mean) * (r[0] - mean)).sum::<f64>() / n as f64;
        GaussianComponent::new(vec![mean], vec![vec![var]]).unwrap()
    };

    // Common starting state from a deterministic split on the response.
    let median = {
        let mut ys = data.y.clone();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys[n / 2]
    };
    let groups: Vec<usize> = data.y.iter().map(|y| usize::from(*y >= median)).collect();
    let mut pis: Vec<f64> = (0..2)
        .map(|g| groups.iter().filter(|l| **l == g).count() as f64 / n as f64)
        .collect();
    let mut betas: Vec<GlmComponent> = (0..2)
        .map(|g| {
            let w: Vec<f64> = groups.iter().map(|l| f64::from(u8::from(*l == g))).collect();
            cwm_core::exp_family::irls_weighted_fit(&data.x, &data.y, &w, &Family::Poisson, None)
                .unwrap()
                .component
        })
        .collect();

    for iteration in 0..10 {
        let cwm = em::CwmModel::new(
            pis.clone(),
            vec![shared.clone(), shared.clone()],
            betas.clone(),
            Family::Poisson,
            Constraint::CommonGaussian,
        )
        .unwrap();
        let fmr = FmrModel::new(pis.clone(), betas.clone(), Family::Poisson).unwrap();

        let (tau, _) = em::e_step(&cwm, &data);
        let next_cwm =
            em::m_step(&data, &tau, &Family::Poisson, Constraint::CommonGaussian, &cwm).unwrap();

        // The mixture-of-GLMs update computed on its own posterior.
        let tau_fmr: Vec<Vec<f64>> =
            data.x.iter().zip(&data.y).map(|(x, y)| fmr.posterior(x, *y)).collect();
        for g in 0..2 {
            let col: Vec<f64> = tau_fmr.iter().map(|r| r[g]).collect();
            let pi_fmr = col.iter().sum::<f64>() / n as f64;
            let beta_fmr = cwm_core::exp_family::irls_weighted_fit(
                &data.x,
                &data.y,
                &col,
                &Family::Poisson,
                Some(&betas[g]),
            )
            .unwrap()
            .component;
            assert!(
                (next_cwm.weights()[g] - pi_fmr).abs() < 1e-8,
                "iteration {iteration}, pi_{g}"
            );
            assert!(
                (next_cwm.glms()[g].intercept - beta_fmr.intercept).abs() < 1e-8
                    && (next_cwm.glms()[g].slopes[0] - beta_fmr.slopes[0]).abs() < 1e-8,
                "iteration {iteration}, component {g}: {:?} vs {beta_fmr:?}",
                next_cwm.glms()[g]
            );
        }

        pis = next_cwm.weights().to_vec();
        betas = next_cwm.glms().to_vec();
    }
}

#[test]
fn common_gaussian_fit_and_fmr_fit_share_the_optimum() {
    // Fully converged fits from the same initial partition land on the same
    // {beta, pi} estimates.
    let data = sim::generate(&two_group_poisson_spec(23)).unwrap();
    let config = FitConfig {
        max_iter: 500,
        epsilon: 1e-8,
        n_restarts: 0,
        init: InitStrategy::GivenLabels,
        seed: 77,
    };
    let cwm = em::fit(&data, 2, &Family::Poisson, Constraint::CommonGaussian, &config).unwrap();
    let fmr = mixtures::fit_fmr(&data, 2, &Family::Poisson, &config).unwrap();
    for g in 0..2 {
        let a = &cwm.model.glms()[g];
        let b = &fmr.model.glms()[g];
        assert!((a.intercept - b.intercept).abs() < 1e-6, "{a:?} vs {b:?}");
        assert!((a.slopes[0] - b.slopes[0]).abs() < 1e-6);
        assert!((cwm.model.weights()[g] - fmr.model.weights()[g]).abs() < 1e-6);
    }
}

#[test]
fn single_component_cwm_recovers_global_moments_and_glm() {
    let data = sim::generate(&two_group_poisson_spec(24)).unwrap();
    let config = FitConfig { n_restarts: 2, ..FitConfig::default() };
    let fit = em::fit(&data, 1, &Family::Poisson, Constraint::Unconstrained, &config).unwrap();

    let n = data.n() as f64;
    let mean = data.x.iter().map(|r| r[0]).sum::<f64>() / n;
    let var = data.x.iter().map(|r| (r[0] - mean) * (r[0] - mean)).sum::<f64>() / n;
    assert!((fit.model.gaussians()[0].mean()[0] - mean).abs() < 1e-6);
    assert!((fit.model.gaussians()[0].covariance_rows()[0][0] - var).abs() < 1e-6);

    let solo = cwm_core::exp_family::irls_weighted_fit(
        &data.x,
        &data.y,
        &vec![1.0; data.n()],
        &Family::Poisson,
        None,
    )
    .unwrap();
    assert!((fit.model.glms()[0].intercept - solo.component.intercept).abs() < 1e-6);
    assert!((fit.model.glms()[0].slopes[0] - solo.component.slopes[0]).abs() < 1e-6);
    assert_eq!(fit.model.weights(), &[1.0]);
}

#[test]
fn m_step_increases_expected_complete_loglik() {
    // One EM iteration from the true partition: the conditional expectation
    // of the complete-data log-likelihood, evaluated directly from its three
    // terms, must not decrease.
    let spec = SimSpec {
        schema: 1,
        family: Family::Poisson,
        seed: 9,
        groups: vec![
            GroupSpec {
                n: 150,
                covariates: CovariateLaw::Gaussian { mean: vec![0.0], cov: vec![vec![2.25]] },
                beta: vec![1.0, 0.2],
                dispersion: 1.0,
            },
            GroupSpec {
                n: 250,
                covariates: CovariateLaw::Gaussian { mean: vec![5.0], cov: vec![vec![0.64]] },
                beta: vec![0.0, 0.5],
                dispersion: 1.0,
            },
        ],
    };
    let data = sim::generate(&spec).unwrap();

    let truth = em::CwmModel::new(
        vec![0.375, 0.625],
        vec![
            GaussianComponent::new(vec![0.0], vec![vec![2.25]]).unwrap(),
            GaussianComponent::new(vec![5.0], vec![vec![0.64]]).unwrap(),
        ],
        spec.true_glms(),
        Family::Poisson,
        Constraint::Unconstrained,
    )
    .unwrap();

    let (tau, _) = em::e_step(&truth, &data);
    let updated =
        em::m_step(&data, &tau, &Family::Poisson, Constraint::Unconstrained, &truth).unwrap();

    let q_value = |model: &em::CwmModel| -> f64 {
        let mut q = 0.0;
        for (i, (x, y)) in data.x.iter().zip(&data.y).enumerate() {
            for g in 0..2 {
                q += tau.row(i)[g]
                    * (model.weights()[g].ln()
                        + model.gaussians()[g].log_pdf(x)
                        + model.glms()[g].log_density(&Family::Poisson, x, *y));
            }
        }
        q
    };
    let before = q_value(&truth);
    let after = q_value(&updated);
    assert!(after >= before - 1e-10, "Q decreased: {before} -> {after}");

    // And the observed log-likelihood moves the same way.
    assert!(updated.log_likelihood(&data) >= truth.log_likelihood(&data) - 1e-8);
}
