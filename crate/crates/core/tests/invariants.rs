//! Property tests over randomly drawn CMPs and policies.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use nmdp_core::checks::{oracles, random};
use nmdp_core::occupancy::{mass_defect, state_occupancy};
use nmdp_core::{
    advantage_for_reward, bellman_flow_residual, bregman_divergence, dispersion, occupancy, occupancy_jacobian,
    successor_representation, Cmp, CmpSpec, Potential, TabularPolicy,
};

/// A random CMP with 2..=4 states and 2..=3 actions and a random policy on it.
fn instance(seed: u64, gamma_idx: usize, scale: f64) -> (Cmp, TabularPolicy) {
    let mut rng = random::rng(seed);
    let ns = 2 + (seed % 3) as usize;
    let na = 2 + (seed / 3 % 2) as usize;
    let cmp = random::cmp(&mut rng, ns, na, random::GAMMAS[gamma_idx], 0.3);
    let pi = random::policy(&mut rng, ns, na, scale);
    (cmp, pi)
}

fn occupancies(seed: u64, k: usize) -> (Cmp, Vec<DVector<f64>>, Vec<f64>) {
    let (cmp, _) = instance(seed, 2, 1.0);
    let mut rng = random::rng(seed ^ 0x5eed);
    let omegas = (0..k)
        .map(|_| {
            let pi = random::policy(&mut rng, cmp.n_states(), cmp.n_actions(), 2.0);
            occupancy(&cmp, &pi).unwrap().into_values()
        })
        .collect();
    let weights = random::simplex(&mut rng, k, 0.0);
    (cmp, omegas, weights)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupancy_is_a_valid_flow(seed in 0u64..10_000, g in 0usize..4, scale in 0.0f64..4.0) {
        let (cmp, pi) = instance(seed, g, scale);
        let omega = occupancy(&cmp, &pi).unwrap();
        prop_assert!(omega.values().iter().all(|x| *x >= 0.0));
        prop_assert!(mass_defect(omega.values()) < 1e-12);
        prop_assert!(bellman_flow_residual(&cmp, omega.values()).unwrap() < 1e-9);
        let d = oracles::state_occupancy_iterative(&cmp, &pi);
        prop_assert!((omega.state_marginal() - &d).amax() < 1e-10);
        prop_assert!((state_occupancy(&cmp, &pi).unwrap() - d).amax() < 1e-10);
    }

    #[test]
    fn successor_rows_match_the_pair_neumann_limit(seed in 0u64..10_000, g in 0usize..3) {
        let (cmp, pi) = instance(seed, g, 1.0);
        let sr = successor_representation(&cmp, &pi).unwrap();
        let n = cmp.layout().len();
        let system = DMatrix::identity(n, n) - oracles::pair_transition(&cmp, &pi) * cmp.gamma();
        let product = system * &sr.matrix;
        prop_assert!((product - DMatrix::identity(n, n)).amax() < 1e-9);
    }

    #[test]
    fn shifting_a_state_row_leaves_policy_and_occupancy_unchanged(seed in 0u64..10_000, shift in -50.0f64..50.0) {
        let (cmp, pi) = instance(seed, 2, 2.0);
        let mut logits = pi.logits().clone();
        logits.row_mut(0).add_scalar_mut(shift);
        let shifted = TabularPolicy::from_logits(logits).unwrap();
        prop_assert!((shifted.probs() - pi.probs()).amax() < 1e-12);
        let a = occupancy(&cmp, &pi).unwrap();
        let b = occupancy(&cmp, &shifted).unwrap();
        prop_assert!((a.values() - b.values()).amax() < 1e-12);
    }

    #[test]
    fn advantages_are_policy_centered(seed in 0u64..10_000, g in 0usize..4) {
        let (cmp, pi) = instance(seed, g, 2.0);
        let mut rng = random::rng(seed + 1);
        let r = random::vector(&mut rng, cmp.layout().len(), -1.0, 1.0);
        let adv = advantage_for_reward(&cmp, &pi, &r).unwrap();
        for s in 0..cmp.n_states() {
            let centered: f64 = (0..cmp.n_actions()).map(|a| pi.prob(s, a) * adv.a[s * cmp.n_actions() + a]).sum();
            prop_assert!(centered.abs() < 1e-12 * adv.q.amax().max(1.0));
        }
    }

    #[test]
    fn jensen_gap_is_the_mean_bregman_divergence(seed in 0u64..10_000, k in 1usize..5, kakade in any::<bool>()) {
        let (cmp, omegas, weights) = occupancies(seed, k);
        let phi = if kakade { Potential::Kakade } else { Potential::FisherRao };
        let layout = cmp.layout();
        let mean = omegas.iter().zip(&weights).fold(DVector::zeros(layout.len()), |acc, (o, z)| acc + o * *z);
        let gap = dispersion(&phi, layout, &omegas, &weights).unwrap();
        let mut bregman = 0.0;
        for (o, z) in omegas.iter().zip(&weights) {
            let d = bregman_divergence(&phi, layout, o, &mean).unwrap();
            prop_assert!(d >= -1e-12);
            bregman += z * d;
        }
        prop_assert!(gap >= -1e-12);
        prop_assert!((gap - bregman).abs() < 1e-10);
    }

    #[test]
    fn fisher_rao_dispersion_is_label_mutual_information(seed in 0u64..10_000, k in 1usize..5) {
        let (cmp, omegas, weights) = occupancies(seed, k);
        let gap = dispersion(&Potential::FisherRao, cmp.layout(), &omegas, &weights).unwrap();
        prop_assert!((gap - oracles::brute_force_mi(&omegas, &weights)).abs() < 1e-10);
    }

    #[test]
    fn cmp_specs_survive_json(seed in 0u64..10_000, g in 0usize..4) {
        let (cmp, _) = instance(seed, g, 0.0);
        let spec = cmp.to_spec();
        let text = serde_json::to_string(&spec).unwrap();
        let back: CmpSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert!(Cmp::new(back).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn jacobian_matches_central_differences(seed in 0u64..10_000, g in 0usize..3) {
        let (cmp, pi) = instance(seed, g, 1.0);
        let exact = occupancy_jacobian(&cmp, &pi).unwrap().matrix;
        let fd = oracles::fd_occupancy_jacobian(&cmp, &pi, 1e-5);
        prop_assert!(oracles::rel_err_mat(&exact, &fd, 1e-6) < 1e-5);
    }
}
