//! First- and second-order agreement between the mirror-descent step on
//! occupancies and the proximal policy surrogate.
//!
//! At `θ_k` the mirror-descent objective
//! `J_PMD(θ) = ⟨∇f(ω_k), ω(θ)⟩ - η⁻¹ D_φ(ω(θ) ‖ ω_k)` (Kakade potential) and
//! the surrogate `J_SURR(θ) = E_{s∼ω_k, a∼π_θ}[A_k] - η⁻¹ E_{s∼ω_k} KL(π_k ‖ π_θ)`
//! have the same gradient, and their regularizers have the same Hessian.
//! Both regularizers are stationary at `θ_k`, so the gradient comparison
//! involves only the linear terms; `η` scales both Hessians alike and is
//! dropped.

use nalgebra::DVector;

use crate::cmp::{Cmp, TabularPolicy};
use crate::error::Result;
use crate::geometry::{metric_from_jacobian, weighted_fisher, Potential};
use crate::numerics::mat_sup_norm;
use crate::occupancy::{advantage_for_reward, occupancy_jacobian};
use crate::utilities::Utility;

pub const GRADIENT_GAP_TOL: f64 = 1e-8;
pub const HESSIAN_GAP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// `‖∇J_PMD - ∇J_SURR‖_∞` at `θ_k`.
    pub gradient_gap: f64,
    /// `‖∇²D_φ - ∇²E KL‖_∞` at `θ_k`.
    pub hessian_gap: f64,
    pub passed: bool,
}

/// Compares both objectives at `pi_k` for a single-occupancy utility `f`.
pub fn surrogate_equivalence_check(cmp: &Cmp, pi_k: &TabularPolicy, f: &dyn Utility) -> Result<EquivalenceReport> {
    let layout = cmp.layout();
    let jac = occupancy_jacobian(cmp, pi_k)?;
    let omega = jac.omega.values().clone();
    let r = f.differential_single(layout, &omega)?;

    // Mirror-descent side: chain rule through the occupancy Jacobian.
    let grad_pmd = jac.matrix.transpose() * &r;

    // Surrogate side: score-function form over states with frozen advantages,
    // ∂/∂θ(s,b) Σ_a d(s) π(a|s) A(s,a) = d(s) π(b|s) (A(s,b) - Σ_a π(a|s) A(s,a)).
    let adv = advantage_for_reward(cmp, pi_k, &r)?;
    let d = layout.state_marginal(&omega);
    let mut grad_surr = DVector::zeros(layout.len());
    for s in 0..layout.n_states {
        let mean: f64 = (0..layout.n_actions).map(|a| pi_k.prob(s, a) * adv.a[layout.index(s, a)]).sum();
        for b in 0..layout.n_actions {
            let i = layout.index(s, b);
            grad_surr[i] = d[s] * pi_k.prob(s, b) * (adv.a[i] - mean);
        }
    }
    let gradient_gap = (&grad_pmd - &grad_surr).amax();

    let h_pmd = metric_from_jacobian(layout, &jac, &Potential::Kakade)?.matrix;
    let h_surr = weighted_fisher(cmp, pi_k)?;
    let hessian_gap = mat_sup_norm(&(h_pmd - h_surr));

    Ok(EquivalenceReport {
        gradient_gap,
        hessian_gap,
        passed: gradient_gap <= GRADIENT_GAP_TOL && hessian_gap <= HESSIAN_GAP_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmp::CmpSpec;
    use crate::utilities::{entropy_utility, linear_utility, EntropyMode};
    use nalgebra::DMatrix;

    fn chain(gamma: f64) -> Cmp {
        Cmp::new(CmpSpec {
            n_states: 2,
            n_actions: 2,
            kernel: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
            mu: vec![1.0, 0.0],
            gamma,
        })
        .unwrap()
    }

    #[test]
    fn linear_on_chain() {
        let cmp = chain(0.5);
        let pi = TabularPolicy::from_logits(DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4])).unwrap();
        let f = linear_utility(DVector::from_vec(vec![1.0, 0.0, -0.5, 0.25])).unwrap();
        let rep = surrogate_equivalence_check(&cmp, &pi, &f).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn entropy_on_chain() {
        let cmp = chain(0.9);
        let pi = TabularPolicy::from_logits(DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 0.0, 1.0])).unwrap();
        let rep = surrogate_equivalence_check(&cmp, &pi, &entropy_utility(EntropyMode::StateAction)).unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}
