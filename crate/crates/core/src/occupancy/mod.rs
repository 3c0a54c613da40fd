//! Exact occupancy algebra on a finite CMP.
//!
//! The discounted state-action occupancy of a policy is
//! `ω(s,a) = π(a|s) (1-γ) Σ_t γ^t P(s_t = s)`. It is computed here either by
//! solving the Bellman flow system for the state occupancy directly, or from
//! the successor representation `M = (I - γP^π)^{-1}`.
//!
//! Successor convention: `M[(s,a), (s',a')]` is the expected discounted number
//! of visits to `(s',a')` when starting in `(s,a)`; rows index the start pair.
//! With that convention `ωᵀ = (1-γ) νᵀ M` where `ν(s,a) = μ(s)π(a|s)`, and
//! `Q = M r`.

mod baseline;
pub(crate) mod jacobian;
pub(crate) mod sampling;

use nalgebra::{DMatrix, DVector};

pub use baseline::{solve_linear_baseline, LinearOptimum};
pub use jacobian::{occupancy_jacobian, OccupancyJacobian};
pub use sampling::{
    discounted_expectation, horizon_for, sample_occupancy, McEstimate, SampledOccupancy,
    TRUNCATION_TOL,
};

use crate::cmp::{Cmp, Layout, TabularPolicy};
use crate::error::{check_len, Error, Result};
use crate::numerics::{lu_inverse, lu_solve};

/// Tolerance on the total mass of an occupancy vector.
pub const MASS_TOL: f64 = 1e-10;

/// A probability vector over state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    layout: Layout,
    values: DVector<f64>,
}

impl Occupancy {
    /// Wraps a vector, checking non-negativity and unit mass.
    pub fn from_values(layout: Layout, values: DVector<f64>) -> Result<Self> {
        check_len(layout.len(), values.len())?;
        if let Some(bad) = values.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Domain(format!("occupancy entry {bad} is not a probability")));
        }
        let mass: f64 = values.sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Domain(format!("occupancy mass is {mass}, expected 1")));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }
    pub fn into_values(self) -> DVector<f64> {
        self.values
    }
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[self.layout.index(s, a)]
    }
    pub fn state_marginal(&self) -> DVector<f64> {
        self.layout.state_marginal(&self.values)
    }

    /// CSV rows `s,a,omega` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,a,omega\n");
        for s in 0..self.layout.n_states {
            for a in 0..self.layout.n_actions {
                out.push_str(&format!("{s},{a},{}\n", self.get(s, a)));
            }
        }
        out
    }
}

/// State occupancy `d(s) = (1-γ) Σ_t γ^t P(s_t = s)` from the flow system
/// `(I - γ P_πᵀ) d = (1-γ) μ`.
pub fn state_occupancy(cmp: &Cmp, pi: &TabularPolicy) -> Result<DVector<f64>> {
    cmp.check_policy(pi)?;
    let ns = cmp.n_states();
    let g = cmp.gamma();
    let system = DMatrix::identity(ns, ns) - cmp.state_transition(pi).transpose() * g;
    lu_solve(system, &(cmp.mu() * (1.0 - g)), "state flow system")
}

/// Exact occupancy of `pi`, via the direct flow solve.
pub fn occupancy(cmp: &Cmp, pi: &TabularPolicy) -> Result<Occupancy> {
    let d = state_occupancy(cmp, pi)?;
    let l = cmp.layout();
    let values = DVector::from_fn(l.len(), |i, _| {
        let (s, a) = (i / l.n_actions, i % l.n_actions);
        (d[s] * pi.prob(s, a)).max(0.0)
    });
    // Renormalize away solver round-off so the mass invariant holds tightly.
    let mass = values.sum();
    Occupancy::from_values(l, values / mass)
}

/// Exact occupancy of `pi` assembled from the successor representation:
/// `ωᵀ = (1-γ) νᵀ M`.
pub fn occupancy_via_successor(cmp: &Cmp, pi: &TabularPolicy, sr: &SuccessorRep) -> Result<Occupancy> {
    let l = cmp.layout();
    let nu = DVector::from_fn(l.len(), |i, _| {
        cmp.mu()[i / l.n_actions] * pi.prob(i / l.n_actions, i % l.n_actions)
    });
    let values = sr.matrix.tr_mul(&nu) * (1.0 - cmp.gamma());
    Occupancy::from_values(l, values.map(|x| x.max(0.0)))
}

/// The successor representation `M = (I - γP^π)^{-1}` (row = start pair).
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessorRep {
    pub matrix: DMatrix<f64>,
}

impl SuccessorRep {
    /// `‖M - I - γ P^π M‖_∞`, the backward Bellman residual.
    pub fn bellman_residual(&self, cmp: &Cmp, pi: &TabularPolicy) -> f64 {
        let n = self.matrix.nrows();
        let p = cmp.state_action_transition(pi);
        let r = &self.matrix - DMatrix::<f64>::identity(n, n) - p * &self.matrix * cmp.gamma();
        r.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

pub fn successor_representation(cmp: &Cmp, pi: &TabularPolicy) -> Result<SuccessorRep> {
    cmp.check_policy(pi)?;
    let n = cmp.layout().len();
    let system = DMatrix::identity(n, n) - cmp.state_action_transition(pi) * cmp.gamma();
    Ok(SuccessorRep { matrix: lu_inverse(system, "successor representation")? })
}

/// Per-state Bellman flow defects
/// `Σ_a ω(s,a) - (1-γ)μ(s) - γ Σ_{s',a'} P(s|s',a') ω(s',a')`.
pub fn flow_defects(cmp: &Cmp, omega: &DVector<f64>) -> Result<DVector<f64>> {
    let l = cmp.layout();
    check_len(l.len(), omega.len())?;
    let g = cmp.gamma();
    let mut defect = l.state_marginal(omega) - cmp.mu() * (1.0 - g);
    for s in 0..l.n_states {
        for a in 0..l.n_actions {
            let w = omega[l.index(s, a)];
            if w == 0.0 {
                continue;
            }
            for (next, p) in cmp.kernel_row(s, a).iter().enumerate() {
                defect[next] -= g * p * w;
            }
        }
    }
    Ok(defect)
}

/// Sup-norm of the Bellman flow defects over states.
pub fn bellman_flow_residual(cmp: &Cmp, omega: &DVector<f64>) -> Result<f64> {
    if let Some(bad) = omega.iter().find(|x| **x < 0.0) {
        return Err(Error::Domain(format!("negative occupancy entry {bad}")));
    }
    Ok(flow_defects(cmp, omega)?.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// `|Σ ω - 1|`, reported separately from the flow residual.
pub fn mass_defect(omega: &DVector<f64>) -> f64 {
    (omega.sum() - 1.0).abs()
}

/// The flow matrix `F` with `F ω = (1-γ) μ` on the polytope
/// (rows: states, columns: state-action pairs).
pub fn flow_matrix(cmp: &Cmp) -> DMatrix<f64> {
    let l = cmp.layout();
    let g = cmp.gamma();
    let mut f = DMatrix::zeros(l.n_states, l.len());
    for s in 0..l.n_states {
        for a in 0..l.n_actions {
            let col = l.index(s, a);
            f[(s, col)] += 1.0;
            for (next, p) in cmp.kernel_row(s, a).iter().enumerate() {
                f[(next, col)] -= g * p;
            }
        }
    }
    f
}

/// Orthonormal basis (as columns) of the tangent space `{v : F v = 0}` of
/// the occupancy polytope. The simplex constraint is implied by the flow rows.
pub fn tangent_basis(cmp: &Cmp) -> DMatrix<f64> {
    let f = flow_matrix(cmp);
    let n = f.ncols();
    // Null space from the eigenvectors of FᵀF with (numerically) zero eigenvalue.
    let gram = f.transpose() * &f;
    let eig = gram.symmetric_eigen();
    let scale = eig.eigenvalues.iter().cloned().fold(1.0_f64, f64::max);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * scale)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Action values, state values and advantages of `pi` for a fixed reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    /// `Q(s,a) = Σ_{s',a'} M[(s,a),(s',a')] r(s',a')`, not `(1-γ)`-normalized.
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub a: DVector<f64>,
}

/// Computes `Q = M r`, `V(s) = Σ_a π(a|s) Q(s,a)` and `A = Q - V` by solving
/// the state-level system `(I - γ P_π) V = r_π` and setting
/// `Q = r + γ P V`.
pub fn advantage_for_reward(cmp: &Cmp, pi: &TabularPolicy, r: &DVector<f64>) -> Result<Advantages> {
    cmp.check_policy(pi)?;
    let l = cmp.layout();
    check_len(l.len(), r.len())?;
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("reward has non-finite entries".into()));
    }
    let ns = l.n_states;
    let g = cmp.gamma();
    let r_pi = DVector::from_fn(ns, |s, _| (0..l.n_actions).map(|a| pi.prob(s, a) * r[l.index(s, a)]).sum());
    let system = DMatrix::identity(ns, ns) - cmp.state_transition(pi) * g;
    let v_solve = lu_solve(system, &r_pi, "policy evaluation")?;
    let q = DVector::from_fn(l.len(), |i, _| {
        let (s, a) = (i / l.n_actions, i % l.n_actions);
        r[i] + g * cmp.kernel_row(s, a).iter().zip(v_solve.iter()).map(|(p, v)| p * v).sum::<f64>()
    });
    // Recompute V from Q so that Σ_a π(a|s) A(s,a) vanishes to round-off.
    let v = DVector::from_fn(ns, |s, _| (0..l.n_actions).map(|a| pi.prob(s, a) * q[l.index(s, a)]).sum());
    let a = &q - l.broadcast_states(&v);
    Ok(Advantages { q, v, a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmp::CmpSpec;

    /// Deterministic stay/switch chain, μ = (1, 0).
    pub(crate) fn chain(gamma: f64) -> Cmp {
        Cmp::new(CmpSpec {
            n_states: 2,
            n_actions: 2,
            kernel: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
            mu: vec![1.0, 0.0],
            gamma,
        })
        .unwrap()
    }

    fn neumann(cmp: &Cmp, pi: &TabularPolicy, terms: usize) -> DMatrix<f64> {
        let n = cmp.layout().len();
        let step = cmp.state_action_transition(pi) * cmp.gamma();
        let mut acc = DMatrix::identity(n, n);
        let mut power = DMatrix::identity(n, n);
        for _ in 0..terms {
            power = &power * &step;
            acc += &power;
        }
        acc
    }

    #[test]
    fn successor_is_identity_without_discount() {
        let cmp = chain(0.0);
        let sr = successor_representation(&cmp, &TabularPolicy::uniform(2, 2)).unwrap();
        assert_eq!(sr.matrix, DMatrix::identity(4, 4));
    }

    #[test]
    fn successor_of_absorbing_state() {
        let cmp = Cmp::new(CmpSpec { n_states: 1, n_actions: 1, kernel: vec![vec![vec![1.0]]], mu: vec![1.0], gamma: 0.5 }).unwrap();
        let sr = successor_representation(&cmp, &TabularPolicy::uniform(1, 1)).unwrap();
        assert!((sr.matrix[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn successor_matches_truncated_neumann_series() {
        let cmp = chain(0.5);
        let pi = TabularPolicy::uniform(2, 2);
        let sr = successor_representation(&cmp, &pi).unwrap();
        let diff = &sr.matrix - neumann(&cmp, &pi, 60);
        assert!(diff.iter().all(|x| x.abs() < 1e-12));
        assert!(sr.bellman_residual(&cmp, &pi) < 1e-12);
    }

    #[test]
    fn chain_occupancy_both_routes() {
        let cmp = chain(0.5);
        let pi = TabularPolicy::uniform(2, 2);
        let direct = occupancy(&cmp, &pi).unwrap();
        let expected = [0.375, 0.375, 0.125, 0.125];
        for (x, e) in direct.values().iter().zip(expected) {
            assert!((x - e).abs() < 1e-12);
        }
        let sr = successor_representation(&cmp, &pi).unwrap();
        let via = occupancy_via_successor(&cmp, &pi, &sr).unwrap();
        assert!((via.values() - direct.values()).amax() < 1e-12);
        assert!(bellman_flow_residual(&cmp, direct.values()).unwrap() < 1e-12);
    }

    #[test]
    fn undiscounted_occupancy_is_initial_pairs() {
        let cmp = chain(0.0).with_mu(vec![0.3, 0.7]).unwrap();
        let pi = policy_from(&[0.2, 0.8, 0.6, 0.4]);
        let omega = occupancy(&cmp, &pi).unwrap();
        let expected = [0.3 * 0.2, 0.3 * 0.8, 0.7 * 0.6, 0.7 * 0.4];
        for (x, e) in omega.values().iter().zip(expected) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn single_state_occupancy_is_policy() {
        let cmp = Cmp::new(CmpSpec { n_states: 1, n_actions: 2, kernel: vec![vec![vec![1.0], vec![1.0]]], mu: vec![1.0], gamma: 0.95 }).unwrap();
        let pi = policy_from(&[0.3, 0.7]);
        let omega = occupancy(&cmp, &pi).unwrap();
        assert!((omega.get(0, 0) - 0.3).abs() < 1e-14);
        assert!((omega.get(0, 1) - 0.7).abs() < 1e-14);
    }

    #[test]
    fn flow_residual_of_uniform_vector() {
        let cmp = chain(0.5);
        let uniform = DVector::from_element(4, 0.25);
        let defects = flow_defects(&cmp, &uniform).unwrap();
        assert!((defects[0] + 0.25).abs() < 1e-15);
        assert!((bellman_flow_residual(&cmp, &uniform).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn doubled_occupancy_reports_mass_defect() {
        let cmp = chain(0.5);
        let omega = occupancy(&cmp, &TabularPolicy::uniform(2, 2)).unwrap();
        let doubled = omega.values() * 2.0;
        assert!((mass_defect(&doubled) - 1.0).abs() < 1e-12);
        assert!(bellman_flow_residual(&cmp, &doubled).unwrap() > 0.1);
        assert!(matches!(bellman_flow_residual(&cmp, &DVector::zeros(3)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_and_constant_rewards() {
        let cmp = chain(0.5);
        let pi = policy_from(&[0.9, 0.1, 0.35, 0.65]);
        let zero = advantage_for_reward(&cmp, &pi, &DVector::zeros(4)).unwrap();
        assert!(zero.q.iter().chain(zero.v.iter()).chain(zero.a.iter()).all(|x| *x == 0.0));
        let c = advantage_for_reward(&cmp, &pi, &DVector::from_element(4, 3.0)).unwrap();
        assert!(c.q.iter().all(|q| (q - 6.0).abs() < 1e-12));
        assert!(c.a.iter().all(|a| a.abs() < 1e-12));
    }

    #[test]
    fn q_equals_successor_times_reward() {
        let cmp = chain(0.7);
        let pi = policy_from(&[0.9, 0.1, 0.35, 0.65]);
        let r = DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0]);
        let adv = advantage_for_reward(&cmp, &pi, &r).unwrap();
        let sr = successor_representation(&cmp, &pi).unwrap();
        assert!((&sr.matrix * &r - &adv.q).amax() < 1e-12);
        for s in 0..2 {
            let baseline: f64 = (0..2).map(|a| pi.prob(s, a) * adv.a[2 * s + a]).sum();
            assert!(baseline.abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_basis_is_flow_null_space() {
        let cmp = chain(0.5);
        let basis = tangent_basis(&cmp);
        // 4 pairs, 2 independent flow rows.
        assert_eq!(basis.ncols(), 2);
        assert!((flow_matrix(&cmp) * &basis).amax() < 1e-12);
        for c in basis.column_iter() {
            assert!(c.sum().abs() < 1e-12);
        }
    }

    fn policy_from(probs: &[f64]) -> TabularPolicy {
        TabularPolicy::from_probs(&DMatrix::from_row_slice(probs.len() / 2, 2, probs)).unwrap()
    }
}
