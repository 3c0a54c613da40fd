use nalgebra::DMatrix;

use super::{occupancy, successor_representation, Occupancy, SuccessorRep};
use crate::cmp::{Cmp, TabularPolicy};
use crate::error::Result;

/// Derivatives `∂ω(s,a)/∂θ_j` of the occupancy with respect to the policy
/// logits, rows in state-action layout, one column per logit.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyJacobian {
    pub matrix: DMatrix<f64>,
    pub omega: Occupancy,
}

/// Analytic occupancy Jacobian.
///
/// With `M` un-normalized (row = start pair) and `ω` a probability vector,
///
/// ```text
/// ∂ω(s,a)/∂θ = Σ_{s',a'} ω(s',a') ∇_θ log π(a'|s') M[(s',a'), (s,a)]
/// ```
///
/// with unit prefactor. Differentiating `ωᵀ = (1-γ) νᵀ M` gives
/// `(1-γ)∂νᵀM + γ ωᵀ ∂P^π M`, and the flow equations collapse the two terms
/// into the expression above. The constant is pinned by the finite-difference
/// tests of this module.
///
/// For softmax logits `∂ log π(a'|s')/∂θ(s'',b) = [s'=s''] (δ_{a'b} - π(b|s''))`.
pub fn occupancy_jacobian(cmp: &Cmp, pi: &TabularPolicy) -> Result<OccupancyJacobian> {
    let sr = successor_representation(cmp, pi)?;
    let omega = occupancy(cmp, pi)?;
    Ok(jacobian_from_parts(cmp, pi, &sr, omega))
}

pub(crate) fn jacobian_from_parts(
    cmp: &Cmp,
    pi: &TabularPolicy,
    sr: &SuccessorRep,
    omega: Occupancy,
) -> OccupancyJacobian {
    let l = cmp.layout();
    let n = l.len();
    let m = &sr.matrix;
    let mut jac = DMatrix::zeros(n, n);
    for s in 0..l.n_states {
        // Σ_a' ω(s,a') M[(s,a'), ·]
        let mut weighted_row = vec![0.0; n];
        for a in 0..l.n_actions {
            let w = omega.get(s, a);
            let row = l.index(s, a);
            for (k, acc) in weighted_row.iter_mut().enumerate() {
                *acc += w * m[(row, k)];
            }
        }
        for b in 0..l.n_actions {
            let col = l.index(s, b);
            let w = omega.get(s, b);
            let p = pi.prob(s, b);
            for k in 0..n {
                jac[(k, col)] = w * m[(col, k)] - p * weighted_row[k];
            }
        }
    }
    OccupancyJacobian { matrix: jac, omega }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmp::CmpSpec;
    use crate::occupancy::flow_matrix;
    use nalgebra::DVector;

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

    fn fd_jacobian(cmp: &Cmp, pi: &TabularPolicy, h: f64) -> DMatrix<f64> {
        let theta = pi.theta();
        let (ns, na) = (pi.n_states(), pi.n_actions());
        let mut out = DMatrix::zeros(ns * na, theta.len());
        for j in 0..theta.len() {
            let mut plus = theta.clone();
            plus[j] += h;
            let mut minus = theta.clone();
            minus[j] -= h;
            let op = occupancy(cmp, &TabularPolicy::from_theta(&plus, ns, na).unwrap()).unwrap();
            let om = occupancy(cmp, &TabularPolicy::from_theta(&minus, ns, na).unwrap()).unwrap();
            out.set_column(j, &((op.values() - om.values()) / (2.0 * h)));
        }
        out
    }

    #[test]
    fn single_state_is_softmax_jacobian() {
        let cmp = Cmp::new(CmpSpec { n_states: 1, n_actions: 3, kernel: vec![vec![vec![1.0]; 3]], mu: vec![1.0], gamma: 0.8 }).unwrap();
        let pi = TabularPolicy::from_logits(DMatrix::from_row_slice(1, 3, &[0.3, -1.0, 0.7])).unwrap();
        let jac = occupancy_jacobian(&cmp, &pi).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let expected = pi.prob(0, a) * (if a == b { 1.0 } else { 0.0 } - pi.prob(0, b));
                assert!((jac.matrix[(a, b)] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn undiscounted_jacobian_has_no_dynamics() {
        let cmp = chain(0.0).with_mu(vec![0.4, 0.6]).unwrap();
        let pi = TabularPolicy::from_logits(DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 1.0, 0.0])).unwrap();
        let jac = occupancy_jacobian(&cmp, &pi).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                for t in 0..2 {
                    for b in 0..2 {
                        let expected = if s == t {
                            cmp.mu()[s] * pi.prob(s, a) * (if a == b { 1.0 } else { 0.0 } - pi.prob(s, b))
                        } else {
                            0.0
                        };
                        assert!((jac.matrix[(2 * s + a, 2 * t + b)] - expected).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn chain_jacobian_matches_finite_differences() {
        for &gamma in &[0.5, 0.9] {
            let cmp = chain(gamma);
            let pi = TabularPolicy::uniform(2, 2);
            let jac = occupancy_jacobian(&cmp, &pi).unwrap();
            let fd = fd_jacobian(&cmp, &pi, 1e-5);
            assert!((&jac.matrix - &fd).amax() < 1e-6, "gamma {gamma}");
        }
    }

    #[test]
    fn columns_are_flow_tangent() {
        let cmp = chain(0.9);
        let pi = TabularPolicy::from_logits(DMatrix::from_row_slice(2, 2, &[0.2, -0.4, 1.1, 0.3])).unwrap();
        let jac = occupancy_jacobian(&cmp, &pi).unwrap();
        let ones = DVector::from_element(4, 1.0);
        assert!((jac.matrix.tr_mul(&ones)).amax() < 1e-12);
        assert!((flow_matrix(&cmp) * &jac.matrix).amax() < 1e-12);
    }
}
