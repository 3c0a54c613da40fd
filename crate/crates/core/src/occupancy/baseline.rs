use nalgebra::DVector;

use crate::cmp::Cmp;
use crate::error::{check_len, Result};

/// Sup-norm tolerance of the value-iteration fixed point.
pub const VI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 1_000_000;

/// Optimum of the linear MDP `max ⟨r, ω⟩` over the occupancy polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOptimum {
    /// `(1-γ) Σ_s μ(s) V*(s)`, directly comparable with `⟨r, ω⟩`.
    pub value: f64,
    /// Greedy deterministic action per state, ties to the lowest index.
    pub policy: Vec<usize>,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

/// Solves the linear MDP for reward `r` by value iteration.
pub fn solve_linear_baseline(cmp: &Cmp, r: &DVector<f64>) -> Result<LinearOptimum> {
    let l = cmp.layout();
    check_len(l.len(), r.len())?;
    let g = cmp.gamma();
    let mut v = DVector::zeros(l.n_states);
    let mut q = DVector::zeros(l.len());
    for _ in 0..MAX_SWEEPS {
        for s in 0..l.n_states {
            for a in 0..l.n_actions {
                let i = l.index(s, a);
                q[i] = r[i] + g * cmp.kernel_row(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum::<f64>();
            }
        }
        let next = DVector::from_fn(l.n_states, |s, _| {
            (0..l.n_actions).map(|a| q[l.index(s, a)]).fold(f64::NEG_INFINITY, f64::max)
        });
        let delta = (&next - &v).amax();
        v = next;
        if delta <= VI_TOL * (1.0 - g).max(1e-3) {
            break;
        }
    }
    for s in 0..l.n_states {
        for a in 0..l.n_actions {
            let i = l.index(s, a);
            q[i] = r[i] + g * cmp.kernel_row(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum::<f64>();
        }
    }
    let policy = (0..l.n_states)
        .map(|s| {
            let mut best = 0;
            for a in 1..l.n_actions {
                if q[l.index(s, a)] > q[l.index(s, best)] + VI_TOL {
                    best = a;
                }
            }
            best
        })
        .collect();
    let value = (1.0 - g) * cmp.mu().dot(&v);
    Ok(LinearOptimum { value, policy, q, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmp::CmpSpec;

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
    fn zero_reward_ties_to_first_action() {
        let opt = solve_linear_baseline(&chain(0.5), &DVector::zeros(4)).unwrap();
        assert_eq!(opt.value, 0.0);
        assert_eq!(opt.policy, vec![0, 0]);
    }

    #[test]
    fn bandit_picks_argmax() {
        let cmp = Cmp::new(CmpSpec { n_states: 1, n_actions: 3, kernel: vec![vec![vec![1.0]; 3]], mu: vec![1.0], gamma: 0.9 }).unwrap();
        let opt = solve_linear_baseline(&cmp, &DVector::from_vec(vec![0.1, 0.7, 0.3])).unwrap();
        assert_eq!(opt.policy, vec![1]);
        assert!((opt.value - 0.7).abs() < 1e-10);
    }

    /// Exhaustive enumeration of the four deterministic chain policies.
    #[test]
    fn chain_indicator_reward_stays_home() {
        let cmp = chain(0.5);
        let r = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        let opt = solve_linear_baseline(&cmp, &r).unwrap();
        let mut best = f64::NEG_INFINITY;
        for a0 in 0..2 {
            for a1 in 0..2 {
                // Deterministic evaluation by iterating the chain.
                let (mut s, mut disc, mut ret) = (0usize, 1.0, 0.0);
                for _ in 0..200 {
                    let a = if s == 0 { a0 } else { a1 };
                    ret += disc * r[2 * s + a];
                    disc *= 0.5;
                    s = if a == 0 { s } else { 1 - s };
                }
                best = f64::max(best, 0.5 * ret);
            }
        }
        assert!((best - 1.0).abs() < 1e-12);
        assert!((opt.value - best).abs() < 1e-10);
        assert_eq!(opt.policy[0], 0);
    }
}
