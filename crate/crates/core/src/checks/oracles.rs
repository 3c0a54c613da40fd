//! Independent reference computations. None of these reuse the solvers
//! they are checked against.

use nalgebra::{DMatrix, DVector};

use crate::cmp::{Cmp, TabularPolicy};
use crate::occupancy::occupancy;

/// `P^π[(s,a),(s',a')] = P(s'|s,a) π(a'|s')`, assembled entry by entry.
pub fn pair_transition(cmp: &Cmp, pi: &TabularPolicy) -> DMatrix<f64> {
    let (ns, na) = (cmp.n_states(), cmp.n_actions());
    DMatrix::from_fn(ns * na, ns * na, |i, j| cmp.p(i / na, i % na, j / na) * pi.prob(j / na, j % na))
}

/// `Σ_{t ≤ terms} (γ P^π)^t`.
pub fn neumann_series(cmp: &Cmp, pi: &TabularPolicy, terms: usize) -> DMatrix<f64> {
    let n = cmp.n_states() * cmp.n_actions();
    let step = pair_transition(cmp, pi) * cmp.gamma();
    let mut acc = DMatrix::identity(n, n);
    let mut power = DMatrix::identity(n, n);
    for _ in 0..terms {
        power = &power * &step;
        acc += &power;
    }
    acc
}

/// State occupancy `d = (1-γ) (I - γ P_πᵀ)^{-1} μ` by fixed-point iteration
/// `d ← (1-γ) μ + γ P_πᵀ d` until the update stalls.
pub fn state_occupancy_iterative(cmp: &Cmp, pi: &TabularPolicy) -> DVector<f64> {
    let (ns, na) = (cmp.n_states(), cmp.n_actions());
    let g = cmp.gamma();
    let mu = cmp.mu().clone();
    let mut d = mu.clone();
    for _ in 0..200_000 {
        let mut next = &mu * (1.0 - g);
        for s in 0..ns {
            for a in 0..na {
                let w = g * d[s] * pi.prob(s, a);
                for t in 0..ns {
                    next[t] += w * cmp.p(s, a, t);
                }
            }
        }
        let delta = (&next - &d).amax();
        d = next;
        if delta < 1e-15 {
            break;
        }
    }
    d
}

/// Central finite differences of the occupancy with respect to the logits.
pub fn fd_occupancy_jacobian(cmp: &Cmp, pi: &TabularPolicy, h: f64) -> DMatrix<f64> {
    let (ns, na) = (cmp.n_states(), cmp.n_actions());
    let theta = pi.theta();
    let n = theta.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut plus = theta.clone();
        plus[j] += h;
        let mut minus = theta.clone();
        minus[j] -= h;
        let wp = occupancy(cmp, &TabularPolicy::from_theta(&plus, ns, na).unwrap()).unwrap();
        let wm = occupancy(cmp, &TabularPolicy::from_theta(&minus, ns, na).unwrap()).unwrap();
        jac.set_column(j, &((wp.values() - wm.values()) / (2.0 * h)));
    }
    jac
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let mut plus = x.clone();
        plus[j] += h;
        let mut minus = x.clone();
        minus[j] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

/// Central differences of `f` along each column of `basis`.
pub fn fd_directional(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, basis: &DMatrix<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(basis.ncols(), |j, _| {
        let v = basis.column(j);
        (f(&(x + v * h)) - f(&(x - v * h))) / (2.0 * h)
    })
}

/// `I(label; x)` in nats from the explicit joint `p(i, x) = z_i ω_i(x)`.
pub fn brute_force_mi(omegas: &[DVector<f64>], weights: &[f64]) -> f64 {
    let n = omegas[0].len();
    let mut px = vec![0.0; n];
    for (o, z) in omegas.iter().zip(weights) {
        for x in 0..n {
            px[x] += z * o[x];
        }
    }
    let mut mi = 0.0;
    for (o, z) in omegas.iter().zip(weights) {
        for x in 0..n {
            let joint = z * o[x];
            if joint > 0.0 {
                mi += joint * (joint / (z * px[x])).ln();
            }
        }
    }
    mi
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

/// `Σ_s d(s) (diag π_s - π_s π_sᵀ)` from an independently computed state
/// occupancy.
pub fn fisher_assembly(cmp: &Cmp, pi: &TabularPolicy) -> DMatrix<f64> {
    let (ns, na) = (cmp.n_states(), cmp.n_actions());
    let d = state_occupancy_iterative(cmp, pi);
    let mut f = DMatrix::zeros(ns * na, ns * na);
    for s in 0..ns {
        let p: Vec<f64> = (0..na).map(|a| pi.prob(s, a)).collect();
        for a in 0..na {
            for b in 0..na {
                let block = if a == b { p[a] - p[a] * p[b] } else { -p[a] * p[b] };
                f[(s * na + a, s * na + b)] = d[s] * block;
            }
        }
    }
    f
}

/// Moore–Penrose pseudo-inverse applied to `b`, with singular values below
/// `rcond · σ_max` dropped.
pub fn pinv_apply(m: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let smax = svd.singular_values.max();
    let mut out = DVector::zeros(m.ncols());
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > rcond * smax {
            let coeff = u.column(k).dot(b) / s;
            out += vt.row(k).transpose() * coeff;
        }
    }
    out
}

/// Closed-form state occupancy of the stay/switch chain with `μ = (1, 0)`,
/// for `p_s = π(stay | s)`.
pub fn chain_state_occupancy(gamma: f64, p0: f64, p1: f64) -> (f64, f64) {
    // d0 = (1-γ) + γ (p0 d0 + (1-p1) d1), d1 = γ ((1-p0) d0 + p1 d1).
    let a = 1.0 - gamma * p0;
    let b = -gamma * (1.0 - p1);
    let c = -gamma * (1.0 - p0);
    let e = 1.0 - gamma * p1;
    let det = a * e - b * c;
    let d0 = (1.0 - gamma) * e / det;
    let d1 = -(1.0 - gamma) * c / det;
    (d0, d1)
}

fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.log2()).sum::<f64>()
}

/// State-action entropy (bits) of the chain at `(p0, p1)`.
pub fn chain_entropy_bits(gamma: f64, p0: f64, p1: f64) -> f64 {
    let (d0, d1) = chain_state_occupancy(gamma, p0, p1);
    entropy_bits(&[d0 * p0, d0 * (1.0 - p0), d1 * p1, d1 * (1.0 - p1)])
}

/// Maximum of the chain's state-action entropy over a grid on
/// `[0,1]²`, refined around the best cell `rounds` times.
pub fn chain_entropy_grid_max(gamma: f64, n: usize, rounds: usize) -> (f64, f64, f64) {
    let (mut lo0, mut hi0, mut lo1, mut hi1) = (0.0, 1.0, 0.0, 1.0);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for _ in 0..=rounds {
        for i in 0..=n {
            for j in 0..=n {
                let p0 = lo0 + (hi0 - lo0) * i as f64 / n as f64;
                let p1 = lo1 + (hi1 - lo1) * j as f64 / n as f64;
                let h = chain_entropy_bits(gamma, p0, p1);
                if h > best.0 {
                    best = (h, p0, p1);
                }
            }
        }
        let w0 = 2.0 * (hi0 - lo0) / n as f64;
        let w1 = 2.0 * (hi1 - lo1) / n as f64;
        lo0 = (best.1 - w0).max(0.0);
        hi0 = (best.1 + w0).min(1.0);
        lo1 = (best.2 - w1).max(0.0);
        hi1 = (best.2 + w1).min(1.0);
    }
    best
}

/// Best `(1-γ) μᵀ V^π` over all deterministic policies, by enumeration and
/// exact policy evaluation.
pub fn enumerate_deterministic(cmp: &Cmp, r: &DVector<f64>) -> (f64, Vec<usize>) {
    let (ns, na) = (cmp.n_states(), cmp.n_actions());
    let g = cmp.gamma();
    let total = na.pow(ns as u32);
    let mut best = (f64::NEG_INFINITY, vec![]);
    for code in 0..total {
        let mut c = code;
        let actions: Vec<usize> = (0..ns)
            .map(|_| {
                let a = c % na;
                c /= na;
                a
            })
            .collect();
        let mut sys = DMatrix::identity(ns, ns);
        let mut rhs = DVector::zeros(ns);
        for s in 0..ns {
            rhs[s] = r[s * na + actions[s]];
            for t in 0..ns {
                sys[(s, t)] -= g * cmp.p(s, actions[s], t);
            }
        }
        let v = sys.lu().solve(&rhs).expect("policy evaluation is nonsingular for γ < 1");
        let value = (1.0 - g) * cmp.mu().dot(&v);
        if value > best.0 + 1e-12 {
            best = (value, actions);
        }
    }
    best
}

/// `‖a - b‖_∞ / max(‖b‖_∞, floor)`.
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).amax() / b.amax().max(floor)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).amax() / b.amax().max(floor)
}
