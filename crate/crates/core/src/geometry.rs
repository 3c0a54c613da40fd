//! Legendre potentials on the occupancy polytope and the geometry they induce.
//!
//! A potential `φ` yields a Bregman divergence
//! `D_φ(x‖y) = φ(x) - φ(y) - ⟨∇φ(y), x - y⟩` and, pulled back through the
//! occupancy Jacobian `J = ∂ω/∂θ`, a metric `G = Jᵀ ∇²φ(ω) J` on policy
//! logits. Hessians are evaluated in ambient state-action coordinates; only
//! their restriction to flow-tangent directions is meaningful.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cmp::{Cmp, Layout, TabularPolicy};
use crate::error::{check_len, Error, Result};
use crate::numerics::xlogx;
use crate::occupancy::{occupancy_jacobian, state_occupancy, OccupancyJacobian};
use crate::utilities::Constraint;

/// Convex barrier `ℓ` applied to a constraint slack `x = -g > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    /// `ℓ(x) = -ln x`.
    NegLog,
    /// `ℓ(x) = x ln x`.
    Entropic,
}

impl BarrierKind {
    pub fn ell(self, x: f64) -> f64 {
        match self {
            BarrierKind::NegLog => -x.ln(),
            BarrierKind::Entropic => x * x.ln(),
        }
    }
    pub fn d1(self, x: f64) -> f64 {
        match self {
            BarrierKind::NegLog => -1.0 / x,
            BarrierKind::Entropic => x.ln() + 1.0,
        }
    }
    pub fn d2(self, x: f64) -> f64 {
        match self {
            BarrierKind::NegLog => 1.0 / (x * x),
            BarrierKind::Entropic => 1.0 / x,
        }
    }
}

/// A Legendre-type potential on (the interior of) the occupancy polytope.
#[derive(Debug, Clone)]
pub enum Potential {
    /// Negative conditional entropy `Σ ω(s,a) ln π_ω(a|s)`.
    Kakade,
    /// Negative joint entropy `Σ ω ln ω`.
    FisherRao,
    /// `base(ω) + β Σ_i ℓ(-g_i(ω))`, finite only where every `g_i < 0`.
    Barrier {
        base: Box<Potential>,
        constraints: Vec<Constraint>,
        ell: BarrierKind,
        beta: f64,
    },
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Kakade => write!(f, "kakade"),
            Potential::FisherRao => write!(f, "fisher_rao"),
            Potential::Barrier { base, constraints, ell, beta } => {
                write!(f, "barrier({base}, {} constraints, {ell:?}, beta={beta})", constraints.len())
            }
        }
    }
}

fn interior(omega: &DVector<f64>, what: &str) -> Result<()> {
    if let Some(bad) = omega.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::Domain(format!("{what} potential needs a strictly positive occupancy, found {bad}")));
    }
    Ok(())
}

impl Potential {
    pub fn barrier(base: Potential, constraints: Vec<Constraint>, ell: BarrierKind, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("barrier weight must be positive, got {beta}")));
        }
        if constraints.is_empty() {
            return Err(Error::Domain("barrier potential needs at least one constraint".into()));
        }
        Ok(Potential::Barrier { base: Box::new(base), constraints, ell, beta })
    }

    fn slacks(constraints: &[Constraint], layout: Layout, omega: &DVector<f64>) -> Result<Vec<f64>> {
        constraints
            .iter()
            .map(|c| {
                let x = c.slack(layout, omega)?;
                if x > 0.0 {
                    Ok(x)
                } else {
                    Err(Error::Domain(format!("barrier evaluated outside strict feasibility (slack {x:e})")))
                }
            })
            .collect()
    }

    pub fn value(&self, layout: Layout, omega: &DVector<f64>) -> Result<f64> {
        check_len(layout.len(), omega.len())?;
        match self {
            Potential::Kakade => {
                if omega.iter().any(|x| *x < 0.0) {
                    return Err(Error::Domain("kakade potential at a negative occupancy".into()));
                }
                let marg = layout.state_marginal(omega);
                Ok((0..layout.len())
                    .map(|i| {
                        let d = marg[i / layout.n_actions];
                        if omega[i] > 0.0 {
                            omega[i] * (omega[i] / d).ln()
                        } else {
                            0.0
                        }
                    })
                    .sum())
            }
            Potential::FisherRao => {
                if omega.iter().any(|x| *x < 0.0) {
                    return Err(Error::Domain("fisher_rao potential at a negative occupancy".into()));
                }
                Ok(omega.iter().map(|x| xlogx(*x)).sum())
            }
            Potential::Barrier { base, constraints, ell, beta } => {
                let slacks = Self::slacks(constraints, layout, omega)?;
                Ok(base.value(layout, omega)? + beta * slacks.iter().map(|x| ell.ell(*x)).sum::<f64>())
            }
        }
    }

    pub fn gradient(&self, layout: Layout, omega: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(layout.len(), omega.len())?;
        match self {
            Potential::Kakade => {
                interior(omega, "kakade")?;
                let marg = layout.state_marginal(omega);
                Ok(DVector::from_fn(layout.len(), |i, _| (omega[i] / marg[i / layout.n_actions]).ln()))
            }
            Potential::FisherRao => {
                interior(omega, "fisher_rao")?;
                Ok(omega.map(|x| x.ln() + 1.0))
            }
            Potential::Barrier { base, constraints, ell, beta } => {
                let slacks = Self::slacks(constraints, layout, omega)?;
                let mut grad = base.gradient(layout, omega)?;
                for (c, x) in constraints.iter().zip(slacks) {
                    grad -= c.differential(layout, omega)? * (beta * ell.d1(x));
                }
                Ok(grad)
            }
        }
    }

    pub fn hessian(&self, layout: Layout, omega: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len(layout.len(), omega.len())?;
        let n = layout.len();
        match self {
            Potential::Kakade => {
                interior(omega, "kakade")?;
                let marg = layout.state_marginal(omega);
                let na = layout.n_actions;
                Ok(DMatrix::from_fn(n, n, |i, j| {
                    if i / na != j / na {
                        0.0
                    } else if i == j {
                        1.0 / omega[i] - 1.0 / marg[i / na]
                    } else {
                        -1.0 / marg[i / na]
                    }
                }))
            }
            Potential::FisherRao => {
                interior(omega, "fisher_rao")?;
                Ok(DMatrix::from_diagonal(&omega.map(|x| 1.0 / x)))
            }
            Potential::Barrier { base, constraints, ell, beta } => {
                let slacks = Self::slacks(constraints, layout, omega)?;
                let mut h = base.hessian(layout, omega)?;
                for (c, x) in constraints.iter().zip(slacks) {
                    let dg = c.differential(layout, omega)?;
                    h += (&dg * dg.transpose()) * (beta * ell.d2(x));
                    h -= c.hessian(layout, omega)? * (beta * ell.d1(x));
                }
                Ok(h)
            }
        }
    }
}

/// `D_φ(ω‖ω_ref) = φ(ω) - φ(ω_ref) - ⟨∇φ(ω_ref), ω - ω_ref⟩`.
pub fn bregman_divergence(phi: &Potential, layout: Layout, omega: &DVector<f64>, omega_ref: &DVector<f64>) -> Result<f64> {
    check_len(layout.len(), omega_ref.len())?;
    let grad = phi.gradient(layout, omega_ref)?;
    Ok(phi.value(layout, omega)? - phi.value(layout, omega_ref)? - grad.dot(&(omega - omega_ref)))
}

/// A metric on policy logits, `G = Jᵀ ∇²φ(ω) J`.
#[derive(Debug, Clone)]
pub struct HessianMetric {
    pub matrix: DMatrix<f64>,
    pub potential: String,
}

impl HessianMetric {
    /// Largest entry of `G - Gᵀ` in absolute value.
    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.clone().symmetric_eigen().eigenvalues.min()
    }
}

pub fn hessian_metric(cmp: &Cmp, pi: &TabularPolicy, phi: &Potential) -> Result<HessianMetric> {
    let jac = occupancy_jacobian(cmp, pi)?;
    metric_from_jacobian(cmp.layout(), &jac, phi)
}

pub(crate) fn metric_from_jacobian(layout: Layout, jac: &OccupancyJacobian, phi: &Potential) -> Result<HessianMetric> {
    let h = phi.hessian(layout, jac.omega.values())?;
    let g = jac.matrix.transpose() * h * &jac.matrix;
    let sym = (&g + g.transpose()) * 0.5;
    Ok(HessianMetric { matrix: sym, potential: phi.to_string() })
}

/// State-occupancy weighted Fisher information of the softmax policy,
/// `Σ_s d(s) (diag π_s - π_s π_sᵀ)`, in logit coordinates.
pub fn weighted_fisher(cmp: &Cmp, pi: &TabularPolicy) -> Result<DMatrix<f64>> {
    let d = state_occupancy(cmp, pi)?;
    Ok(fisher_from_parts(cmp.layout(), &d, pi))
}

fn fisher_from_parts(l: Layout, d: &DVector<f64>, pi: &TabularPolicy) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(l.len(), l.len());
    for s in 0..l.n_states {
        for a in 0..l.n_actions {
            for b in 0..l.n_actions {
                let delta = if a == b { pi.prob(s, a) } else { 0.0 };
                f[(l.index(s, a), l.index(s, b))] = d[s] * (delta - pi.prob(s, a) * pi.prob(s, b));
            }
        }
    }
    f
}

/// The pulled-back metric `Jᵀ ∇²φ J` as HPG assembles it. Equal to
/// [`metric_from_jacobian`] in exact arithmetic, but the Kakade part is built
/// as the weighted Fisher information and the Fisher–Rao part skips empty
/// pairs, so the metric stays finite when occupancy entries underflow.
pub(crate) fn hpg_metric(layout: Layout, jac: &OccupancyJacobian, pi: &TabularPolicy, phi: &Potential) -> Result<DMatrix<f64>> {
    let omega = jac.omega.values();
    let n = jac.matrix.ncols();
    let g = match phi {
        Potential::Kakade => fisher_from_parts(layout, &layout.state_marginal(omega), pi),
        Potential::FisherRao => {
            let mut g = DMatrix::zeros(n, n);
            for (k, w) in omega.iter().enumerate() {
                if *w > 0.0 {
                    let row = jac.matrix.row(k);
                    g += row.transpose() * row / *w;
                }
            }
            g
        }
        Potential::Barrier { base, constraints, ell, beta } => {
            let mut g = hpg_metric(layout, jac, pi, base)?;
            let slacks = Potential::slacks(constraints, layout, omega)?;
            let mut extra = DMatrix::zeros(layout.len(), layout.len());
            for (c, x) in constraints.iter().zip(slacks) {
                let dg = c.differential(layout, omega)?;
                extra += (&dg * dg.transpose()) * (beta * ell.d2(x));
                extra -= c.hessian(layout, omega)? * (beta * ell.d1(x));
            }
            g += jac.matrix.transpose() * extra * &jac.matrix;
            g
        }
    };
    Ok((&g + g.transpose()) * 0.5)
}

/// Constrained trust-region divergence `KL̄ + β D_ℓ(B - 𝔸 ‖ B)` for surrogate
/// cost advantage `𝔸` and remaining budget `B`, where
/// `D_ℓ(B - 𝔸 ‖ B) = ℓ(B - 𝔸) - ℓ(B) + ℓ'(B) 𝔸` is the Bregman divergence of
/// the barrier. The linear term enters with `+` so the barrier part vanishes
/// to first order at `𝔸 = 0` and stays nonnegative.
pub fn ctrpo_divergence(
    surrogate_cost_advantage: f64,
    budget: f64,
    expected_kl: f64,
    beta: f64,
    ell: BarrierKind,
) -> Result<f64> {
    if !(budget > 0.0) {
        return Err(Error::Domain(format!("constraint budget exhausted (B = {budget})")));
    }
    let remaining = budget - surrogate_cost_advantage;
    if !(remaining > 0.0) {
        return Err(Error::Domain(format!("infeasible step: budget {budget} minus cost advantage {surrogate_cost_advantage} is not positive")));
    }
    if beta == 0.0 || surrogate_cost_advantage == 0.0 {
        return Ok(expected_kl);
    }
    let bregman = ell.ell(remaining) - ell.ell(budget) + ell.d1(budget) * surrogate_cost_advantage;
    Ok(expected_kl + beta * bregman)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utilities::{linear_utility, make_constraint};
    use std::sync::Arc;

    const L22: Layout = Layout { n_states: 2, n_actions: 2 };

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn fisher_rao_at_uniform() {
        let val = Potential::FisherRao.value(L22, &v(&[0.25; 4])).unwrap();
        assert!((val + 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kakade_with_uniform_conditionals() {
        let val = Potential::Kakade.value(L22, &v(&[0.1, 0.1, 0.4, 0.4])).unwrap();
        assert!((val + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn barrier_at_unit_slack_equals_base() {
        // g = ⟨0, ω⟩ - 1 so the slack is exactly 1.
        let c = make_constraint(Arc::new(linear_utility(DVector::zeros(4)).unwrap()), 1.0).unwrap();
        let b = Potential::barrier(Potential::FisherRao, vec![c], BarrierKind::NegLog, 1.0).unwrap();
        let o = v(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(b.value(L22, &o).unwrap(), Potential::FisherRao.value(L22, &o).unwrap());
    }

    #[test]
    fn barrier_outside_feasible_set_is_domain_error() {
        let c = make_constraint(Arc::new(linear_utility(DVector::from_element(4, 1.0)).unwrap()), 0.5).unwrap();
        let b = Potential::barrier(Potential::Kakade, vec![c], BarrierKind::NegLog, 1.0).unwrap();
        assert!(matches!(b.value(L22, &v(&[0.25; 4])), Err(Error::Domain(_))));
    }

    #[test]
    fn bregman_examples() {
        let l = Layout::new(1, 2);
        let p = v(&[0.75, 0.25]);
        let q = v(&[0.5, 0.5]);
        assert_eq!(bregman_divergence(&Potential::FisherRao, l, &q, &q).unwrap(), 0.0);
        let kl = bregman_divergence(&Potential::FisherRao, l, &p, &q).unwrap();
        let direct = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((kl - direct).abs() < 1e-15);
        assert!((kl - 0.130_812_035_941_137_8).abs() < 1e-12);
        assert!((kl * crate::BITS_PER_NAT - 0.1887).abs() < 1e-4);
    }

    #[test]
    fn ctrpo_examples() {
        assert_eq!(ctrpo_divergence(0.0, 1.0, 0.3, 1.0, BarrierKind::NegLog).unwrap(), 0.3);
        assert_eq!(ctrpo_divergence(0.4, 1.0, 0.3, 0.0, BarrierKind::NegLog).unwrap(), 0.3);
        let d = ctrpo_divergence(0.5, 1.0, 0.0, 1.0, BarrierKind::NegLog).unwrap();
        // ℓ(x) - ℓ(y) - ℓ'(y)(x - y) at x = 0.5, y = 1 with ℓ'(1) = -1.
        let slope = -1.0;
        let direct = -(0.5f64).ln() - 0.0 - slope * (0.5 - 1.0);
        assert!((d - direct).abs() < 1e-15);
        assert!((d - 0.1931).abs() < 1e-4);
        assert!(ctrpo_divergence(1.0, 1.0, 0.0, 1.0, BarrierKind::NegLog).is_err());
        assert!(ctrpo_divergence(0.0, 0.0, 0.0, 1.0, BarrierKind::NegLog).is_err());
    }

    #[test]
    fn barrier_derivatives() {
        for kind in [BarrierKind::NegLog, BarrierKind::Entropic] {
            let x = 0.7;
            let h = 1e-6;
            let d1 = (kind.ell(x + h) - kind.ell(x - h)) / (2.0 * h);
            let d2 = (kind.d1(x + h) - kind.d1(x - h)) / (2.0 * h);
            assert!((d1 - kind.d1(x)).abs() < 1e-8);
            assert!((d2 - kind.d2(x)).abs() < 1e-6);
        }
    }
}
