//! Differentiable utilities of (mixtures of) occupancies.
//!
//! Values are computed in nats; entropic utilities report bits through
//! [`Unit::to_report`]. The differential of a utility at the current
//! occupancy is the intrinsic reward of the locally linear MDP. Differentials
//! are only identified up to directions normal to the flow polytope.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cmp::Layout;
use crate::error::{check_len, Error, Result};
use crate::geometry::Potential;
use crate::numerics::{clamped_ln, xlogx, LOG_FLOOR};
use crate::occupancy::Occupancy;
use crate::BITS_PER_NAT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    /// Information quantities, computed in nats and reported in bits.
    Nats,
    /// Anything else, reported unchanged.
    Raw,
}

impl Unit {
    pub fn to_report(self, value: f64) -> f64 {
        match self {
            Unit::Nats => value * BITS_PER_NAT,
            Unit::Raw => value,
        }
    }

    pub fn from_report(self, value: f64) -> f64 {
        match self {
            Unit::Nats => value / BITS_PER_NAT,
            Unit::Raw => value,
        }
    }
}

/// A scalar differentiable functional of a mixture of occupancies.
///
/// `omegas` has one entry per mixture component and `weights` holds the label
/// distribution `z`. Single-occupancy utilities have arity 1 and expect
/// exactly one component.
pub trait Utility: fmt::Debug + Send + Sync {
    fn name(&self) -> String;
    /// `None` means any number of components.
    fn arity(&self) -> Option<usize>;
    fn unit(&self) -> Unit;
    fn value(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64]) -> Result<f64>;
    /// `∂f/∂ω_component` over state-action pairs.
    fn differential(
        &self,
        layout: Layout,
        omegas: &[DVector<f64>],
        weights: &[f64],
        component: usize,
    ) -> Result<DVector<f64>>;
    /// Diagonal block `∂²f/∂ω_component²`.
    fn hessian(
        &self,
        layout: Layout,
        omegas: &[DVector<f64>],
        weights: &[f64],
        component: usize,
    ) -> Result<DMatrix<f64>>;

    fn value_single(&self, layout: Layout, omega: &DVector<f64>) -> Result<f64> {
        self.value(layout, std::slice::from_ref(omega), &[1.0])
    }
    fn differential_single(&self, layout: Layout, omega: &DVector<f64>) -> Result<DVector<f64>> {
        self.differential(layout, std::slice::from_ref(omega), &[1.0], 0)
    }
    fn hessian_single(&self, layout: Layout, omega: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.hessian(layout, std::slice::from_ref(omega), &[1.0], 0)
    }
}

fn check_inputs(arity: Option<usize>, layout: Layout, omegas: &[DVector<f64>], weights: &[f64]) -> Result<()> {
    if let Some(n) = arity {
        check_len(n, omegas.len())?;
    }
    check_len(omegas.len(), weights.len())?;
    for o in omegas {
        check_len(layout.len(), o.len())?;
    }
    Ok(())
}

fn check_component(omegas: &[DVector<f64>], component: usize) -> Result<()> {
    if component >= omegas.len() {
        return Err(Error::DimensionMismatch { expected: omegas.len(), got: component + 1 });
    }
    Ok(())
}

/// `f(ω) = ⟨r, ω⟩`.
#[derive(Debug, Clone)]
pub struct LinearUtility {
    pub reward: DVector<f64>,
}

pub fn linear_utility(reward: DVector<f64>) -> Result<LinearUtility> {
    if reward.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("reward has non-finite entries".into()));
    }
    Ok(LinearUtility { reward })
}

impl Utility for LinearUtility {
    fn name(&self) -> String {
        "linear".into()
    }
    fn arity(&self) -> Option<usize> {
        Some(1)
    }
    fn unit(&self) -> Unit {
        Unit::Raw
    }
    fn value(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64]) -> Result<f64> {
        check_inputs(self.arity(), layout, omegas, weights)?;
        check_len(layout.len(), self.reward.len())?;
        Ok(self.reward.dot(&omegas[0]))
    }
    fn differential(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64], c: usize) -> Result<DVector<f64>> {
        check_inputs(self.arity(), layout, omegas, weights)?;
        check_component(omegas, c)?;
        check_len(layout.len(), self.reward.len())?;
        Ok(self.reward.clone())
    }
    fn hessian(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64], c: usize) -> Result<DMatrix<f64>> {
        check_inputs(self.arity(), layout, omegas, weights)?;
        check_component(omegas, c)?;
        Ok(DMatrix::zeros(layout.len(), layout.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// Entropy of the state-action occupancy.
    StateAction,
    /// Entropy of the state marginal.
    State,
}

/// Shannon entropy of the occupancy or of its state marginal.
#[derive(Debug, Clone)]
pub struct EntropyUtility {
    pub mode: EntropyMode,
}

pub fn entropy_utility(mode: EntropyMode) -> EntropyUtility {
    EntropyUtility { mode }
}

fn check_interior(v: &DVector<f64>, what: &str) -> Result<()> {
    if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Domain(format!("{what}: entry {bad} outside the simplex")));
    }
    Ok(())
}

impl EntropyUtility {
    fn outcomes(&self, layout: Layout, omega: &DVector<f64>) -> DVector<f64> {
        match self.mode {
            EntropyMode::StateAction => omega.clone(),
            EntropyMode::State => layout.state_marginal(omega),
        }
    }

    fn lift(&self, layout: Layout, per_outcome: DVector<f64>) -> DVector<f64> {
        match self.mode {
            EntropyMode::StateAction => per_outcome,
            EntropyMode::State => layout.broadcast_states(&per_outcome),
        }
    }
}

impl Utility for EntropyUtility {
    fn name(&self) -> String {
        match self.mode {
            EntropyMode::StateAction => "entropy_state_action".into(),
            EntropyMode::State => "entropy_state".into(),
        }
    }
    fn arity(&self) -> Option<usize> {
        Some(1)
    }
    fn unit(&self) -> Unit {
        Unit::Nats
    }
    fn value(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64]) -> Result<f64> {
        check_inputs(self.arity(), layout, omegas, weights)?;
        check_interior(&omegas[0], "entropy")?;
        Ok(-self.outcomes(layout, &omegas[0]).iter().map(|p| xlogx(*p)).sum::<f64>())
    }
    fn differential(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64], c: usize) -> Result<DVector<f64>> {
        check_inputs(self.arity(), layout, omegas, weights)?;
        check_component(omegas, c)?;
        check_interior(&omegas[0], "entropy")?;
        let p = self.outcomes(layout, &omegas[0]);
        Ok(self.lift(layout, p.map(|x| -(clamped_ln(x, "entropy differential") + 1.0))))
    }
    fn hessian(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64], c: usize) -> Result<DMatrix<f64>> {
        check_inputs(self.arity(), layout, omegas, weights)?;
        check_component(omegas, c)?;
        let p = self.outcomes(layout, &omegas[0]);
        let n = layout.len();
        let na = layout.n_actions;
        Ok(match self.mode {
            EntropyMode::StateAction => DMatrix::from_diagonal(&p.map(|x| -1.0 / x.max(LOG_FLOOR))),
            EntropyMode::State => DMatrix::from_fn(n, n, |i, j| {
                if i / na == j / na {
                    -1.0 / p[i / na].max(LOG_FLOOR)
                } else {
                    0.0
                }
            }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    State,
    StateAction,
}

/// Mutual information `I(z; X)` between the mixture label and the visited
/// state (or state-action pair), from the exact joint `p(i, x) = z_i ω_i(x)`.
#[derive(Debug, Clone)]
pub struct MixtureMutualInformation {
    pub label_space: LabelSpace,
}

pub fn mixture_mutual_information(label_space: LabelSpace) -> MixtureMutualInformation {
    MixtureMutualInformation { label_space }
}

impl MixtureMutualInformation {
    fn outcomes(&self, layout: Layout, omega: &DVector<f64>) -> DVector<f64> {
        match self.label_space {
            LabelSpace::StateAction => omega.clone(),
            LabelSpace::State => layout.state_marginal(omega),
        }
    }

    fn lift(&self, layout: Layout, v: DVector<f64>) -> DVector<f64> {
        match self.label_space {
            LabelSpace::StateAction => v,
            LabelSpace::State => layout.broadcast_states(&v),
        }
    }

    fn marginals(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64]) -> (Vec<DVector<f64>>, DVector<f64>) {
        let per: Vec<DVector<f64>> = omegas.iter().map(|o| self.outcomes(layout, o)).collect();
        let mut mean = DVector::zeros(per[0].len());
        for (p, z) in per.iter().zip(weights) {
            mean += p * *z;
        }
        (per, mean)
    }

    fn check(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64]) -> Result<()> {
        check_inputs(None, layout, omegas, weights)?;
        if omegas.is_empty() {
            return Err(Error::Domain("mixture mutual information needs at least one component".into()));
        }
        if omegas.len() == 1 {
            log::warn!("mixture mutual information of a single component is identically zero");
        }
        for o in omegas {
            check_interior(o, "mixture mutual information")?;
        }
        Ok(())
    }
}

impl Utility for MixtureMutualInformation {
    fn name(&self) -> String {
        match self.label_space {
            LabelSpace::State => "mixture_mi_state".into(),
            LabelSpace::StateAction => "mixture_mi_state_action".into(),
        }
    }
    fn arity(&self) -> Option<usize> {
        None
    }
    fn unit(&self) -> Unit {
        Unit::Nats
    }
    fn value(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64]) -> Result<f64> {
        self.check(layout, omegas, weights)?;
        let (per, mean) = self.marginals(layout, omegas, weights);
        let mut mi = 0.0;
        for (p, z) in per.iter().zip(weights) {
            for (x, m) in p.iter().zip(mean.iter()) {
                if *x > 0.0 && *z > 0.0 {
                    mi += z * x * (x / m).ln();
                }
            }
        }
        Ok(mi)
    }
    /// `z_i ln(ω_i(x) / ω̄(x)) = z_i [ln p(i|x) - ln z_i]`.
    fn differential(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64], c: usize) -> Result<DVector<f64>> {
        self.check(layout, omegas, weights)?;
        check_component(omegas, c)?;
        let (per, mean) = self.marginals(layout, omegas, weights);
        let z = weights[c];
        let d = per[c].zip_map(&mean, |x, m| {
            z * (clamped_ln(x, "mutual information") - clamped_ln(m, "mutual information"))
        });
        Ok(self.lift(layout, d))
    }
    fn hessian(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64], c: usize) -> Result<DMatrix<f64>> {
        self.check(layout, omegas, weights)?;
        check_component(omegas, c)?;
        let (per, mean) = self.marginals(layout, omegas, weights);
        let z = weights[c];
        let diag = per[c].zip_map(&mean, |x, m| z / x.max(LOG_FLOOR) - z * z / m.max(LOG_FLOOR));
        let n = layout.len();
        let na = layout.n_actions;
        Ok(match self.label_space {
            LabelSpace::StateAction => DMatrix::from_diagonal(&diag),
            LabelSpace::State => DMatrix::from_fn(n, n, |i, j| if i / na == j / na { diag[i / na] } else { 0.0 }),
        })
    }
}

/// Jensen–Shannon divergence `½KL(ω‖m) + ½KL(ω_E‖m)` to a fixed reference
/// occupancy, `m = (ω + ω_E)/2`.
#[derive(Debug, Clone)]
pub struct JsToReference {
    pub reference: DVector<f64>,
}

pub fn js_to_reference(reference: &Occupancy) -> JsToReference {
    JsToReference { reference: reference.values().clone() }
}

impl Utility for JsToReference {
    fn name(&self) -> String {
        "js_to_reference".into()
    }
    fn arity(&self) -> Option<usize> {
        Some(1)
    }
    fn unit(&self) -> Unit {
        Unit::Nats
    }
    fn value(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64]) -> Result<f64> {
        check_inputs(self.arity(), layout, omegas, weights)?;
        check_len(layout.len(), self.reference.len())?;
        check_interior(&omegas[0], "js_to_reference")?;
        let mut js = 0.0;
        for (p, q) in omegas[0].iter().zip(self.reference.iter()) {
            let m = 0.5 * (p + q);
            if *p > 0.0 {
                js += 0.5 * p * (p / m).ln();
            }
            if *q > 0.0 {
                js += 0.5 * q * (q / m).ln();
            }
        }
        Ok(js.max(0.0))
    }
    /// `½ ln(ω / m)`.
    fn differential(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64], c: usize) -> Result<DVector<f64>> {
        check_inputs(self.arity(), layout, omegas, weights)?;
        check_component(omegas, c)?;
        check_interior(&omegas[0], "js_to_reference")?;
        Ok(omegas[0].zip_map(&self.reference, |p, q| {
            let m = 0.5 * (p + q);
            if p <= 0.0 {
                // The one-sided derivative diverges; clamp like the entropies.
                0.5 * (clamped_ln(p, "js differential") - clamped_ln(m, "js differential"))
            } else {
                0.5 * (p / m).ln()
            }
        }))
    }
    /// Diagonal `½ (1/ω - 1/(ω + ω_E))`.
    fn hessian(&self, layout: Layout, omegas: &[DVector<f64>], weights: &[f64], c: usize) -> Result<DMatrix<f64>> {
        check_inputs(self.arity(), layout, omegas, weights)?;
        check_component(omegas, c)?;
        let d = omegas[0].zip_map(&self.reference, |p, q| 0.5 * (1.0 / p.max(LOG_FLOOR) - 1.0 / (p + q).max(LOG_FLOOR)));
        Ok(DMatrix::from_diagonal(&d))
    }
}

/// Jensen gap `Σ_i z_i φ(ω_i) - φ(Σ_i z_i ω_i)` of a mixture.
pub fn dispersion(potential: &Potential, layout: Layout, omegas: &[DVector<f64>], weights: &[f64]) -> Result<f64> {
    check_inputs(None, layout, omegas, weights)?;
    if omegas.is_empty() {
        return Err(Error::Domain("dispersion of an empty mixture".into()));
    }
    let mut mean = DVector::zeros(layout.len());
    let mut avg = 0.0;
    for (o, z) in omegas.iter().zip(weights) {
        mean += o * *z;
        avg += z * potential.value(layout, o)?;
    }
    Ok(avg - potential.value(layout, &mean)?)
}

/// `g(ω) = base(ω_component) - threshold ≤ 0`. The threshold is stored in
/// the base utility's internal unit (nats for information quantities).
#[derive(Debug, Clone)]
pub struct Constraint {
    pub base: Arc<dyn Utility>,
    pub threshold: f64,
    /// Mixture component the constraint reads.
    pub component: usize,
}

/// Builds `g = base - threshold` on component 0; `threshold` is in the
/// base's reporting unit (bits for information quantities).
pub fn make_constraint(base: Arc<dyn Utility>, threshold: f64) -> Result<Constraint> {
    if !threshold.is_finite() {
        return Err(Error::Domain(format!("constraint threshold {threshold} is not finite")));
    }
    if base.arity() != Some(1) {
        return Err(Error::Domain(format!("constraint base {} must read a single occupancy", base.name())));
    }
    let threshold = base.unit().from_report(threshold);
    Ok(Constraint { base, threshold, component: 0 })
}

impl Constraint {
    pub fn on_component(mut self, component: usize) -> Self {
        self.component = component;
        self
    }

    pub fn unit(&self) -> Unit {
        self.base.unit()
    }

    /// `g(ω)` for a single occupancy.
    pub fn value(&self, layout: Layout, omega: &DVector<f64>) -> Result<f64> {
        Ok(self.base.value_single(layout, omega)? - self.threshold)
    }

    pub fn slack(&self, layout: Layout, omega: &DVector<f64>) -> Result<f64> {
        Ok(-self.value(layout, omega)?)
    }

    pub fn differential(&self, layout: Layout, omega: &DVector<f64>) -> Result<DVector<f64>> {
        self.base.differential_single(layout, omega)
    }

    pub fn hessian(&self, layout: Layout, omega: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.base.hessian_single(layout, omega)
    }

    /// `g` evaluated on the constrained component of a mixture.
    pub fn value_in(&self, layout: Layout, omegas: &[DVector<f64>]) -> Result<f64> {
        check_component(omegas, self.component)?;
        self.value(layout, &omegas[self.component])
    }
}
