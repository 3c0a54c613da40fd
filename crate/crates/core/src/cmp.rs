//! Controlled Markov processes, tabular policies and policy mixtures.
//!
//! State-action pairs are flattened row-major: `(s, a) ↦ s * n_actions + a`.
//! Every vector over state-action pairs in this crate uses that layout.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::occupancy::Occupancy;

/// Tolerance for probability vectors at construction time.
pub const CONSTRUCTION_TOL: f64 = 1e-12;

/// Shape of the state-action index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_states: usize,
    pub n_actions: usize,
}

impl Layout {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions }
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sums a state-action vector over actions.
    pub fn state_marginal(&self, omega: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n_states, |s, _| {
            (0..self.n_actions).map(|a| omega[self.index(s, a)]).sum()
        })
    }

    /// Repeats a per-state vector across actions.
    pub fn broadcast_states(&self, per_state: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| per_state[i / self.n_actions])
    }
}

/// Unvalidated description of a controlled Markov process, as found in
/// config files. `kernel[s][a][s']` is `P(s' | s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub mu: Vec<f64>,
    pub gamma: f64,
}

impl CmpSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string())),
            _ => toml::from_str(&text).map_err(|e| Error::Config(e.to_string())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?,
            _ => toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?,
        };
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Outcome of [`validate_cmp`]: an empty list means the input is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            write!(f, "valid")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

/// Lists every violated invariant of a CMP description.
pub fn validate_cmp(spec: &CmpSpec) -> ValidationReport {
    let mut v = Vec::new();
    if spec.n_states == 0 {
        v.push("n_states must be positive".to_string());
    }
    if spec.n_actions == 0 {
        v.push("n_actions must be positive".to_string());
    }
    if !(spec.gamma >= 0.0) {
        v.push(format!("gamma must be >= 0 (got {})", spec.gamma));
    }
    if !(spec.gamma < 1.0) {
        v.push("gamma must be < 1".to_string());
    }
    if spec.kernel.len() != spec.n_states {
        v.push(format!("kernel has {} state blocks, expected {}", spec.kernel.len(), spec.n_states));
    }
    for (s, block) in spec.kernel.iter().enumerate() {
        if block.len() != spec.n_actions {
            v.push(format!("kernel block s={s} has {} actions, expected {}", block.len(), spec.n_actions));
        }
        for (a, row) in block.iter().enumerate() {
            if row.len() != spec.n_states {
                v.push(format!("row (s={s},a={a}) has length {}, expected {}", row.len(), spec.n_states));
                continue;
            }
            if let Some(bad) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                v.push(format!("row (s={s},a={a}) has invalid entry {bad}"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > CONSTRUCTION_TOL {
                v.push(format!("row (s={s},a={a}) sums to {sum}"));
            }
        }
    }
    if spec.mu.len() != spec.n_states {
        v.push(format!("mu has length {}, expected {}", spec.mu.len(), spec.n_states));
    }
    if let Some(bad) = spec.mu.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        v.push(format!("mu has invalid entry {bad}"));
    }
    let mu_sum: f64 = spec.mu.iter().sum();
    if (mu_sum - 1.0).abs() > CONSTRUCTION_TOL {
        v.push(format!("mu sums to {mu_sum}"));
    }
    ValidationReport { violations: v }
}

/// A validated finite controlled Markov process `(S, A, P, μ, γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cmp {
    layout: Layout,
    /// `P(s' | s, a)` stored at `[(s * A + a) * S + s']`.
    kernel: Vec<f64>,
    mu: DVector<f64>,
    gamma: f64,
}

impl Cmp {
    pub fn new(spec: CmpSpec) -> Result<Self> {
        let report = validate_cmp(&spec);
        if !report.is_valid() {
            return Err(Error::InvalidCmp(report.violations));
        }
        let kernel = spec.kernel.into_iter().flatten().flatten().collect();
        Ok(Self {
            layout: Layout::new(spec.n_states, spec.n_actions),
            kernel,
            mu: DVector::from_vec(spec.mu),
            gamma: spec.gamma,
        })
    }

    pub fn to_spec(&self) -> CmpSpec {
        let (ns, na) = (self.n_states(), self.n_actions());
        CmpSpec {
            n_states: ns,
            n_actions: na,
            kernel: (0..ns)
                .map(|s| (0..na).map(|a| self.kernel_row(s, a).to_vec()).collect())
                .collect(),
            mu: self.mu.iter().cloned().collect(),
            gamma: self.gamma,
        }
    }

    /// Same dynamics and initial distribution under another discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut spec = self.to_spec();
        spec.gamma = gamma;
        Self::new(spec)
    }

    pub fn with_mu(&self, mu: Vec<f64>) -> Result<Self> {
        let mut spec = self.to_spec();
        spec.mu = mu;
        Self::new(spec)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }
    pub fn n_states(&self) -> usize {
        self.layout.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.layout.n_actions
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.kernel[(s * self.n_actions() + a) * self.n_states() + next]
    }

    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions() + a) * self.n_states();
        &self.kernel[start..start + self.n_states()]
    }

    /// State-to-state transition matrix under `pi`: `P_π[s, s'] = Σ_a π(a|s) P(s'|s,a)`.
    pub fn state_transition(&self, pi: &TabularPolicy) -> DMatrix<f64> {
        let (ns, na) = (self.n_states(), self.n_actions());
        let mut m = DMatrix::zeros(ns, ns);
        for s in 0..ns {
            for a in 0..na {
                let w = pi.prob(s, a);
                for (next, p) in self.kernel_row(s, a).iter().enumerate() {
                    m[(s, next)] += w * p;
                }
            }
        }
        m
    }

    /// State-action transition matrix `P^π[(s,a), (s',a')] = P(s'|s,a) π(a'|s')`.
    pub fn state_action_transition(&self, pi: &TabularPolicy) -> DMatrix<f64> {
        let l = self.layout;
        let mut m = DMatrix::zeros(l.len(), l.len());
        for s in 0..l.n_states {
            for a in 0..l.n_actions {
                let row = l.index(s, a);
                for (next, p) in self.kernel_row(s, a).iter().enumerate() {
                    if *p == 0.0 {
                        continue;
                    }
                    for b in 0..l.n_actions {
                        m[(row, l.index(next, b))] = p * pi.prob(next, b);
                    }
                }
            }
        }
        m
    }

    pub(crate) fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        check_len(self.n_states(), pi.n_states())?;
        check_len(self.n_actions(), pi.n_actions())
    }
}

/// A stationary stochastic policy parameterized by per-state softmax logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    logits: DMatrix<f64>,
    probs: DMatrix<f64>,
}

/// Builds the softmax policy `π(a|s) ∝ exp(logits[s, a])`.
pub fn policy_from_logits(logits: DMatrix<f64>) -> Result<TabularPolicy> {
    TabularPolicy::from_logits(logits)
}

impl TabularPolicy {
    pub fn from_logits(logits: DMatrix<f64>) -> Result<Self> {
        if logits.nrows() == 0 || logits.ncols() == 0 {
            return Err(Error::InvalidPolicy("empty logit matrix".into()));
        }
        if let Some(bad) = logits.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidPolicy(format!("non-finite logit {bad}")));
        }
        let mut probs = logits.clone();
        for mut row in probs.row_iter_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|x| *x = (*x - max).exp());
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= z);
        }
        if probs.iter().any(|p| *p <= 0.0) {
            return Err(Error::InvalidPolicy(
                "logit spread too large: a probability underflowed to zero".into(),
            ));
        }
        Ok(Self { logits, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self::from_logits(DMatrix::zeros(n_states, n_actions)).expect("zero logits are valid")
    }

    /// Policy with given probabilities (strictly positive rows), logits = ln π.
    pub fn from_probs(probs: &DMatrix<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidPolicy("probabilities must be strictly positive".into()));
        }
        Self::from_logits(probs.map(f64::ln))
    }

    pub fn n_states(&self) -> usize {
        self.logits.nrows()
    }
    pub fn n_actions(&self) -> usize {
        self.logits.ncols()
    }
    pub fn logits(&self) -> &DMatrix<f64> {
        &self.logits
    }
    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }
    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    /// Logits flattened in state-action layout (the parameter vector θ).
    pub fn theta(&self) -> DVector<f64> {
        let (ns, na) = (self.n_states(), self.n_actions());
        DVector::from_fn(ns * na, |i, _| self.logits[(i / na, i % na)])
    }

    pub fn from_theta(theta: &DVector<f64>, n_states: usize, n_actions: usize) -> Result<Self> {
        check_len(n_states * n_actions, theta.len())?;
        Self::from_logits(DMatrix::from_fn(n_states, n_actions, |s, a| theta[s * n_actions + a]))
    }

    /// KL(self(·|s) ‖ other(·|s)).
    pub fn kl_at(&self, other: &TabularPolicy, s: usize) -> f64 {
        (0..self.n_actions())
            .map(|a| {
                let p = self.prob(s, a);
                p * (p.ln() - other.prob(s, a).ln())
            })
            .sum()
    }
}

/// A finite mixture of policies with label weights `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMixture {
    components: Vec<TabularPolicy>,
    weights: Vec<f64>,
}

impl PolicyMixture {
    pub fn new(components: Vec<TabularPolicy>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidPolicy("mixture needs at least one component".into()));
        }
        check_len(components.len(), weights.len())?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidPolicy("mixture weights must be finite and >= 0".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(Error::InvalidPolicy(format!("mixture weights sum to {sum}")));
        }
        let (ns, na) = (components[0].n_states(), components[0].n_actions());
        for c in &components {
            check_len(ns, c.n_states())?;
            check_len(na, c.n_actions())?;
        }
        Ok(Self { components, weights })
    }

    pub fn uniform_weights(components: Vec<TabularPolicy>) -> Result<Self> {
        let n = components.len();
        Self::new(components, vec![1.0 / n as f64; n])
    }

    pub fn components(&self) -> &[TabularPolicy] {
        &self.components
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.components.len()
    }
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Recovers the policy `π(a|s) = ω(s,a) / Σ_a' ω(s,a')` from an occupancy.
///
/// Zero action entries give zero-probability actions, which cannot be
/// represented by finite logits, so those are reported as
/// [`Error::InvalidPolicy`]; use [`conditional_probs`] for the raw matrix.
pub fn condition_occupancy(omega: &Occupancy) -> Result<TabularPolicy> {
    TabularPolicy::from_probs(&conditional_probs(omega)?)
}

/// The conditional `ω(s,a) / Σ_a' ω(s,a')` as a probability matrix.
pub fn conditional_probs(omega: &Occupancy) -> Result<DMatrix<f64>> {
    let l = omega.layout();
    let marginal = omega.state_marginal();
    let mut probs = DMatrix::zeros(l.n_states, l.n_actions);
    for s in 0..l.n_states {
        if !(marginal[s] > 0.0) {
            return Err(Error::UnreachableState { state: s });
        }
        for a in 0..l.n_actions {
            probs[(s, a)] = omega.get(s, a) / marginal[s];
        }
    }
    Ok(probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_1x1() -> CmpSpec {
        CmpSpec { n_states: 1, n_actions: 1, kernel: vec![vec![vec![1.0]]], mu: vec![1.0], gamma: 0.9 }
    }

    #[test]
    fn identity_cmp_is_valid() {
        assert!(validate_cmp(&spec_1x1()).is_valid());
        assert!(Cmp::new(spec_1x1()).is_ok());
    }

    #[test]
    fn reports_substochastic_row() {
        let spec = CmpSpec {
            n_states: 2,
            n_actions: 2,
            kernel: vec![vec![vec![1.0, 0.0], vec![0.5, 0.4]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
            mu: vec![1.0, 0.0],
            gamma: 0.5,
        };
        let report = validate_cmp(&spec);
        assert_eq!(report.violations, vec!["row (s=0,a=1) sums to 0.9".to_string()]);
        assert!(matches!(Cmp::new(spec), Err(Error::InvalidCmp(_))));
    }

    #[test]
    fn reports_gamma_one() {
        let mut spec = spec_1x1();
        spec.gamma = 1.0;
        assert_eq!(validate_cmp(&spec).violations, vec!["gamma must be < 1".to_string()]);
    }

    #[test]
    fn reports_negative_entries_and_bad_mu() {
        let spec = CmpSpec {
            n_states: 2,
            n_actions: 1,
            kernel: vec![vec![vec![1.5, -0.5]], vec![vec![0.0, 1.0]]],
            mu: vec![0.3, 0.3],
            gamma: 0.5,
        };
        let v = validate_cmp(&spec).violations;
        assert!(v.iter().any(|m| m.contains("invalid entry -0.5")));
        assert!(v.iter().any(|m| m.starts_with("mu sums to")));
    }

    #[test]
    fn zero_logits_give_uniform() {
        let pi = policy_from_logits(DMatrix::zeros(3, 2)).unwrap();
        assert!(pi.probs().iter().all(|p| (*p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn constant_rows_give_uniform() {
        let pi = policy_from_logits(DMatrix::from_row_slice(2, 2, &[7.0, 7.0, -3.25, -3.25])).unwrap();
        assert!(pi.probs().iter().all(|p| (*p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn log_three_logit() {
        let pi = policy_from_logits(DMatrix::from_row_slice(1, 2, &[3f64.ln(), 0.0])).unwrap();
        assert!((pi.prob(0, 0) - 0.75).abs() < 1e-15);
        assert!((pi.prob(0, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_logits() {
        let r = policy_from_logits(DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.0]));
        assert!(matches!(r, Err(Error::InvalidPolicy(_))));
    }

    #[test]
    fn conditions_uniform_and_chain_occupancies() {
        let l = Layout::new(2, 2);
        let uniform = Occupancy::from_values(l, DVector::from_element(4, 0.25)).unwrap();
        let pi = condition_occupancy(&uniform).unwrap();
        assert!(pi.probs().iter().all(|p| (*p - 0.5).abs() < 1e-15));

        let chain = Occupancy::from_values(l, DVector::from_vec(vec![0.375, 0.375, 0.125, 0.125])).unwrap();
        let pi = condition_occupancy(&chain).unwrap();
        assert!(pi.probs().iter().all(|p| (*p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn conditioning_with_zero_action_mass() {
        let l = Layout::new(2, 2);
        let omega = Occupancy::from_values(l, DVector::from_vec(vec![0.2, 0.0, 0.4, 0.4])).unwrap();
        let probs = conditional_probs(&omega).unwrap();
        assert_eq!((probs[(0, 0)], probs[(0, 1)]), (1.0, 0.0));
    }

    #[test]
    fn unreachable_state_is_an_error() {
        let l = Layout::new(2, 2);
        let omega = Occupancy::from_values(l, DVector::from_vec(vec![0.5, 0.5, 0.0, 0.0])).unwrap();
        assert!(matches!(condition_occupancy(&omega), Err(Error::UnreachableState { state: 1 })));
    }

    #[test]
    fn mixture_weights_validated() {
        let pi = TabularPolicy::uniform(1, 2);
        assert!(PolicyMixture::new(vec![pi.clone(), pi.clone()], vec![0.5, 0.6]).is_err());
        assert!(PolicyMixture::new(vec![pi.clone(), pi], vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn spec_round_trips_through_toml_and_json() {
        let spec = spec_1x1();
        let t = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<CmpSpec>(&t).unwrap(), spec);
        let j = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<CmpSpec>(&j).unwrap(), spec);
    }
}
