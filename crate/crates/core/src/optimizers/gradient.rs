//! Exact and sampled policy gradients of occupancy utilities.
//!
//! For a reward `r` (here the intrinsic reward `∂f/∂ω_i`), the gradient of
//! `θ ↦ ⟨r, ω(θ)⟩` at the current policy is
//! `Σ_{s,a} ω(s,a) ∇_θ log π(a|s) A(s,a)` with `A` built from `Q = M r`.
//! In softmax logits this collapses to `∂/∂θ(s,b) = ω(s,b) A(s,b)`.

use nalgebra::DVector;

use crate::cmp::{Cmp, PolicyMixture, TabularPolicy};
use crate::error::Result;
use crate::occupancy::sampling::{rng_for, Sampler};
use crate::occupancy::{advantage_for_reward, horizon_for, occupancy, Occupancy};
use crate::utilities::Utility;

/// How the expectation in the policy gradient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMode {
    Exact,
    /// Rollout estimates from `n_traj` trajectories per component.
    Sampled { n_traj: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityGradient {
    /// `∇_{θ_i} f` for each mixture component, in state-action layout.
    pub per_component: Vec<DVector<f64>>,
    /// Environment steps consumed (zero in exact mode).
    pub env_steps: u64,
}

impl UtilityGradient {
    pub fn sup_norm(&self) -> f64 {
        self.per_component.iter().map(|g| g.amax()).fold(0.0, f64::max)
    }
}

/// Exact gradient of `θ ↦ ⟨r, ω(θ)⟩`: `ω(s,b) A(s,b)`.
pub fn exact_reward_gradient(cmp: &Cmp, pi: &TabularPolicy, omega: &Occupancy, r: &DVector<f64>) -> Result<DVector<f64>> {
    let adv = advantage_for_reward(cmp, pi, r)?;
    Ok(omega.values().component_mul(&adv.a))
}

/// Gradient of `f` with respect to each component's logits.
pub fn utility_gradient(cmp: &Cmp, mixture: &PolicyMixture, f: &dyn Utility, mode: GradientMode) -> Result<UtilityGradient> {
    match mode {
        GradientMode::Exact => {
            let omegas: Vec<Occupancy> = mixture.components().iter().map(|pi| occupancy(cmp, pi)).collect::<Result<_>>()?;
            let raw: Vec<DVector<f64>> = omegas.iter().map(|o| o.values().clone()).collect();
            let per_component = mixture
                .components()
                .iter()
                .enumerate()
                .map(|(i, pi)| {
                    let r = f.differential(cmp.layout(), &raw, mixture.weights(), i)?;
                    exact_reward_gradient(cmp, pi, &omegas[i], &r)
                })
                .collect::<Result<_>>()?;
            Ok(UtilityGradient { per_component, env_steps: 0 })
        }
        GradientMode::Sampled { n_traj, seed } => {
            let batch = SampledBatch::collect(cmp, mixture.components(), n_traj, seed)?;
            let per_component = (0..mixture.len())
                .map(|i| {
                    let r = f.differential(cmp.layout(), &batch.omegas, mixture.weights(), i)?;
                    Ok(batch.reward_gradient(cmp, &mixture.components()[i], i, &r))
                })
                .collect::<Result<_>>()?;
            Ok(UtilityGradient { per_component, env_steps: batch.env_steps })
        }
    }
}

/// Smoothing mass added to empirical occupancies before they feed logarithmic
/// intrinsic rewards.
pub const EMPIRICAL_SMOOTHING: f64 = 1e-12;

/// Rollout batch shared by all sampled estimates of one iteration.
///
/// Trajectories are regenerated from their seeds instead of being stored.
pub(crate) struct SampledBatch {
    pub omegas: Vec<DVector<f64>>,
    pub env_steps: u64,
    seeds: Vec<u64>,
    n_traj: usize,
    horizon: usize,
}

pub(crate) fn component_seed(seed: u64, component: usize) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = seed ^ (component as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SampledBatch {
    pub(crate) fn collect(cmp: &Cmp, policies: &[TabularPolicy], n_traj: usize, seed: u64) -> Result<Self> {
        let horizon = horizon_for(cmp.gamma());
        let seeds: Vec<u64> = (0..policies.len()).map(|i| component_seed(seed, i)).collect();
        let n = cmp.layout().len();
        let omegas = policies
            .iter()
            .zip(&seeds)
            .map(|(pi, s)| {
                let est = crate::occupancy::sample_occupancy(cmp, pi, n_traj, horizon, *s)?;
                let smoothed = est.mean.map(|x| x + EMPIRICAL_SMOOTHING);
                let mass = smoothed.sum();
                Ok(smoothed / mass)
            })
            .collect::<Result<Vec<_>>>()?;
        debug_assert!(omegas.iter().all(|o| o.len() == n));
        Ok(Self {
            omegas,
            env_steps: (policies.len() * n_traj * horizon) as u64,
            seeds,
            n_traj,
            horizon,
        })
    }

    /// REINFORCE estimate of `Σ ω ∇log π (Q - b)` with a per-state mean
    /// return baseline, replaying component `i`'s trajectories.
    pub(crate) fn reward_gradient(&self, cmp: &Cmp, pi: &TabularPolicy, i: usize, r: &DVector<f64>) -> DVector<f64> {
        let l = cmp.layout();
        let g = cmp.gamma();
        let sampler = Sampler::new(cmp, pi);
        let mut pairs = Vec::with_capacity(self.horizon);
        let mut returns = vec![0.0; self.horizon];

        // Pass 1: per-state mean discounted-weighted return as baseline.
        let mut base_num = vec![0.0; l.n_states];
        let mut base_den = vec![0.0; l.n_states];
        let mut rng = rng_for(self.seeds[i]);
        for _ in 0..self.n_traj {
            sampler.rollout(&mut rng, self.horizon, &mut pairs);
            fill_returns(&pairs, r, g, &mut returns);
            let mut disc = 1.0;
            for (t, &idx) in pairs.iter().enumerate() {
                let s = idx / l.n_actions;
                base_num[s] += disc * returns[t];
                base_den[s] += disc;
                disc *= g;
            }
        }
        let baseline: Vec<f64> = base_num.iter().zip(&base_den).map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 }).collect();

        // Pass 2: the score-function estimate on the same trajectories.
        let mut grad = DVector::zeros(l.len());
        let mut rng = rng_for(self.seeds[i]);
        for _ in 0..self.n_traj {
            sampler.rollout(&mut rng, self.horizon, &mut pairs);
            fill_returns(&pairs, r, g, &mut returns);
            let mut disc = 1.0 - g;
            for (t, &idx) in pairs.iter().enumerate() {
                let (s, a) = (idx / l.n_actions, idx % l.n_actions);
                let w = disc * (returns[t] - baseline[s]);
                for b in 0..l.n_actions {
                    let score = if a == b { 1.0 } else { 0.0 } - pi.prob(s, b);
                    grad[l.index(s, b)] += w * score;
                }
                disc *= g;
            }
        }
        grad / self.n_traj as f64
    }
}

fn fill_returns(pairs: &[usize], r: &DVector<f64>, gamma: f64, out: &mut [f64]) {
    let mut acc = 0.0;
    for t in (0..pairs.len()).rev() {
        acc = r[pairs[t]] + gamma * acc;
        out[t] = acc;
    }
}
