//! Monte-Carlo occupancy estimates from truncated discounted rollouts.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmp::{Cmp, Layout, TabularPolicy};
use crate::error::{check_len, Error, Result};

/// Rollouts are truncated once `γ^H` drops to this level.
pub const TRUNCATION_TOL: f64 = 1e-8;

/// Smallest horizon `H ≥ 1` with `γ^H ≤ TRUNCATION_TOL`.
pub fn horizon_for(gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let h = (TRUNCATION_TOL.ln() / gamma.ln()).ceil() as usize;
    let mut h = h.max(1);
    // Guard against ceil landing one short through rounding.
    while gamma.powi(h as i32) > TRUNCATION_TOL {
        h += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledOccupancy {
    pub mean: DVector<f64>,
    /// Per-entry standard error of `mean`.
    pub std_err: DVector<f64>,
    pub horizon: usize,
    /// Upper bound `γ^H` on the mass lost to truncation.
    pub truncation_bias: f64,
    pub env_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    /// Bound on the truncation bias, `γ^H · sup|f|`.
    pub truncation_bias: f64,
}

/// Cumulative tables for fast categorical draws from a policy and kernel.
pub(crate) struct Sampler<'a> {
    cmp: &'a Cmp,
    mu_cdf: Vec<f64>,
    pi_cdf: Vec<Vec<f64>>,
    kernel_cdf: Vec<Vec<f64>>,
}

fn cdf(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], u: f64) -> usize {
    let u = u * cdf[cdf.len() - 1];
    cdf.iter().position(|c| u < *c).unwrap_or(cdf.len() - 1)
}

impl<'a> Sampler<'a> {
    pub(crate) fn new(cmp: &'a Cmp, pi: &TabularPolicy) -> Self {
        let l = cmp.layout();
        Self {
            cmp,
            mu_cdf: cdf(cmp.mu().iter().cloned()),
            pi_cdf: (0..l.n_states).map(|s| cdf((0..l.n_actions).map(|a| pi.prob(s, a)))).collect(),
            kernel_cdf: (0..l.n_states)
                .flat_map(|s| (0..l.n_actions).map(move |a| (s, a)))
                .map(|(s, a)| cdf(cmp.kernel_row(s, a).iter().cloned()))
                .collect(),
        }
    }

    /// Fills `pairs` with the flattened state-action indices of one
    /// trajectory of length `horizon`.
    pub(crate) fn rollout(&self, rng: &mut ChaCha8Rng, horizon: usize, pairs: &mut Vec<usize>) {
        let l = self.cmp.layout();
        pairs.clear();
        let mut s = draw(&self.mu_cdf, rng.random());
        for t in 0..horizon {
            let a = draw(&self.pi_cdf[s], rng.random());
            let idx = l.index(s, a);
            pairs.push(idx);
            if t + 1 < horizon {
                s = draw(&self.kernel_cdf[idx], rng.random());
            }
        }
    }
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_horizon(gamma: f64, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    let bias = if gamma == 0.0 { 0.0 } else { gamma.powi(horizon as i32) };
    if bias > TRUNCATION_TOL {
        return Err(Error::Domain(format!(
            "horizon {horizon} leaves truncation mass {bias:e} > {TRUNCATION_TOL:e}; use at least {}",
            horizon_for(gamma)
        )));
    }
    Ok(bias)
}

/// Estimates `ω` as `(1-γ)` times the average discounted visit counts over
/// `n_traj` rollouts. Deterministic for a given seed.
pub fn sample_occupancy(
    cmp: &Cmp,
    pi: &TabularPolicy,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<SampledOccupancy> {
    cmp.check_policy(pi)?;
    let bias = check_horizon(cmp.gamma(), horizon)?;
    if n_traj == 0 {
        return Err(Error::Domain("need at least one trajectory".into()));
    }
    let l: Layout = cmp.layout();
    let g = cmp.gamma();
    let sampler = Sampler::new(cmp, pi);
    let mut rng = rng_for(seed);
    // Welford accumulation keeps the variance of near-constant entries exact.
    let mut mean: DVector<f64> = DVector::zeros(l.len());
    let mut m2: DVector<f64> = DVector::zeros(l.len());
    let mut per_traj = vec![0.0; l.len()];
    let mut pairs = Vec::with_capacity(horizon);
    for k in 0..n_traj {
        sampler.rollout(&mut rng, horizon, &mut pairs);
        let mut disc = 1.0 - g;
        for &idx in &pairs {
            per_traj[idx] += disc;
            disc *= g;
        }
        let count = (k + 1) as f64;
        for (i, x) in per_traj.iter_mut().enumerate() {
            let delta = *x - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (*x - mean[i]);
            *x = 0.0;
        }
    }
    let n = n_traj as f64;
    let std_err = DVector::from_fn(l.len(), |i, _| {
        if n_traj < 2 {
            return 0.0;
        }
        (m2[i].max(0.0) / (n - 1.0) / n).sqrt()
    });
    Ok(SampledOccupancy {
        mean,
        std_err,
        horizon,
        truncation_bias: bias,
        env_steps: (n_traj * horizon) as u64,
    })
}

/// Monte-Carlo estimate of `(1-γ) E[Σ_t γ^t f(s_t, a_t)]`, which equals
/// `⟨f, ω⟩` up to truncation.
pub fn discounted_expectation(
    cmp: &Cmp,
    pi: &TabularPolicy,
    f: &DVector<f64>,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<McEstimate> {
    cmp.check_policy(pi)?;
    check_len(cmp.layout().len(), f.len())?;
    let bias = check_horizon(cmp.gamma(), horizon)?;
    if n_traj < 2 {
        return Err(Error::Domain("need at least two trajectories for a standard error".into()));
    }
    let g = cmp.gamma();
    let sampler = Sampler::new(cmp, pi);
    let mut rng = rng_for(seed);
    let mut pairs = Vec::with_capacity(horizon);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_traj {
        sampler.rollout(&mut rng, horizon, &mut pairs);
        let mut disc = 1.0 - g;
        let mut x = 0.0;
        for &idx in &pairs {
            x += disc * f[idx];
            disc *= g;
        }
        sum += x;
        sum_sq += x * x;
    }
    let n = n_traj as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        std_err: (var / n).sqrt(),
        truncation_bias: bias * f.amax(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmp::CmpSpec;
    use crate::occupancy::occupancy;

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
    fn horizon_rule() {
        assert_eq!(horizon_for(0.0), 1);
        let h = horizon_for(0.5);
        assert!(0.5f64.powi(h as i32) <= TRUNCATION_TOL);
        assert!(0.5f64.powi(h as i32 - 1) > TRUNCATION_TOL);
    }

    #[test]
    fn degenerate_chain_has_zero_variance() {
        let cmp = Cmp::new(CmpSpec { n_states: 1, n_actions: 1, kernel: vec![vec![vec![1.0]]], mu: vec![1.0], gamma: 0.9 }).unwrap();
        let pi = TabularPolicy::uniform(1, 1);
        let est = sample_occupancy(&cmp, &pi, 100, horizon_for(0.9), 3).unwrap();
        assert!((est.mean[0] - 1.0).abs() < 1e-7);
        assert!(est.std_err[0] < 1e-12);
    }

    #[test]
    fn chain_estimate_within_three_standard_errors() {
        let cmp = chain(0.5);
        let pi = TabularPolicy::uniform(2, 2);
        let exact = occupancy(&cmp, &pi).unwrap();
        let est = sample_occupancy(&cmp, &pi, 100_000, horizon_for(0.5), 11).unwrap();
        for i in 0..4 {
            let err = (est.mean[i] - exact.values()[i]).abs();
            assert!(err <= 3.0 * est.std_err[i] + est.truncation_bias, "entry {i}: {err} vs se {}", est.std_err[i]);
        }
    }

    #[test]
    fn undiscounted_estimate_is_first_pair_frequency() {
        let cmp = chain(0.0);
        let pi = TabularPolicy::from_probs(&nalgebra::DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.5, 0.5])).unwrap();
        let est = sample_occupancy(&cmp, &pi, 20_000, 1, 5).unwrap();
        assert_eq!(est.horizon, 1);
        assert_eq!(est.mean[2] + est.mean[3], 0.0);
        assert!((est.mean[0] - 0.3).abs() < 4.0 * est.std_err[0]);
    }

    #[test]
    fn same_seed_same_estimate() {
        let cmp = chain(0.9);
        let pi = TabularPolicy::uniform(2, 2);
        let a = sample_occupancy(&cmp, &pi, 500, horizon_for(0.9), 42).unwrap();
        let b = sample_occupancy(&cmp, &pi, 500, horizon_for(0.9), 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_horizon_rejected() {
        let cmp = chain(0.9);
        assert!(sample_occupancy(&cmp, &TabularPolicy::uniform(2, 2), 10, 5, 0).is_err());
    }
}
