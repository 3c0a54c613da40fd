//! Seeded random instances for the check suite and property tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cmp::{Cmp, CmpSpec, TabularPolicy};
use crate::occupancy::sampling::rng_for;

pub const GAMMAS: [f64; 4] = [0.0, 0.5, 0.9, 0.99];

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed)
}

/// Random probability vector; `sparsity` is the chance an entry is zeroed
/// (one entry is always kept).
pub fn simplex(rng: &mut ChaCha8Rng, n: usize, sparsity: f64) -> Vec<f64> {
    let keep = rng.random_range(0..n);
    let mut v: Vec<f64> = (0..n)
        .map(|i| if i != keep && rng.random_bool(sparsity) { 0.0 } else { rng.random_range(0.05..1.0) })
        .collect();
    let z: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= z);
    v
}

pub fn cmp(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, gamma: f64, sparsity: f64) -> Cmp {
    let kernel = (0..n_states)
        .map(|_| (0..n_actions).map(|_| simplex(rng, n_states, sparsity)).collect())
        .collect();
    let mu = simplex(rng, n_states, sparsity);
    Cmp::new(CmpSpec { n_states, n_actions, kernel, mu, gamma }).expect("random CMPs are valid by construction")
}

/// Random CMP with `|S|, |A| ≤ max_dim` and `γ` drawn from [`GAMMAS`].
pub fn any_cmp(rng: &mut ChaCha8Rng, max_dim: usize) -> Cmp {
    let ns = rng.random_range(1..=max_dim);
    let na = rng.random_range(1..=max_dim);
    let gamma = GAMMAS[rng.random_range(0..GAMMAS.len())];
    cmp(rng, ns, na, gamma, 0.3)
}

/// Dense CMP with every kernel entry and `μ` strictly positive, so every
/// occupancy is interior.
pub fn dense_cmp(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, gamma: f64) -> Cmp {
    cmp(rng, n_states, n_actions, gamma, 0.0)
}

/// Softmax policy with logits uniform in `[-scale, scale]`.
pub fn policy(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, scale: f64) -> TabularPolicy {
    let logits = DMatrix::from_fn(n_states, n_actions, |_, _| rng.random_range(-scale..=scale));
    TabularPolicy::from_logits(logits).expect("bounded logits")
}

pub fn vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}
