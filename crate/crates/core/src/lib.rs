//! Tabular solvers for nonlinear Markov decision problems.
//!
//! A nonlinear MDP maximizes a differentiable utility `f(ω)` of the discounted
//! state-action occupancy `ω` subject to convex constraints `g_i(ω) ≤ 0`, where
//! `ω` ranges over the Bellman-flow polytope of a finite controlled Markov
//! process. This crate provides the exact occupancy algebra (flow solves,
//! successor representation, occupancy Jacobians), a small zoo of utilities
//! with their intrinsic rewards, Legendre potentials and the Hessian metrics
//! they induce on policy parameters, and the optimizers that use them.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod cmp;
pub mod envs;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod occupancy;
pub mod optimizers;
pub mod utilities;

mod numerics;

pub use cmp::{
    condition_occupancy, policy_from_logits, validate_cmp, Cmp, CmpSpec, Layout, PolicyMixture,
    TabularPolicy, ValidationReport,
};
pub use error::{Error, Result};
pub use geometry::{
    bregman_divergence, ctrpo_divergence, hessian_metric, BarrierKind, HessianMetric, Potential,
};
pub use occupancy::{
    advantage_for_reward, bellman_flow_residual, occupancy, occupancy_jacobian,
    sample_occupancy, solve_linear_baseline, successor_representation, Advantages, Occupancy,
    OccupancyJacobian, SuccessorRep,
};
pub use optimizers::{
    run_optimization, utility_gradient, GradientMode, OptimizerConfig, OptimizerKind,
    OptimizerState, Problem, RunLog,
};
pub use utilities::{
    dispersion, entropy_utility, js_to_reference, linear_utility, make_constraint,
    mixture_mutual_information, Constraint, EntropyMode, LabelSpace, Unit, Utility,
};

/// Nats-to-bits conversion factor, `log2(e)`.
pub const BITS_PER_NAT: f64 = std::f64::consts::LOG2_E;
