//! Policy-gradient engines for nonlinear MDPs.
//!
//! All engines work on softmax logits, one logit matrix per mixture
//! component, and linearize the utility at the current occupancies: the
//! differential `∂f/∂ω_i` is used as the reward of component `i`.

mod equivalence;
mod gradient;
mod runlog;
mod steps;

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use equivalence::{surrogate_equivalence_check, EquivalenceReport, GRADIENT_GAP_TOL, HESSIAN_GAP_TOL};
pub use gradient::{exact_reward_gradient, utility_gradient, GradientMode, UtilityGradient, EMPIRICAL_SMOOTHING};
pub use runlog::{RunLog, RunRecord};
pub use steps::{hpg_step, proximal_surrogate_step, vpg_lagrangian_step};
pub(crate) use steps::hpg_directions;

use crate::cmp::{Cmp, PolicyMixture, TabularPolicy};
use crate::error::{Error, Result};
use crate::geometry::BarrierKind;
use crate::occupancy::{bellman_flow_residual, occupancy, Occupancy};
use crate::utilities::{Constraint, Utility};

/// The nonlinear MDP being solved: utility, constraints, mixture weights.
#[derive(Debug, Clone)]
pub struct Problem {
    pub cmp: Cmp,
    pub utility: Arc<dyn Utility>,
    /// Each constraint reads one mixture component.
    pub constraints: Vec<Constraint>,
    /// Label distribution `z`, one entry per component.
    pub weights: Vec<f64>,
}

impl Problem {
    pub fn new(cmp: Cmp, utility: Arc<dyn Utility>, constraints: Vec<Constraint>, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("problem needs at least one mixture component".into()));
        }
        if let Some(n) = utility.arity() {
            if n != weights.len() {
                return Err(Error::Config(format!(
                    "utility {} reads {n} occupancies but the mixture has {} components",
                    utility.name(),
                    weights.len()
                )));
            }
        }
        for c in &constraints {
            if c.component >= weights.len() {
                return Err(Error::Config(format!("constraint on component {} of a {}-component mixture", c.component, weights.len())));
            }
        }
        Ok(Self { cmp, utility, constraints, weights })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Vpg,
    Hpg,
    Proximal,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Vpg => "vpg",
            OptimizerKind::Hpg => "hpg",
            OptimizerKind::Proximal => "proximal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Iteration budget `K`.
    pub steps: usize,
    /// Primal step size `η_θ` (for `proximal`, the proximal weight `η`).
    pub step_size: f64,
    /// Dual step size `η_λ` of the Lagrangian baseline.
    pub dual_step_size: f64,
    pub mode: SamplingMode,
    /// Trajectories per component and iteration in sampled mode.
    pub n_traj: usize,
    pub seed: u64,
    /// Stop once the ascent gradient's sup-norm drops to this value.
    pub tol: f64,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub max_halvings: usize,
    /// Write measured wall time into logs; off keeps logs byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Hpg,
            steps: 200,
            step_size: 0.05,
            dual_step_size: 0.1,
            mode: SamplingMode::Exact,
            n_traj: 1000,
            seed: 0,
            tol: 0.0,
            inner_steps: 10,
            inner_lr: 1.0,
            max_halvings: 30,
            record_wall_time: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size must be finite and >= 0, got {}", self.step_size)));
        }
        if !(self.dual_step_size >= 0.0 && self.dual_step_size.is_finite()) {
            return Err(Error::Config("dual_step_size must be finite and >= 0".into()));
        }
        if self.mode == SamplingMode::Sampled && self.n_traj < 2 {
            return Err(Error::Config("sampled mode needs n_traj >= 2".into()));
        }
        if !(self.inner_lr > 0.0) {
            return Err(Error::Config("inner_lr must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn gradient_mode(&self, iteration: usize) -> GradientMode {
        match self.mode {
            SamplingMode::Exact => GradientMode::Exact,
            SamplingMode::Sampled => GradientMode::Sampled {
                n_traj: self.n_traj,
                seed: gradient::component_seed(self.seed, 1_000_003 + iteration),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Kakade,
    FisherRao,
    /// Identity metric on logits; HPG then coincides with plain gradient ascent.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    pub ell: BarrierKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub potential: PotentialKind,
    pub barrier: Option<BarrierConfig>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { potential: PotentialKind::Kakade, barrier: None }
    }
}

/// Iterate of an optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Flattened logits per component.
    pub thetas: Vec<DVector<f64>>,
    /// Lagrange multipliers, one per constraint (Lagrangian mode only).
    pub multipliers: Vec<f64>,
    pub step_size: f64,
    pub iteration: usize,
    pub last_metrics: Option<Metrics>,
    /// Cumulative environment steps spent by sampled estimates.
    pub env_steps: u64,
}

impl OptimizerState {
    pub fn new(thetas: Vec<DVector<f64>>, n_constraints: usize, step_size: f64) -> Self {
        Self { thetas, multipliers: vec![0.0; n_constraints], step_size, iteration: 0, last_metrics: None, env_steps: 0 }
    }

    /// All components at the uniform policy.
    pub fn uniform(problem: &Problem, step_size: f64) -> Self {
        let n = problem.cmp.layout().len();
        Self::new(vec![DVector::zeros(n); problem.n_components()], problem.constraints.len(), step_size)
    }

    pub fn policies(&self, cmp: &Cmp) -> Result<Vec<TabularPolicy>> {
        self.thetas.iter().map(|t| TabularPolicy::from_theta(t, cmp.n_states(), cmp.n_actions())).collect()
    }

    pub fn mixture(&self, problem: &Problem) -> Result<PolicyMixture> {
        PolicyMixture::new(self.policies(&problem.cmp)?, problem.weights.clone())
    }
}

/// Scalar diagnostics of one iterate, in reporting units.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub utility: f64,
    /// Base values `d(ω)` of each constraint (the constraint is `d ≤ threshold`).
    pub constraints: Vec<f64>,
    /// Constraint functions `g = d - threshold`, reporting units.
    pub constraint_g: Vec<f64>,
    /// Sup-norm of the ascent direction's raw gradient.
    pub grad_norm: f64,
    pub flow_residual: f64,
}

/// Everything computed at one iterate and shared by logging and the update.
pub(crate) struct Evaluation {
    pub policies: Vec<TabularPolicy>,
    pub omegas: Vec<Occupancy>,
    /// Raw constraint values `g_c` in internal units.
    pub g: Vec<f64>,
    /// Gradient of the ascent objective per component.
    pub ascent: Vec<DVector<f64>>,
    pub metrics: Metrics,
    pub env_steps: u64,
}

pub(crate) fn raw_omegas(omegas: &[Occupancy]) -> Vec<DVector<f64>> {
    omegas.iter().map(|o| o.values().clone()).collect()
}

/// Evaluates the iterate and the gradient of the ascent objective: `f` for
/// HPG and the proximal method, the Lagrangian `f - Σ λ_c g_c` for VPG.
pub(crate) fn evaluate(state: &OptimizerState, problem: &Problem, config: &OptimizerConfig) -> Result<Evaluation> {
    let cmp = &problem.cmp;
    let layout = cmp.layout();
    let policies = state.policies(cmp)?;
    let omegas: Vec<Occupancy> = policies.iter().map(|pi| occupancy(cmp, pi)).collect::<Result<_>>()?;
    let raw = raw_omegas(&omegas);
    let utility = problem.utility.value(layout, &raw, &problem.weights)?;
    let mut g = Vec::with_capacity(problem.constraints.len());
    let mut bases = Vec::with_capacity(problem.constraints.len());
    for c in &problem.constraints {
        let gv = c.value_in(layout, &raw)?;
        g.push(gv);
        bases.push(c.unit().to_report(gv + c.threshold));
    }
    let flow_residual = omegas
        .iter()
        .map(|o| bellman_flow_residual(cmp, o.values()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let lagrangian = config.kind == OptimizerKind::Vpg;
    let mode = config.gradient_mode(state.iteration);

    // Per-component reward: ∂f/∂ω_i, minus Σ λ_c ∂g_c/∂ω_i for the Lagrangian.
    let reward_for = |i: usize, omegas_for_reward: &[DVector<f64>]| -> Result<DVector<f64>> {
        let mut r = problem.utility.differential(layout, omegas_for_reward, &problem.weights, i)?;
        if lagrangian {
            for (c, lambda) in problem.constraints.iter().zip(&state.multipliers) {
                if c.component == i && *lambda != 0.0 {
                    r -= c.differential(layout, &omegas_for_reward[i])? * *lambda;
                }
            }
        }
        Ok(r)
    };

    let (ascent, env_steps) = match mode {
        GradientMode::Exact => {
            let grads = (0..policies.len())
                .map(|i| {
                    let r = reward_for(i, &raw)?;
                    exact_reward_gradient(cmp, &policies[i], &omegas[i], &r)
                })
                .collect::<Result<Vec<_>>>()?;
            (grads, 0)
        }
        GradientMode::Sampled { n_traj, seed } => {
            let batch = gradient::SampledBatch::collect(cmp, &policies, n_traj, seed)?;
            let grads = (0..policies.len())
                .map(|i| {
                    let r = reward_for(i, &batch.omegas)?;
                    Ok(batch.reward_gradient(cmp, &policies[i], i, &r))
                })
                .collect::<Result<Vec<_>>>()?;
            (grads, batch.env_steps)
        }
    };
    let grad_norm = ascent.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let metrics = Metrics {
        utility: problem.utility.unit().to_report(utility),
        constraints: bases,
        constraint_g: problem.constraints.iter().zip(&g).map(|(c, gv)| c.unit().to_report(*gv)).collect(),
        grad_norm,
        flow_residual,
    };
    if !utility.is_finite() || !grad_norm.is_finite() {
        return Err(Error::Diverged {
            iteration: state.iteration,
            detail: format!("utility {utility}, gradient norm {grad_norm}"),
        });
    }
    Ok(Evaluation { policies, omegas, g, ascent, metrics, env_steps })
}

/// Outcome of [`run_optimization`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub state: OptimizerState,
    pub final_occupancies: Vec<Occupancy>,
}

/// Runs the configured optimizer for `config.steps` iterations, or until the
/// ascent gradient norm reaches `config.tol`. Logs the initial iterate and
/// every accepted iterate after it.
pub fn run_optimization(
    problem: &Problem,
    config: &OptimizerConfig,
    geometry: &GeometryConfig,
    init: OptimizerState,
) -> Result<RunOutcome> {
    config.validate()?;
    let start = std::time::Instant::now();
    let mut log = RunLog::new(config.kind.name(), problem.constraints.len(), config.seed, config.record_wall_time);
    let mut state = init;
    if config.kind == OptimizerKind::Hpg {
        steps::check_strictly_feasible(problem, &state)?;
    }
    loop {
        let eval = evaluate(&state, problem, config)?;
        state.env_steps += eval.env_steps;
        state.last_metrics = Some(eval.metrics.clone());
        log.push(RunRecord::from_metrics(
            state.iteration,
            &eval.metrics,
            &state.multipliers,
            state.env_steps,
            start.elapsed().as_millis() as u64,
        ));
        if state.iteration >= config.steps || eval.metrics.grad_norm <= config.tol {
            let final_occupancies = eval.omegas;
            return Ok(RunOutcome { log, state, final_occupancies });
        }
        state = match config.kind {
            OptimizerKind::Vpg => steps::apply_vpg(&state, &eval, config),
            OptimizerKind::Hpg => steps::apply_hpg(&state, &eval, problem, config, geometry)?,
            OptimizerKind::Proximal => steps::apply_proximal(&state, &eval, problem, config)?,
        };
        if state.thetas.iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::Diverged { iteration: state.iteration, detail: "non-finite logits".into() });
        }
    }
}
