use nalgebra::DVector;

use super::{evaluate, Evaluation, GeometryConfig, OptimizerConfig, OptimizerKind, OptimizerState, PotentialKind, Problem, SamplingMode};
use crate::cmp::TabularPolicy;
use crate::error::{Error, Result};
use crate::geometry::{hpg_metric, Potential};
use crate::numerics::damped_lstsq;
use crate::occupancy::jacobian::jacobian_from_parts;
use crate::occupancy::{advantage_for_reward, bellman_flow_residual, occupancy, successor_representation};

/// Flow residual an accepted iterate must satisfy.
pub const ACCEPT_FLOW_RESIDUAL: f64 = 1e-8;
/// Relative Tikhonov damping of the metric: `ε = DAMPING · tr(G) / dim`.
pub const DAMPING: f64 = 1e-8;
/// Logits are kept within this distance of their state's maximum so softmax
/// probabilities never underflow (`e^-600 ≈ 1e-261`).
pub const MAX_LOGIT_SPREAD: f64 = 600.0;

/// Shifts each state's logits so the largest is zero and clamps the rest at
/// `-MAX_LOGIT_SPREAD`. The policy is unchanged up to probabilities below
/// `e^-600`.
pub(crate) fn normalize_logits(theta: &DVector<f64>, n_actions: usize) -> DVector<f64> {
    let mut out = theta.clone();
    for row in out.as_mut_slice().chunks_mut(n_actions) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            continue;
        }
        row.iter_mut().for_each(|x| *x = (*x - max).max(-MAX_LOGIT_SPREAD));
    }
    out
}

/// One ascent step on `L = f - Σ λ_c g_c` in θ and one projected dual ascent
/// step `λ_c ← max(0, λ_c + η_λ g_c)`.
pub fn vpg_lagrangian_step(state: &OptimizerState, problem: &Problem, config: &OptimizerConfig) -> Result<OptimizerState> {
    let config = OptimizerConfig { kind: OptimizerKind::Vpg, ..config.clone() };
    let eval = evaluate(state, problem, &config)?;
    let mut next = apply_vpg(state, &eval, &config);
    next.env_steps += eval.env_steps;
    next.last_metrics = Some(eval.metrics);
    Ok(next)
}

/// One Hessian policy gradient step `θ ← θ + η G^† ∇f` per component, with
/// the metric of the configured (possibly barrier-augmented) potential and
/// feasibility backtracking.
pub fn hpg_step(state: &OptimizerState, problem: &Problem, config: &OptimizerConfig, geometry: &GeometryConfig) -> Result<OptimizerState> {
    let config = OptimizerConfig { kind: OptimizerKind::Hpg, ..config.clone() };
    check_strictly_feasible(problem, state)?;
    let eval = evaluate(state, problem, &config)?;
    let mut next = apply_hpg(state, &eval, problem, &config, geometry)?;
    next.env_steps += eval.env_steps;
    next.last_metrics = Some(eval.metrics);
    Ok(next)
}

/// Approximately maximizes the proximal surrogate
/// `E_{s∼ω_k, a∼π}[A_k] - η⁻¹ E_{s∼ω_k} KL(π_k(·|s) ‖ π(·|s))` by
/// `inner_steps` gradient ascent steps, with `A_k` frozen at the intrinsic
/// reward of the current iterate.
pub fn proximal_surrogate_step(state: &OptimizerState, problem: &Problem, config: &OptimizerConfig) -> Result<OptimizerState> {
    let config = OptimizerConfig { kind: OptimizerKind::Proximal, ..config.clone() };
    config.validate()?;
    let eval = evaluate(state, problem, &config)?;
    let mut next = apply_proximal(state, &eval, problem, &config)?;
    next.last_metrics = Some(eval.metrics);
    Ok(next)
}

pub(crate) fn check_strictly_feasible(problem: &Problem, state: &OptimizerState) -> Result<()> {
    if problem.constraints.is_empty() {
        return Ok(());
    }
    let policies = state.policies(&problem.cmp)?;
    let layout = problem.cmp.layout();
    for (k, c) in problem.constraints.iter().enumerate() {
        let omega = occupancy(&problem.cmp, &policies[c.component])?;
        let g = c.value(layout, omega.values())?;
        if !(g < 0.0) {
            return Err(Error::InfeasibleStart(format!(
                "constraint {k} ({} on component {}) has g = {:.6} {}",
                c.base.name(),
                c.component,
                c.unit().to_report(g),
                if c.unit() == crate::utilities::Unit::Nats { "bits" } else { "" }
            )));
        }
    }
    Ok(())
}

pub(crate) fn apply_vpg(state: &OptimizerState, eval: &Evaluation, config: &OptimizerConfig) -> OptimizerState {
    let na = eval.policies[0].n_actions();
    let thetas = state.thetas.iter().zip(&eval.ascent).map(|(t, g)| normalize_logits(&(t + g * config.step_size), na)).collect();
    let multipliers = state
        .multipliers
        .iter()
        .zip(&eval.g)
        .map(|(l, g)| (l + config.dual_step_size * g).max(0.0))
        .collect();
    OptimizerState {
        thetas,
        multipliers,
        step_size: state.step_size,
        iteration: state.iteration + 1,
        last_metrics: state.last_metrics.clone(),
        env_steps: state.env_steps,
    }
}

fn component_potential(problem: &Problem, geometry: &GeometryConfig, component: usize) -> Result<Option<Potential>> {
    let base = match geometry.potential {
        PotentialKind::Kakade => Potential::Kakade,
        PotentialKind::FisherRao => Potential::FisherRao,
        PotentialKind::Euclidean => {
            if geometry.barrier.is_some() && !problem.constraints.is_empty() {
                return Err(Error::Config("a barrier needs an occupancy potential, not the euclidean metric".into()));
            }
            return Ok(None);
        }
    };
    let own: Vec<_> = problem.constraints.iter().filter(|c| c.component == component).cloned().collect();
    Ok(Some(match geometry.barrier {
        Some(b) if !own.is_empty() => Potential::barrier(base, own, b.ell, b.beta)?,
        _ => base,
    }))
}

/// Natural direction `(G + εI)^† ∇` for each component.
pub(crate) fn hpg_directions(eval: &Evaluation, problem: &Problem, geometry: &GeometryConfig) -> Result<Vec<DVector<f64>>> {
    let cmp = &problem.cmp;
    (0..eval.policies.len())
        .map(|i| {
            let grad = &eval.ascent[i];
            let Some(phi) = component_potential(problem, geometry, i)? else {
                return Ok(grad.clone());
            };
            let sr = successor_representation(cmp, &eval.policies[i])?;
            let jac = jacobian_from_parts(cmp, &eval.policies[i], &sr, eval.omegas[i].clone());
            let metric = hpg_metric(cmp.layout(), &jac, &eval.policies[i], &phi)?;
            let dim = metric.nrows() as f64;
            let damping = (DAMPING * metric.trace() / dim).max(f64::MIN_POSITIVE);
            damped_lstsq(&metric, grad, damping)
        })
        .collect()
}

pub(crate) fn apply_hpg(
    state: &OptimizerState,
    eval: &Evaluation,
    problem: &Problem,
    config: &OptimizerConfig,
    geometry: &GeometryConfig,
) -> Result<OptimizerState> {
    let directions = hpg_directions(eval, problem, geometry)?;
    let cmp = &problem.cmp;
    let layout = cmp.layout();
    let mut eta = state.step_size;
    let mut accepted = None;
    for _ in 0..=config.max_halvings {
        let candidate: Vec<DVector<f64>> =
            state.thetas.iter().zip(&directions).map(|(t, d)| normalize_logits(&(t + d * eta), layout.n_actions)).collect();
        if candidate_ok(problem, &candidate, layout)? {
            accepted = Some(candidate);
            break;
        }
        eta *= 0.5;
    }
    let thetas = accepted.unwrap_or_else(|| {
        log::warn!("iteration {}: no feasible step after {} halvings; iterate kept", state.iteration, config.max_halvings);
        state.thetas.clone()
    });
    Ok(OptimizerState {
        thetas,
        multipliers: state.multipliers.clone(),
        step_size: state.step_size,
        iteration: state.iteration + 1,
        last_metrics: state.last_metrics.clone(),
        env_steps: state.env_steps,
    })
}

fn candidate_ok(problem: &Problem, thetas: &[DVector<f64>], layout: crate::cmp::Layout) -> Result<bool> {
    let cmp = &problem.cmp;
    let mut omegas = Vec::with_capacity(thetas.len());
    for t in thetas {
        let Ok(pi) = TabularPolicy::from_theta(t, cmp.n_states(), cmp.n_actions()) else {
            return Ok(false);
        };
        let Ok(omega) = occupancy(cmp, &pi) else {
            return Ok(false);
        };
        if bellman_flow_residual(cmp, omega.values())? > ACCEPT_FLOW_RESIDUAL {
            return Ok(false);
        }
        omegas.push(omega);
    }
    for c in &problem.constraints {
        match c.value(layout, omegas[c.component].values()) {
            Ok(g) if g < 0.0 => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

pub(crate) fn apply_proximal(state: &OptimizerState, eval: &Evaluation, problem: &Problem, config: &OptimizerConfig) -> Result<OptimizerState> {
    if config.mode == SamplingMode::Sampled {
        return Err(Error::Config("the proximal surrogate optimizer runs on exact advantages only".into()));
    }
    let cmp = &problem.cmp;
    let layout = cmp.layout();
    let raw = super::raw_omegas(&eval.omegas);
    let eta = config.step_size;
    // Keeps the KL anchor's curvature (at most d(s)/η) within the stable range.
    let lr = config.inner_lr.min(eta);
    let mut thetas = Vec::with_capacity(state.thetas.len());
    for (i, theta_k) in state.thetas.iter().enumerate() {
        let pi_k = &eval.policies[i];
        let r = problem.utility.differential(layout, &raw, &problem.weights, i)?;
        let adv = advantage_for_reward(cmp, pi_k, &r)?;
        let d = eval.omegas[i].state_marginal();
        let mut theta = theta_k.clone();
        if eta > 0.0 {
            for _ in 0..config.inner_steps {
                let pi = TabularPolicy::from_theta(&theta, layout.n_states, layout.n_actions)?;
                let mut grad = DVector::zeros(layout.len());
                for s in 0..layout.n_states {
                    let mean_adv: f64 = (0..layout.n_actions).map(|a| pi.prob(s, a) * adv.a[layout.index(s, a)]).sum();
                    for b in 0..layout.n_actions {
                        let idx = layout.index(s, b);
                        let surrogate = pi.prob(s, b) * (adv.a[idx] - mean_adv);
                        let anchor = pi.prob(s, b) - pi_k.prob(s, b);
                        grad[idx] = d[s] * (surrogate - anchor / eta);
                    }
                }
                theta += grad * lr;
                theta = normalize_logits(&theta, layout.n_actions);
            }
        }
        thetas.push(theta);
    }
    Ok(OptimizerState {
        thetas,
        multipliers: state.multipliers.clone(),
        step_size: state.step_size,
        iteration: state.iteration + 1,
        last_metrics: state.last_metrics.clone(),
        env_steps: state.env_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_logits_keep_the_policy() {
        let theta = DVector::from_vec(vec![3.0, -1.0, 2.5, 40.0, 41.0, 39.0]);
        let out = normalize_logits(&theta, 3);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[4], 0.0);
        let a = TabularPolicy::from_theta(&theta, 2, 3).unwrap();
        let b = TabularPolicy::from_theta(&out, 2, 3).unwrap();
        assert!((a.probs() - b.probs()).amax() < 1e-15);
    }

    #[test]
    fn spread_is_clamped() {
        let theta = DVector::from_vec(vec![1e9, 0.0, -1e9, 5.0]);
        let out = normalize_logits(&theta, 2);
        assert_eq!(out.as_slice(), &[0.0, -MAX_LOGIT_SPREAD, -MAX_LOGIT_SPREAD, 0.0]);
        let pi = TabularPolicy::from_theta(&out, 2, 2).unwrap();
        assert!(pi.prob(0, 1) > 0.0);
    }
}
