//! The invariant and oracle suite behind `nmdp check`.
//!
//! Every check is named `module.invariant` and records the measured
//! quantities next to their limits, so callers can both print a verdict and
//! inspect how close each quantity came to its bound.

pub mod oracles;
pub mod random;

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::cmp::{condition_occupancy, validate_cmp, Cmp, Layout, PolicyMixture, TabularPolicy};
use crate::envs::{build_gridworld, build_two_state, GridSpec, TwoStateSpec};
use crate::error::{Error, Result};
use crate::geometry::{bregman_divergence, hessian_metric, hpg_metric, BarrierKind, Potential};
use crate::harness::{self, emit_plotdata, ExperimentConfig, PairOutcome};
use crate::occupancy::{
    advantage_for_reward, bellman_flow_residual, discounted_expectation, horizon_for, mass_defect, occupancy,
    occupancy_jacobian, occupancy_via_successor, solve_linear_baseline, successor_representation, tangent_basis,
};
use crate::optimizers::{
    evaluate, hpg_directions, proximal_surrogate_step, run_optimization, surrogate_equivalence_check,
    utility_gradient, vpg_lagrangian_step, GeometryConfig, GradientMode, OptimizerConfig, OptimizerKind,
    OptimizerState, Problem, GRADIENT_GAP_TOL, HESSIAN_GAP_TOL,
};
use crate::utilities::{
    dispersion, entropy_utility, js_to_reference, linear_utility, make_constraint, mixture_mutual_information,
    EntropyMode, LabelSpace, Utility,
};
use crate::BITS_PER_NAT;

/// Tolerances of the suite, in one place.
pub mod tol {
    pub const FLOW_RESIDUAL: f64 = 1e-9;
    pub const SR_AGREEMENT: f64 = 1e-10;
    pub const MASS: f64 = 1e-12;
    /// Added to the Neumann tail bound for floating-point round-off.
    pub const NEUMANN_SLACK: f64 = 1e-10;
    pub const MC_STD_ERRS: f64 = 3.0;
    pub const JACOBIAN_REL: f64 = 1e-5;
    /// `|fitted scale - 1|` of the analytic Jacobian against differences.
    pub const JACOBIAN_SCALE: f64 = 1e-6;
    /// Relative error the rescaled alternatives must exceed.
    pub const JACOBIAN_ALT_MIN: f64 = 1e-2;
    pub const GRADIENT_REL: f64 = 1e-5;
    pub const JENSEN_BREGMAN: f64 = 1e-10;
    pub const MI: f64 = 1e-10;
    pub const ONE_BIT: f64 = 1e-12;
    pub const GRADIENT_GAP: f64 = super::GRADIENT_GAP_TOL;
    pub const HESSIAN_GAP: f64 = super::HESSIAN_GAP_TOL;
    pub const LINEAR_REL: f64 = 1e-3;
    pub const LINEAR_SEED_FRACTION: f64 = 0.95;
    pub const MAXENT_BITS: f64 = 0.01;
    pub const JS_THRESHOLD_BITS: f64 = 0.1;
    pub const JS_SLACK_BITS: f64 = 0.005;
    pub const ROUND_TRIP: f64 = 1e-9;
    pub const ADVANTAGE_CENTERING: f64 = 1e-12;
    pub const ENTROPY_GRID_BITS: f64 = 1e-3;
    pub const POTENTIAL_REL: f64 = 1e-5;
    pub const BARRIER_HESSIAN_REL: f64 = 1e-4;
    pub const FISHER_RAO_KL: f64 = 1e-12;
    pub const KAKADE_FISHER: f64 = 1e-8;
    pub const SAMPLED_COSINE: f64 = 0.99;
    pub const MONOTONE_DROP: f64 = 1e-9;
    pub const SYMMETRY: f64 = 1e-10;
    pub const NATURAL_DIRECTION: f64 = 1e-6;
    pub const PROXIMAL_STILL: f64 = 1e-6;
    pub const STATIONARY_GRADIENT: f64 = 1e-6;
}

/// One measured quantity and its limit.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    pub label: String,
    pub value: f64,
    pub limit: f64,
    /// `value ≥ limit` is required instead of `value ≤ limit`.
    pub at_least: bool,
}

impl Measure {
    pub fn ok(&self) -> bool {
        if self.at_least {
            self.value >= self.limit
        } else {
            self.value <= self.limit
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub measures: Vec<Measure>,
}

impl CheckOutcome {
    pub fn measure(&self, label: &str) -> Option<&Measure> {
        self.measures.iter().find(|m| m.label == label)
    }
}

#[derive(Default)]
struct Recorder {
    measures: Vec<Measure>,
}

impl Recorder {
    fn at_most(&mut self, label: &str, value: f64, limit: f64) {
        self.measures.push(Measure { label: label.into(), value, limit, at_least: false });
    }
    fn at_least(&mut self, label: &str, value: f64, limit: f64) {
        self.measures.push(Measure { label: label.into(), value, limit, at_least: true });
    }
    fn holds(&mut self, label: &str, ok: bool) {
        self.at_least(label, if ok { 1.0 } else { 0.0 }, 1.0);
    }
}

type CheckFn = fn(&mut Recorder) -> Result<()>;

fn run_one(name: &str, f: CheckFn) -> CheckOutcome {
    let mut rec = Recorder::default();
    let result = f(&mut rec);
    let mut parts: Vec<String> = rec
        .measures
        .iter()
        .map(|m| {
            let op = if m.at_least { ">=" } else { "<=" };
            let flag = if m.ok() { "" } else { " !" };
            format!("{}={:.3e} {op} {:.1e}{flag}", m.label, m.value, m.limit)
        })
        .collect();
    if let Err(e) = &result {
        parts.push(format!("error: {e}"));
    }
    CheckOutcome {
        name: name.to_string(),
        passed: result.is_ok() && rec.measures.iter().all(Measure::ok),
        detail: parts.join("; "),
        measures: rec.measures,
    }
}

/// Every check, in reporting order.
const SUITE: &[(&str, CheckFn)] = &[
    ("cmp.round_trip", cmp_round_trip),
    ("cmp.logit_shift_invariance", cmp_logit_shift),
    ("occupancy.random_cmps", occupancy_random_cmps),
    ("occupancy.discounted_expectation", occupancy_discounted_expectation),
    ("occupancy.jacobian_fd", occupancy_jacobian_fd),
    ("occupancy.advantage_centering", occupancy_advantage_centering),
    ("utilities.differential_fd", utilities_differential_fd),
    ("utilities.jensen_bregman", utilities_jensen_bregman),
    ("utilities.dispersion_is_mi", utilities_dispersion_is_mi),
    ("utilities.disjoint_one_bit", utilities_disjoint_one_bit),
    ("utilities.entropy_max_chain", utilities_entropy_max_chain),
    ("geometry.potential_fd", geometry_potential_fd),
    ("geometry.barrier_hessian_fd", geometry_barrier_hessian_fd),
    ("geometry.fisher_rao_bregman_kl", geometry_fisher_rao_kl),
    ("geometry.kakade_bregman_conditional_kl", geometry_kakade_bregman),
    ("geometry.kakade_metric_fisher", geometry_kakade_metric),
    ("geometry.metric_psd", geometry_metric_psd),
    ("optimizers.utility_gradient_fd", optimizers_utility_gradient_fd),
    ("optimizers.surrogate_equivalence", optimizers_surrogate_equivalence),
    ("optimizers.sampled_gradient_cosine", optimizers_sampled_cosine),
    ("optimizers.hpg_natural_direction", optimizers_hpg_direction),
    ("optimizers.hpg_monotone", optimizers_hpg_monotone),
    ("optimizers.vpg_dual_update", optimizers_vpg_dual),
    ("optimizers.proximal_surrogate", optimizers_proximal),
    ("optimizers.linear_sanity", optimizers_linear_sanity),
    ("optimizers.maxent_two_state", optimizers_maxent_two_state),
    ("optimizers.constrained_gridworld", optimizers_constrained_gridworld),
    ("optimizers.barrier_feasibility", optimizers_barrier_feasibility),
    ("envs.validate", envs_validate),
    ("envs.rotation_symmetry", envs_rotation_symmetry),
    ("harness.config_round_trip", harness_config_round_trip),
    ("harness.plotdata", harness_plotdata),
    ("harness.determinism", harness_determinism),
];

/// Runs every check whose name contains `filter`, concurrently, and returns
/// the outcomes in suite order.
pub fn run_checks(filter: Option<&str>) -> Vec<CheckOutcome> {
    let selected: Vec<_> = SUITE.iter().filter(|(name, _)| filter.is_none_or(|f| name.contains(f))).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = selected.iter().map(|(name, f)| scope.spawn(move || run_one(name, *f))).collect();
        handles
            .into_iter()
            .zip(&selected)
            .map(|(h, (name, _))| {
                h.join().unwrap_or_else(|_| CheckOutcome {
                    name: name.to_string(),
                    passed: false,
                    detail: "panicked".into(),
                    measures: vec![],
                })
            })
            .collect()
    })
}

/// Names of every check, in reporting order.
pub fn check_names() -> Vec<&'static str> {
    SUITE.iter().map(|(n, _)| *n).collect()
}

/// Runs a single named check.
pub fn run_check(name: &str) -> Option<CheckOutcome> {
    SUITE.iter().find(|(n, _)| *n == name).map(|(n, f)| run_one(n, *f))
}

fn cmp_round_trip(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(11);
    let (mut worst, mut tested) = (0.0_f64, 0);
    for _ in 0..100 {
        let cmp = random::any_cmp(&mut rng, 8);
        let pi = random::policy(&mut rng, cmp.n_states(), cmp.n_actions(), 3.0);
        let omega = occupancy(&cmp, &pi)?;
        if omega.state_marginal().iter().any(|d| *d <= 1e-12) {
            continue;
        }
        tested += 1;
        let back = condition_occupancy(&omega)?;
        worst = worst.max((back.probs() - pi.probs()).amax());
    }
    rec.at_least("instances", tested as f64, 50.0);
    rec.at_most("max_prob_err", worst, tol::ROUND_TRIP);
    Ok(())
}

fn cmp_logit_shift(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(12);
    let (mut worst, mut argmax_same) = (0.0_f64, true);
    for _ in 0..100 {
        let pi = random::policy(&mut rng, 6, 4, 5.0);
        let shifts = random::vector(&mut rng, 6, -50.0, 50.0);
        let shifted = DMatrix::from_fn(6, 4, |s, a| pi.logits()[(s, a)] + shifts[s]);
        let other = TabularPolicy::from_logits(shifted)?;
        worst = worst.max((other.probs() - pi.probs()).amax());
        for s in 0..6 {
            argmax_same &= other.probs().row(s).transpose().imax() == pi.probs().row(s).transpose().imax();
        }
    }
    rec.at_most("max_prob_diff", worst, 1e-12);
    rec.holds("argmax_preserved", argmax_same);
    Ok(())
}

/// Induced ∞-norm (max absolute row sum).
fn induced_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub const NEUMANN_TERMS: [usize; 5] = [0, 1, 5, 20, 50];

fn occupancy_random_cmps(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(1);
    let (mut flow, mut sr, mut mass, mut neg, mut neumann_excess) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, f64::NEG_INFINITY);
    for _ in 0..100 {
        let cmp = random::any_cmp(&mut rng, 8);
        let pi = random::policy(&mut rng, cmp.n_states(), cmp.n_actions(), 3.0);
        let omega = occupancy(&cmp, &pi)?;
        let v = omega.values();
        neg = neg.max((-v.min()).max(0.0));
        mass = mass.max(mass_defect(v));
        flow = flow.max(bellman_flow_residual(&cmp, v)?);
        let rep = successor_representation(&cmp, &pi)?;
        let via = occupancy_via_successor(&cmp, &pi, &rep)?;
        sr = sr.max((via.values() - v).amax());
        let g = cmp.gamma();
        for t in NEUMANN_TERMS {
            let partial = oracles::neumann_series(&cmp, &pi, t);
            let gap = induced_inf_norm(&(&rep.matrix - partial));
            let bound = if g == 0.0 { 0.0 } else { g.powi(t as i32 + 1) / (1.0 - g) };
            neumann_excess = neumann_excess.max(gap - bound);
        }
    }
    rec.at_most("min_entry_negativity", neg, 0.0);
    rec.at_most("mass_defect", mass, tol::MASS);
    rec.at_most("flow_residual", flow, tol::FLOW_RESIDUAL);
    rec.at_most("sr_vs_direct", sr, tol::SR_AGREEMENT);
    rec.at_most("neumann_excess", neumann_excess, tol::NEUMANN_SLACK);
    Ok(())
}

pub const MC_TRAJECTORIES: usize = 100_000;

fn occupancy_discounted_expectation(rec: &mut Recorder) -> Result<()> {
    let cmp = build_two_state(&TwoStateSpec::default())?;
    let mut rng = random::rng(2);
    let pi = random::policy(&mut rng, 2, 2, 1.5);
    let omega = occupancy(&cmp, &pi)?;
    let horizon = horizon_for(cmp.gamma());
    let mut worst = 0.0_f64;
    for k in 0..10 {
        let f = random::vector(&mut rng, 4, -1.0, 1.0);
        let exact = f.dot(omega.values());
        let est = discounted_expectation(&cmp, &pi, &f, MC_TRAJECTORIES, horizon, 100 + k)?;
        let allowed = tol::MC_STD_ERRS * est.std_err + est.truncation_bias;
        worst = worst.max((est.mean - exact).abs() / allowed);
    }
    rec.at_most("max_err_over_allowed", worst, 1.0);
    Ok(())
}

fn rel_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    oracles::rel_err_mat(a, b, 1e-12)
}

fn occupancy_jacobian_fd(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(3);
    let (mut worst, mut scale_err, mut alt_min) = (0.0_f64, 0.0_f64, f64::INFINITY);
    for k in 0..20 {
        let gamma = [0.5, 0.9, 0.99][k % 3];
        let ns = 2 + k % 4;
        let na = 2 + (k / 4) % 3;
        let cmp = random::dense_cmp(&mut rng, ns, na, gamma);
        let pi = random::policy(&mut rng, ns, na, 2.0);
        let jac = occupancy_jacobian(&cmp, &pi)?.matrix;
        let fd = oracles::fd_occupancy_jacobian(&cmp, &pi, 1e-5);
        worst = worst.max(rel_fro(&jac, &fd));
        let scale = jac.dot(&fd) / jac.dot(&jac);
        scale_err = scale_err.max((scale - 1.0).abs());
        for factor in [1.0 - gamma, 1.0 / (1.0 - gamma)] {
            alt_min = alt_min.min(rel_fro(&(&jac * factor), &fd));
        }
    }
    rec.at_most("max_rel_err", worst, tol::JACOBIAN_REL);
    rec.at_most("fitted_scale_minus_one", scale_err, tol::JACOBIAN_SCALE);
    rec.at_least("rescaled_alternative_rel_err", alt_min, tol::JACOBIAN_ALT_MIN);
    Ok(())
}

fn occupancy_advantage_centering(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(4);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let cmp = random::any_cmp(&mut rng, 8);
        let l = cmp.layout();
        let pi = random::policy(&mut rng, l.n_states, l.n_actions, 3.0);
        let r = random::vector(&mut rng, l.len(), 0.0, 1.0);
        let adv = advantage_for_reward(&cmp, &pi, &r)?;
        for s in 0..l.n_states {
            let c: f64 = (0..l.n_actions).map(|a| pi.prob(s, a) * adv.a[l.index(s, a)]).sum();
            worst = worst.max(c.abs());
        }
    }
    rec.at_most("max_abs_centered_sum", worst, tol::ADVANTAGE_CENTERING);
    Ok(())
}

/// Every shipped utility, with the number of mixture components it reads.
fn shipped_utilities(cmp: &Cmp, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Vec<(Arc<dyn Utility>, usize)>> {
    let l = cmp.layout();
    let reference = occupancy(cmp, &random::policy(rng, l.n_states, l.n_actions, 1.0))?;
    Ok(vec![
        (Arc::new(linear_utility(random::vector(rng, l.len(), -1.0, 1.0))?), 1),
        (Arc::new(entropy_utility(EntropyMode::StateAction)), 1),
        (Arc::new(entropy_utility(EntropyMode::State)), 1),
        (Arc::new(mixture_mutual_information(LabelSpace::State)), 2),
        (Arc::new(mixture_mutual_information(LabelSpace::StateAction)), 3),
        (Arc::new(js_to_reference(&reference)), 1),
    ])
}

fn random_weights(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    random::simplex(rng, n, 0.0)
}

fn utilities_differential_fd(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(5);
    let mut worst = 0.0_f64;
    for k in 0..20 {
        let cmp = random::dense_cmp(&mut rng, 2 + k % 4, 2 + k % 3, random::GAMMAS[1 + k % 3]);
        let l = cmp.layout();
        let basis = tangent_basis(&cmp);
        for (u, n) in shipped_utilities(&cmp, &mut rng)? {
            let omegas: Vec<DVector<f64>> = (0..n)
                .map(|_| occupancy(&cmp, &random::policy(&mut rng, l.n_states, l.n_actions, 2.0)).map(|o| o.into_values()))
                .collect::<Result<_>>()?;
            let weights = random_weights(&mut rng, n);
            for i in 0..n {
                let grad = u.differential(l, &omegas, &weights, i)?;
                let analytic = basis.tr_mul(&grad);
                let f = |x: &DVector<f64>| {
                    let mut o = omegas.clone();
                    o[i] = x.clone();
                    u.value(l, &o, &weights).unwrap_or(f64::NAN)
                };
                let fd = oracles::fd_directional(f, &omegas[i], &basis, 1e-6);
                worst = worst.max(oracles::rel_err(&analytic, &fd, 1e-6));
            }
        }
    }
    rec.at_most("max_rel_err", worst, tol::GRADIENT_REL);
    Ok(())
}

/// `n` occupancies of random policies on one dense CMP.
fn random_mixture(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Result<(Layout, Vec<DVector<f64>>, Vec<f64>)> {
    let ns = 2 + n % 4;
    let cmp = random::dense_cmp(rng, ns, 3, 0.9);
    let l = cmp.layout();
    let omegas = (0..n)
        .map(|_| occupancy(&cmp, &random::policy(rng, ns, 3, 3.0)).map(|o| o.into_values()))
        .collect::<Result<_>>()?;
    Ok((l, omegas, random_weights(rng, n)))
}

fn utilities_jensen_bregman(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(6);
    let mut worst = 0.0_f64;
    for k in 0..50 {
        let (l, omegas, z) = random_mixture(&mut rng, 2 + k % 4)?;
        let mean = omegas.iter().zip(&z).fold(DVector::zeros(l.len()), |acc, (o, w)| acc + o * *w);
        for phi in [Potential::Kakade, Potential::FisherRao] {
            let disp = dispersion(&phi, l, &omegas, &z)?;
            let avg: f64 = omegas.iter().zip(&z).map(|(o, w)| Ok(w * bregman_divergence(&phi, l, o, &mean)?)).sum::<Result<f64>>()?;
            worst = worst.max((disp - avg).abs());
        }
    }
    rec.at_most("max_abs_gap", worst, tol::JENSEN_BREGMAN);
    Ok(())
}

fn utilities_dispersion_is_mi(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(7);
    let mut worst = 0.0_f64;
    for k in 0..50 {
        let (l, omegas, z) = random_mixture(&mut rng, 2 + k % 4)?;
        let disp = dispersion(&Potential::FisherRao, l, &omegas, &z)?;
        let mi = mixture_mutual_information(LabelSpace::StateAction).value(l, &omegas, &z)?;
        let brute = oracles::brute_force_mi(&omegas, &z);
        worst = worst.max((disp - brute).abs()).max((mi - brute).abs());
    }
    rec.at_most("max_abs_gap_nats", worst, tol::MI);
    Ok(())
}

fn utilities_disjoint_one_bit(rec: &mut Recorder) -> Result<()> {
    let l = Layout::new(2, 2);
    let omegas = vec![DVector::from_row_slice(&[0.5, 0.5, 0.0, 0.0]), DVector::from_row_slice(&[0.0, 0.0, 0.3, 0.7])];
    let z = [0.5, 0.5];
    let mi = mixture_mutual_information(LabelSpace::StateAction).value(l, &omegas, &z)? * BITS_PER_NAT;
    let mi_state = mixture_mutual_information(LabelSpace::State).value(l, &omegas, &z)? * BITS_PER_NAT;
    rec.at_most("state_action_mi_minus_one_bit", (mi - 1.0).abs(), tol::ONE_BIT);
    rec.at_most("state_mi_minus_one_bit", (mi_state - 1.0).abs(), tol::ONE_BIT);
    Ok(())
}

fn two_state_policy(p0: f64, p1: f64) -> Result<TabularPolicy> {
    TabularPolicy::from_probs(&DMatrix::from_row_slice(2, 2, &[p0, 1.0 - p0, p1, 1.0 - p1]))
}

fn utilities_entropy_max_chain(rec: &mut Recorder) -> Result<()> {
    let spec = TwoStateSpec::default();
    let cmp = build_two_state(&spec)?;
    let l = cmp.layout();
    let (best, p0, p1) = oracles::chain_entropy_grid_max(spec.gamma, 200, 3);
    let u = entropy_utility(EntropyMode::StateAction);
    let at_best = u.value_single(l, occupancy(&cmp, &two_state_policy(p0, p1)?)?.values())? * BITS_PER_NAT;
    let mut rng = random::rng(8);
    let mut excess = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let pi = random::policy(&mut rng, 2, 2, 4.0);
        let h = u.value_single(l, occupancy(&cmp, &pi)?.values())? * BITS_PER_NAT;
        excess = excess.max(h - at_best);
    }
    rec.at_most("grid_max_vs_utility_bits", (at_best - best).abs(), tol::ENTROPY_GRID_BITS);
    rec.at_most("random_policy_excess_bits", excess, tol::ENTROPY_GRID_BITS);
    let mixture = PolicyMixture::new(vec![two_state_policy(p0, p1)?], vec![1.0])?;
    let grad = utility_gradient(&cmp, &mixture, &u, GradientMode::Exact)?;
    rec.at_most("gradient_norm_at_grid_max", grad.per_component[0].norm(), tol::STATIONARY_GRADIENT);
    Ok(())
}

/// Random interior point and tangent basis for potential checks.
fn interior_point(rng: &mut rand_chacha::ChaCha8Rng, k: usize) -> Result<(Cmp, DVector<f64>, DMatrix<f64>)> {
    let cmp = random::dense_cmp(rng, 2 + k % 3, 2 + k % 2, [0.5, 0.9][k % 2]);
    let pi = random::policy(rng, cmp.n_states(), cmp.n_actions(), 2.0);
    let omega = occupancy(&cmp, &pi)?.into_values();
    let basis = tangent_basis(&cmp);
    Ok((cmp, omega, basis))
}

/// Tangent-projected gradient and Hessian of `phi` against differences.
fn potential_fd_errors(phi: &Potential, l: Layout, omega: &DVector<f64>, basis: &DMatrix<f64>) -> Result<(f64, f64)> {
    let h = 1e-5;
    let grad = basis.tr_mul(&phi.gradient(l, omega)?);
    let fd_grad = oracles::fd_directional(|x| phi.value(l, x).unwrap_or(f64::NAN), omega, basis, h);
    let hess = basis.transpose() * phi.hessian(l, omega)? * basis;
    let mut fd_hess = DMatrix::zeros(basis.ncols(), basis.ncols());
    for j in 0..basis.ncols() {
        let v = basis.column(j);
        let gp = basis.tr_mul(&phi.gradient(l, &(omega + v * h))?);
        let gm = basis.tr_mul(&phi.gradient(l, &(omega - v * h))?);
        fd_hess.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    Ok((oracles::rel_err(&grad, &fd_grad, 1e-6), oracles::rel_err_mat(&hess, &fd_hess, 1e-6)))
}

fn geometry_potential_fd(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(9);
    let (mut g_worst, mut h_worst) = (0.0_f64, 0.0_f64);
    for k in 0..20 {
        let (cmp, omega, basis) = interior_point(&mut rng, k)?;
        for phi in [Potential::Kakade, Potential::FisherRao] {
            let (g, h) = potential_fd_errors(&phi, cmp.layout(), &omega, &basis)?;
            g_worst = g_worst.max(g);
            h_worst = h_worst.max(h);
        }
    }
    rec.at_most("gradient_rel_err", g_worst, tol::POTENTIAL_REL);
    rec.at_most("hessian_rel_err", h_worst, tol::POTENTIAL_REL);
    Ok(())
}

/// Barrier around a JS ball and an entropy cap, both strictly satisfied at `omega`.
fn barrier_at(cmp: &Cmp, omega: &DVector<f64>, rng: &mut rand_chacha::ChaCha8Rng, ell: BarrierKind) -> Result<Potential> {
    let l = cmp.layout();
    let reference = occupancy(cmp, &random::policy(rng, l.n_states, l.n_actions, 1.0))?;
    let js: Arc<dyn Utility> = Arc::new(js_to_reference(&reference));
    let ent: Arc<dyn Utility> = Arc::new(entropy_utility(EntropyMode::State));
    let js_bits = js.value_single(l, omega)? * BITS_PER_NAT;
    let ent_bits = ent.value_single(l, omega)? * BITS_PER_NAT;
    let constraints = vec![make_constraint(js, 1.5 * js_bits + 0.01)?, make_constraint(ent, ent_bits + 0.2)?];
    Potential::barrier(Potential::FisherRao, constraints, ell, 0.7)
}

fn geometry_barrier_hessian_fd(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(10);
    let (mut g_worst, mut h_worst) = (0.0_f64, 0.0_f64);
    for k in 0..20 {
        let (cmp, omega, basis) = interior_point(&mut rng, k)?;
        let ell = if k % 2 == 0 { BarrierKind::NegLog } else { BarrierKind::Entropic };
        let phi = barrier_at(&cmp, &omega, &mut rng, ell)?;
        let (g, h) = potential_fd_errors(&phi, cmp.layout(), &omega, &basis)?;
        g_worst = g_worst.max(g);
        h_worst = h_worst.max(h);
    }
    rec.at_most("gradient_rel_err", g_worst, tol::POTENTIAL_REL);
    rec.at_most("hessian_rel_err", h_worst, tol::BARRIER_HESSIAN_REL);
    Ok(())
}

fn geometry_fisher_rao_kl(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(13);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let (l, omegas, _) = random_mixture(&mut rng, 2)?;
        let d = bregman_divergence(&Potential::FisherRao, l, &omegas[0], &omegas[1])?;
        worst = worst.max((d - oracles::kl(omegas[0].as_slice(), omegas[1].as_slice())).abs());
    }
    rec.at_most("max_abs_gap", worst, tol::FISHER_RAO_KL);
    Ok(())
}

fn geometry_kakade_bregman(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(14);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let (l, omegas, _) = random_mixture(&mut rng, 2)?;
        let d = bregman_divergence(&Potential::Kakade, l, &omegas[0], &omegas[1])?;
        let (m0, m1) = (l.state_marginal(&omegas[0]), l.state_marginal(&omegas[1]));
        let direct: f64 = (0..l.n_states)
            .map(|s| {
                let p: Vec<f64> = (0..l.n_actions).map(|a| omegas[0][l.index(s, a)] / m0[s]).collect();
                let q: Vec<f64> = (0..l.n_actions).map(|a| omegas[1][l.index(s, a)] / m1[s]).collect();
                m0[s] * oracles::kl(&p, &q)
            })
            .sum();
        worst = worst.max((d - direct).abs());
    }
    rec.at_most("max_abs_gap", worst, tol::FISHER_RAO_KL);
    Ok(())
}

fn geometry_kakade_metric(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(15);
    let mut worst = 0.0_f64;
    for k in 0..20 {
        let cmp = random::cmp(&mut rng, 2 + k % 4, 2 + k % 3, random::GAMMAS[k % 4], 0.2);
        let pi = random::policy(&mut rng, cmp.n_states(), cmp.n_actions(), 2.0);
        let omega = occupancy(&cmp, &pi)?;
        if omega.values().min() <= 0.0 {
            // Unreachable states put the Kakade Hessian outside its domain; a
            // fresh dense instance keeps the count at 20.
            let cmp = random::dense_cmp(&mut rng, 3, 3, 0.9);
            let pi = random::policy(&mut rng, 3, 3, 2.0);
            let g = hessian_metric(&cmp, &pi, &Potential::Kakade)?.matrix;
            worst = worst.max((g - oracles::fisher_assembly(&cmp, &pi)).amax());
            continue;
        }
        let g = hessian_metric(&cmp, &pi, &Potential::Kakade)?.matrix;
        worst = worst.max((g - oracles::fisher_assembly(&cmp, &pi)).amax());
    }
    rec.at_most("max_abs_gap", worst, tol::KAKADE_FISHER);
    Ok(())
}

fn geometry_metric_psd(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(16);
    let (mut asym, mut neg, mut assembly) = (0.0_f64, 0.0_f64, 0.0_f64);
    for k in 0..20 {
        let (cmp, omega, _) = interior_point(&mut rng, k)?;
        let pi = condition_occupancy(&crate::occupancy::Occupancy::from_values(cmp.layout(), omega.clone())?)?;
        let mut potentials = vec![Potential::Kakade, Potential::FisherRao];
        potentials.push(barrier_at(&cmp, &omega, &mut rng, BarrierKind::NegLog)?);
        for phi in potentials {
            let m = hessian_metric(&cmp, &pi, &phi)?;
            let scale = m.matrix.amax().max(1e-300);
            let jac = occupancy_jacobian(&cmp, &pi)?;
            let robust = hpg_metric(cmp.layout(), &jac, &pi, &phi)?;
            assembly = assembly.max((&robust - &m.matrix).amax() / scale);
            asym = asym.max(m.asymmetry() / scale);
            neg = neg.max(-m.min_eigenvalue() / scale);
        }
    }
    rec.at_most("relative_asymmetry", asym, 1e-12);
    rec.at_most("relative_negative_eigenvalue", neg, 1e-10);
    rec.at_most("hpg_assembly_vs_pullback", assembly, 1e-10);
    Ok(())
}

fn optimizers_utility_gradient_fd(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(17);
    let mut worst = 0.0_f64;
    for k in 0..10 {
        let cmp = random::dense_cmp(&mut rng, 2 + k % 4, 2 + k % 3, [0.5, 0.9, 0.99][k % 3]);
        let (ns, na) = (cmp.n_states(), cmp.n_actions());
        let l = cmp.layout();
        for (u, n) in shipped_utilities(&cmp, &mut rng)? {
            let policies: Vec<TabularPolicy> = (0..n).map(|_| random::policy(&mut rng, ns, na, 2.0)).collect();
            let weights = random_weights(&mut rng, n);
            let mixture = PolicyMixture::new(policies.clone(), weights.clone())?;
            let grad = utility_gradient(&cmp, &mixture, u.as_ref(), GradientMode::Exact)?;
            for i in 0..n {
                let f = |theta: &DVector<f64>| -> f64 {
                    let omegas: Result<Vec<DVector<f64>>> = policies
                        .iter()
                        .enumerate()
                        .map(|(j, pi)| {
                            let p = if j == i { TabularPolicy::from_theta(theta, ns, na)? } else { pi.clone() };
                            Ok(occupancy(&cmp, &p)?.into_values())
                        })
                        .collect();
                    omegas.and_then(|o| u.value(l, &o, &weights)).unwrap_or(f64::NAN)
                };
                let fd = oracles::fd_gradient(f, &policies[i].theta(), 1e-5);
                worst = worst.max(oracles::rel_err(&grad.per_component[i], &fd, 1e-6));
            }
        }
    }
    rec.at_most("max_rel_err", worst, tol::GRADIENT_REL);
    Ok(())
}

fn optimizers_surrogate_equivalence(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(18);
    let (mut grad_gap, mut hess_gap) = (0.0_f64, 0.0_f64);
    for k in 0..20 {
        let cmp = random::dense_cmp(&mut rng, 2 + k % 5, 2 + k % 3, random::GAMMAS[k % 4]);
        let pi = random::policy(&mut rng, cmp.n_states(), cmp.n_actions(), 2.0);
        let utilities = shipped_utilities(&cmp, &mut rng)?;
        let singles: Vec<_> = utilities.into_iter().filter(|(_, n)| *n == 1).collect();
        let (u, _) = &singles[k % singles.len()];
        let report = surrogate_equivalence_check(&cmp, &pi, u.as_ref())?;
        grad_gap = grad_gap.max(report.gradient_gap);
        hess_gap = hess_gap.max(report.hessian_gap);
    }
    rec.at_most("gradient_gap", grad_gap, tol::GRADIENT_GAP);
    rec.at_most("hessian_gap", hess_gap, tol::HESSIAN_GAP);
    Ok(())
}

fn optimizers_sampled_cosine(rec: &mut Recorder) -> Result<()> {
    let cmp = build_two_state(&TwoStateSpec::default())?;
    let mut rng = random::rng(19);
    let mut worst = f64::INFINITY;
    let u = entropy_utility(EntropyMode::StateAction);
    for k in 0..3 {
        let pi = random::policy(&mut rng, 2, 2, 1.0);
        let mixture = PolicyMixture::new(vec![pi], vec![1.0])?;
        let exact = utility_gradient(&cmp, &mixture, &u, GradientMode::Exact)?.per_component.remove(0);
        let sampled = utility_gradient(&cmp, &mixture, &u, GradientMode::Sampled { n_traj: MC_TRAJECTORIES, seed: 500 + k })?
            .per_component
            .remove(0);
        worst = worst.min(exact.dot(&sampled) / (exact.norm() * sampled.norm()));
    }
    rec.at_least("min_cosine", worst, tol::SAMPLED_COSINE);
    Ok(())
}

fn optimizers_hpg_direction(rec: &mut Recorder) -> Result<()> {
    let cmp = build_two_state(&TwoStateSpec::default())?;
    let mut rng = random::rng(20);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let r = random::vector(&mut rng, 4, 0.0, 1.0);
        let problem = Problem::new(cmp.clone(), Arc::new(linear_utility(r)?), vec![], vec![1.0])?;
        let pi = random::policy(&mut rng, 2, 2, 2.0);
        let state = OptimizerState::new(vec![pi.theta()], 0, 0.1);
        let config = OptimizerConfig::default();
        let eval = evaluate(&state, &problem, &config)?;
        let dir = hpg_directions(&eval, &problem, &GeometryConfig::default())?.remove(0);
        let fisher = oracles::fisher_assembly(&cmp, &pi);
        let reference = oracles::pinv_apply(&fisher, &eval.ascent[0], 1e-10);
        worst = worst.max(oracles::rel_err(&dir, &reference, 1e-12));
    }
    rec.at_most("max_rel_err_vs_pinv", worst, tol::NATURAL_DIRECTION);
    Ok(())
}

fn optimizers_hpg_monotone(rec: &mut Recorder) -> Result<()> {
    let mut rng = random::rng(21);
    let mut worst_drop = f64::NEG_INFINITY;
    for k in 0..3 {
        let cmp = random::dense_cmp(&mut rng, 4, 3, 0.9);
        let u: Arc<dyn Utility> = if k == 0 {
            Arc::new(linear_utility(random::vector(&mut rng, 12, 0.0, 1.0))?)
        } else {
            Arc::new(entropy_utility(EntropyMode::StateAction))
        };
        let problem = Problem::new(cmp.clone(), u, vec![], vec![1.0])?;
        let pi = random::policy(&mut rng, 4, 3, 2.0);
        let config = OptimizerConfig { kind: OptimizerKind::Hpg, steps: 200, step_size: 1e-3, ..Default::default() };
        let out = run_optimization(&problem, &config, &GeometryConfig::default(), OptimizerState::new(vec![pi.theta()], 0, 1e-3))?;
        for w in out.log.records.windows(2) {
            worst_drop = worst_drop.max(w[0].utility_bits - w[1].utility_bits);
        }
    }
    rec.at_most("max_decrease", worst_drop, tol::MONOTONE_DROP);
    Ok(())
}

fn optimizers_vpg_dual(rec: &mut Recorder) -> Result<()> {
    let cmp = build_two_state(&TwoStateSpec::default())?;
    let ent: Arc<dyn Utility> = Arc::new(entropy_utility(EntropyMode::StateAction));
    let l = cmp.layout();
    let omega = occupancy(&cmp, &TabularPolicy::uniform(2, 2))?.into_values();
    let bits = ent.value_single(l, &omega)? * BITS_PER_NAT;
    // One cap below the uniform policy's entropy (violated), one above it.
    let tight = make_constraint(ent.clone(), bits - 0.5)?;
    let loose = make_constraint(ent.clone(), bits + 0.5)?;
    let problem = Problem::new(cmp, ent, vec![tight.clone(), loose.clone()], vec![1.0])?;
    let config = OptimizerConfig { kind: OptimizerKind::Vpg, dual_step_size: 0.5, ..Default::default() };
    let state = OptimizerState::uniform(&problem, 0.1);
    let g_tight = tight.value(l, &omega)?;
    let next = vpg_lagrangian_step(&state, &problem, &config)?;
    rec.at_most("violated_multiplier_err", (next.multipliers[0] - 0.5 * g_tight).abs(), 1e-15);
    rec.at_most("slack_multiplier", next.multipliers[1], 0.0);
    rec.holds("violated_multiplier_positive", g_tight > 0.0 && next.multipliers[0] > 0.0);
    Ok(())
}

fn optimizers_proximal(rec: &mut Recorder) -> Result<()> {
    let cmp = build_two_state(&TwoStateSpec::default())?;
    let problem = Problem::new(cmp.clone(), Arc::new(entropy_utility(EntropyMode::StateAction)), vec![], vec![1.0])?;
    let start = OptimizerState::new(vec![DVector::from_row_slice(&[2.0, -2.0, 2.0, -2.0])], 0, 0.0);
    let base = OptimizerConfig { kind: OptimizerKind::Proximal, ..Default::default() };

    // A vanishing step keeps the policy.
    let config = OptimizerConfig { step_size: 1e-9, ..base.clone() };
    let next = proximal_surrogate_step(&start, &problem, &config)?;
    let moved = (next.policies(&cmp)?[0].probs() - start.policies(&cmp)?[0].probs()).amax();
    rec.at_most("policy_change_at_tiny_eta", moved, tol::PROXIMAL_STILL);

    // One inner step from θ_k is a vanilla step of length min(inner_lr, η).
    let config = OptimizerConfig { step_size: 1e-2, inner_steps: 1, ..base.clone() };
    let next = proximal_surrogate_step(&start, &problem, &config)?;
    let grad = &evaluate(&start, &problem, &config)?.ascent[0];
    let expected = TabularPolicy::from_theta(&(&start.thetas[0] + grad * 1e-2), 2, 2)?;
    let got = &next.policies(&cmp)?[0];
    rec.at_most("single_inner_step_vs_vanilla", (got.probs() - expected.probs()).amax(), 1e-14);

    // Small proximal steps ascend.
    let mut rise = f64::INFINITY;
    for eta in [1e-2, 1e-1] {
        let config = OptimizerConfig { step_size: eta, ..base.clone() };
        let next = proximal_surrogate_step(&start, &problem, &config)?;
        rise = rise.min(evaluate(&next, &problem, &config)?.metrics.utility - evaluate(&start, &problem, &config)?.metrics.utility);
    }
    rec.at_least("min_utility_rise", rise, 0.0);

    // Linear utilities reach the value-iteration optimum.
    let mut worst = 0.0_f64;
    let mut rng = random::rng(22);
    for _ in 0..5 {
        let cmp = random::cmp(&mut rng, 5, 3, 0.9, 0.0);
        let r = random::vector(&mut rng, 15, 0.0, 1.0);
        let opt = solve_linear_baseline(&cmp, &r)?;
        let problem = Problem::new(cmp, Arc::new(linear_utility(r)?), vec![], vec![1.0])?;
        let config = OptimizerConfig { step_size: 1.0, steps: 1000, ..base.clone() };
        let out = run_optimization(&problem, &config, &GeometryConfig::default(), OptimizerState::uniform(&problem, 1.0))?;
        let value = out.log.last().map(|r| r.utility_bits).unwrap_or(f64::NAN);
        worst = worst.max((opt.value - value).abs() / opt.value.abs());
    }
    rec.at_most("linear_rel_gap_to_optimum", worst, tol::LINEAR_REL);
    Ok(())
}

pub const LINEAR_SEEDS: usize = 20;
pub const LINEAR_ITERATIONS: usize = 500;

/// Relative gap to the linear optimum after HPG, for one seed.
pub fn linear_sanity_gap(seed: u64) -> Result<f64> {
    let mut rng = random::rng(1000 + seed);
    let cmp = random::cmp(&mut rng, 5, 3, 0.9, 0.0);
    let r = random::vector(&mut rng, 15, 0.0, 1.0);
    let opt = solve_linear_baseline(&cmp, &r)?;
    let problem = Problem::new(cmp, Arc::new(linear_utility(r)?), vec![], vec![1.0])?;
    let config = OptimizerConfig { kind: OptimizerKind::Hpg, steps: LINEAR_ITERATIONS, step_size: 1.0, seed, ..Default::default() };
    let init = OptimizerState::uniform(&problem, 1.0);
    let out = run_optimization(&problem, &config, &GeometryConfig::default(), init)?;
    let value = out.log.last().map(|r| r.utility_bits).unwrap_or(f64::NAN);
    Ok((opt.value - value).abs() / opt.value.abs())
}

fn optimizers_linear_sanity(rec: &mut Recorder) -> Result<()> {
    let mut hits = 0;
    let mut oracle_gap = 0.0_f64;
    for seed in 0..LINEAR_SEEDS as u64 {
        if linear_sanity_gap(seed)? <= tol::LINEAR_REL {
            hits += 1;
        }
        let mut rng = random::rng(1000 + seed);
        let cmp = random::cmp(&mut rng, 5, 3, 0.9, 0.0);
        let r = random::vector(&mut rng, 15, 0.0, 1.0);
        let (best, _) = oracles::enumerate_deterministic(&cmp, &r);
        oracle_gap = oracle_gap.max((solve_linear_baseline(&cmp, &r)?.value - best).abs());
    }
    rec.at_least("seed_fraction_within_tol", hits as f64 / LINEAR_SEEDS as f64, tol::LINEAR_SEED_FRACTION);
    let mut chain_gap = 0.0_f64;
    let mut rng = random::rng(23);
    for _ in 0..5 {
        let cmp = build_two_state(&TwoStateSpec::default())?;
        let r = random::vector(&mut rng, 4, 0.0, 1.0);
        let opt = solve_linear_baseline(&cmp, &r)?;
        let problem = Problem::new(cmp, Arc::new(linear_utility(r)?), vec![], vec![1.0])?;
        let config = OptimizerConfig { kind: OptimizerKind::Hpg, steps: LINEAR_ITERATIONS, step_size: 1.0, ..Default::default() };
        let out = run_optimization(&problem, &config, &GeometryConfig::default(), OptimizerState::uniform(&problem, 1.0))?;
        let value = out.log.last().map(|r| r.utility_bits).unwrap_or(f64::NAN);
        chain_gap = chain_gap.max((opt.value - value).abs());
    }
    rec.at_most("two_state_abs_gap", chain_gap, tol::LINEAR_REL);
    rec.at_most("value_iteration_vs_enumeration", oracle_gap, 1e-9);
    Ok(())
}

static TWO_STATE_PAIR: OnceLock<std::result::Result<PairOutcome, String>> = OnceLock::new();
static GRID_PAIR: OnceLock<std::result::Result<PairOutcome, String>> = OnceLock::new();

fn cached_pair(cell: &'static OnceLock<std::result::Result<PairOutcome, String>>, preset: &str) -> Result<&'static PairOutcome> {
    cell.get_or_init(|| harness::preset(preset).and_then(|c| harness::run_pair(&c)).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| Error::Config(e.clone()))
}

/// Paired VPG/HPG run of the two-state preset (computed once per process).
pub fn two_state_pair() -> Result<&'static PairOutcome> {
    cached_pair(&TWO_STATE_PAIR, "twostate_fig3")
}

/// Paired VPG/HPG run of the gridworld preset (computed once per process).
pub fn gridworld_pair() -> Result<&'static PairOutcome> {
    cached_pair(&GRID_PAIR, "gridworld_fig2")
}

fn optimizers_maxent_two_state(rec: &mut Recorder) -> Result<()> {
    let pair = two_state_pair()?;
    let gamma = TwoStateSpec::default().gamma;
    let (best, _, _) = oracles::chain_entropy_grid_max(gamma, 200, 3);
    let hpg = pair.summary["hpg"].final_utility_bits;
    let vpg = pair.summary["vpg"].final_utility_bits;
    rec.at_most("hpg_gap_to_grid_max_bits", best - hpg, tol::MAXENT_BITS);
    rec.at_least("vpg_gap_to_grid_max_bits", best - vpg, tol::MAXENT_BITS);
    rec.at_least("hpg_minus_vpg_bits", hpg - vpg, 0.0);
    Ok(())
}

fn optimizers_constrained_gridworld(rec: &mut Recorder) -> Result<()> {
    let pair = gridworld_pair()?;
    let hpg = &pair.summary["hpg"];
    let vpg = &pair.summary["vpg"];
    let worst_js = hpg.final_constraint_bits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    rec.at_most("hpg_max_js_bits", worst_js, tol::JS_THRESHOLD_BITS + tol::JS_SLACK_BITS);
    rec.at_least("hpg_mi_positive", if hpg.final_utility_bits > 0.0 { 1.0 } else { 0.0 }, 1.0);
    rec.at_least("hpg_minus_vpg_mi_bits", hpg.final_utility_bits - vpg.final_utility_bits, 0.0);
    rec.holds("hpg_all_iterates_feasible", hpg.all_iterates_feasible);
    rec.holds("equal_budget", hpg.iterations == vpg.iterations);
    Ok(())
}

fn optimizers_barrier_feasibility(rec: &mut Recorder) -> Result<()> {
    let pair = gridworld_pair()?;
    let thresholds: Vec<f64> = {
        let config = harness::preset("gridworld_fig2")?;
        let setup = harness::build(&config)?;
        setup.problem.constraints.iter().map(|c| c.unit().to_report(c.threshold)).collect()
    };
    let min_slack = pair
        .hpg
        .log
        .records
        .iter()
        .flat_map(|r| r.constraint_bits.iter().zip(&thresholds).map(|(d, b)| b - d))
        .fold(f64::INFINITY, f64::min);
    rec.at_least("iterates", pair.hpg.log.len() as f64, 2.0);
    rec.holds("min_slack_positive", min_slack > 0.0);
    rec.at_least("min_slack_bits", min_slack, 0.0);
    let worst_flow = pair.hpg.log.records.iter().map(|r| r.flow_residual).fold(0.0, f64::max);
    rec.at_most("logged_flow_residual", worst_flow, tol::FLOW_RESIDUAL);
    Ok(())
}

fn envs_validate(rec: &mut Recorder) -> Result<()> {
    let specs = [
        GridSpec::default(),
        GridSpec { slip: 0.2, ..GridSpec::default() },
        GridSpec { width: 1, height: 3, green: vec![], red: vec![], ..GridSpec::default() },
    ];
    let mut all = true;
    for spec in &specs {
        all &= validate_cmp(&build_gridworld(spec)?.to_spec()).is_valid();
    }
    all &= validate_cmp(&build_two_state(&TwoStateSpec::default())?.to_spec()).is_valid();
    rec.holds("all_valid", all);
    Ok(())
}

fn envs_rotation_symmetry(rec: &mut Recorder) -> Result<()> {
    let mut worst = 0.0_f64;
    for n in [3, 4, 5] {
        let spec = GridSpec { width: n, height: n, green: vec![], red: vec![], slip: 0.0, ..GridSpec::default() };
        let cmp = build_gridworld(&spec)?;
        let d = crate::occupancy::state_occupancy(&cmp, &TabularPolicy::uniform(n * n, 5))?;
        for s in 0..n * n {
            let [x, y] = spec.cell(s);
            let rotated = spec.state([n - 1 - y, x]);
            worst = worst.max((d[s] - d[rotated]).abs());
        }
    }
    rec.at_most("max_abs_gap", worst, tol::SYMMETRY);
    Ok(())
}

fn harness_config_round_trip(rec: &mut Recorder) -> Result<()> {
    let mut all = true;
    for name in harness::PRESETS {
        let config = harness::preset(name)?;
        all &= ExperimentConfig::from_toml(&config.to_toml()?)? == config;
        let json = serde_json::to_string(&config).map_err(|e| Error::Config(e.to_string()))?;
        all &= ExperimentConfig::from_json(&json)? == config;
        harness::build(&config)?;
    }
    rec.holds("presets_round_trip", all);
    Ok(())
}

fn harness_plotdata(rec: &mut Recorder) -> Result<()> {
    let pair = two_state_pair()?;
    let single = emit_plotdata(&[&pair.hpg.log])?;
    let both = emit_plotdata(&[&pair.vpg.log, &pair.hpg.log])?;
    rec.holds("single_rows", single.lines().count() == 1 + pair.hpg.log.len());
    rec.holds("concatenated_rows", both.lines().count() == 1 + pair.vpg.log.len() + pair.hpg.log.len());
    rec.holds("labels", both.lines().skip(1).all(|l| l.starts_with("vpg,") || l.starts_with("hpg,")));
    rec.holds("rewrite_identical", emit_plotdata(&[&pair.vpg.log, &pair.hpg.log])? == both);
    rec.holds("empty_rejected", emit_plotdata(&[]).is_err());
    Ok(())
}

fn harness_determinism(rec: &mut Recorder) -> Result<()> {
    let config = harness::preset("twostate_fig3")?;
    let a = harness::run_pair(&config)?;
    let b = harness::run_pair(&config)?;
    rec.holds("vpg_csv_identical", a.vpg.log.to_csv() == b.vpg.log.to_csv());
    rec.holds("hpg_csv_identical", a.hpg.log.to_csv() == b.hpg.log.to_csv());
    let mut sampled = config.clone();
    sampled.optimizer.mode = crate::optimizers::SamplingMode::Sampled;
    sampled.optimizer.n_traj = 200;
    sampled.optimizer.steps = 5;
    let c = harness::solve(&sampled)?;
    let d = harness::solve(&sampled)?;
    rec.holds("sampled_csv_identical", c.log.to_csv() == d.log.to_csv());
    Ok(())
}
