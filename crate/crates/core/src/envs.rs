//! Environment constructors: an open gridworld with rewarded and penalized
//! cells, its Boltzmann expert, and the two-state stay/switch chain.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cmp::{Cmp, CmpSpec, TabularPolicy};
use crate::error::{Error, Result};
use crate::occupancy::solve_linear_baseline;

/// Gridworld actions in kernel order.
pub const GRID_ACTIONS: [&str; 5] = ["up", "down", "left", "right", "stay"];
const MOVES: [(i64, i64); 5] = [(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)];

/// A cell as `[x, y]`, `x` the column and `y` the row (row 0 on top).
pub type Cell = [usize; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub green: Vec<Cell>,
    pub red: Vec<Cell>,
    /// Probability that the chosen move is replaced by one of the other four
    /// actions, uniformly.
    pub slip: f64,
    pub gamma: f64,
    /// Boltzmann temperature of the expert policy.
    pub temperature: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            green: vec![[0, 0], [4, 4]],
            red: vec![[4, 0], [0, 4], [2, 2]],
            slip: 0.0,
            gamma: 0.9,
            temperature: 0.3,
        }
    }
}

impl GridSpec {
    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn state(&self, cell: Cell) -> usize {
        cell[1] * self.width + cell[0]
    }

    pub fn cell(&self, state: usize) -> Cell {
        [state % self.width, state / self.width]
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.width == 0 || self.height == 0 {
            problems.push(format!("grid must be non-empty, got {}x{}", self.width, self.height));
        }
        for c in self.green.iter().chain(&self.red) {
            if c[0] >= self.width || c[1] >= self.height {
                problems.push(format!("cell {c:?} outside the {}x{} grid", self.width, self.height));
            }
        }
        for c in &self.green {
            if self.red.contains(c) {
                problems.push(format!("cell {c:?} is both green and red"));
            }
        }
        if !(0.0..1.0).contains(&self.slip) {
            problems.push(format!("slip must be in [0, 1), got {}", self.slip));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            problems.push(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(self.temperature > 0.0) {
            problems.push(format!("temperature must be positive, got {}", self.temperature));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidCmp(problems))
        }
    }

    fn target(&self, state: usize, action: usize) -> usize {
        let [x, y] = self.cell(state);
        let (dx, dy) = MOVES[action];
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            state
        } else {
            self.state([nx as usize, ny as usize])
        }
    }

    /// State reward: +1 on green cells, -1 on red cells.
    pub fn cell_reward(&self) -> DVector<f64> {
        let mut r = DVector::zeros(self.n_states() * GRID_ACTIONS.len());
        for (cells, value) in [(&self.green, 1.0), (&self.red, -1.0)] {
            for c in cells {
                let s = self.state(*c);
                for a in 0..GRID_ACTIONS.len() {
                    r[s * GRID_ACTIONS.len() + a] = value;
                }
            }
        }
        r
    }
}

/// Gridworld CMP: intended move with probability `1 - slip`, otherwise one of
/// the other four actions uniformly; off-grid moves stay put; `μ` uniform.
pub fn build_gridworld(spec: &GridSpec) -> Result<Cmp> {
    spec.validate()?;
    let ns = spec.n_states();
    let na = GRID_ACTIONS.len();
    let kernel = (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    let mut row = vec![0.0; ns];
                    for b in 0..na {
                        let p = if a == b { 1.0 - spec.slip } else { spec.slip / (na - 1) as f64 };
                        row[spec.target(s, b)] += p;
                    }
                    row
                })
                .collect()
        })
        .collect();
    Cmp::new(CmpSpec { n_states: ns, n_actions: na, kernel, mu: vec![1.0 / ns as f64; ns], gamma: spec.gamma })
}

/// Boltzmann policy `π(a|s) ∝ exp(Q*(s,a)/τ)` over the optimal Q-values of
/// the cell reward.
pub fn build_expert_policy(cmp: &Cmp, spec: &GridSpec) -> Result<TabularPolicy> {
    let r = spec.cell_reward();
    if r.len() != cmp.layout().len() {
        return Err(Error::DimensionMismatch { expected: cmp.layout().len(), got: r.len() });
    }
    let opt = solve_linear_baseline(cmp, &r)?;
    let l = cmp.layout();
    let logits = DMatrix::from_fn(l.n_states, l.n_actions, |s, a| opt.q[l.index(s, a)] / spec.temperature);
    TabularPolicy::from_logits(logits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStateSpec {
    pub gamma: f64,
    pub mu: Vec<f64>,
}

impl Default for TwoStateSpec {
    fn default() -> Self {
        Self { gamma: 0.9, mu: vec![1.0, 0.0] }
    }
}

/// Stay/switch chain: action 0 keeps the state, action 1 flips it.
pub fn build_two_state(spec: &TwoStateSpec) -> Result<Cmp> {
    Cmp::new(CmpSpec {
        n_states: 2,
        n_actions: 2,
        kernel: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
        mu: spec.mu.clone(),
        gamma: spec.gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmp::validate_cmp;
    use crate::occupancy::{occupancy, state_occupancy};

    fn plain(width: usize, height: usize) -> GridSpec {
        GridSpec { width, height, green: vec![], red: vec![], ..GridSpec::default() }
    }

    #[test]
    fn single_cell_self_loops() {
        let cmp = build_gridworld(&plain(1, 1)).unwrap();
        for a in 0..5 {
            assert_eq!(cmp.p(0, a, 0), 1.0);
        }
        let d = state_occupancy(&cmp, &TabularPolicy::uniform(1, 5)).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_rows_are_one_hot() {
        let cmp = build_gridworld(&GridSpec::default()).unwrap();
        for s in 0..25 {
            for a in 0..5 {
                let row = cmp.kernel_row(s, a);
                assert_eq!(row.iter().filter(|p| **p == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|p| **p != 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn slip_rows_match_neighbor_enumeration() {
        let spec = GridSpec { slip: 0.1, ..GridSpec::default() };
        let cmp = build_gridworld(&spec).unwrap();
        assert!(validate_cmp(&cmp.to_spec()).is_valid());
        for s in 0..25 {
            let [x, y] = spec.cell(s);
            let mut reachable = vec![s];
            if y > 0 {
                reachable.push(s - 5);
            }
            if y < 4 {
                reachable.push(s + 5);
            }
            if x > 0 {
                reachable.push(s - 1);
            }
            if x < 4 {
                reachable.push(s + 1);
            }
            for a in 0..5 {
                let row = cmp.kernel_row(s, a);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let nz: Vec<usize> = (0..25).filter(|&t| row[t] > 0.0).collect();
                assert!(nz.len() <= 5);
                assert!(nz.iter().all(|t| reachable.contains(t)));
            }
        }
    }

    #[test]
    fn uniform_occupancy_is_rotation_invariant() {
        let spec = plain(5, 5);
        let cmp = build_gridworld(&spec).unwrap();
        let d = state_occupancy(&cmp, &TabularPolicy::uniform(25, 5)).unwrap();
        for s in 0..25 {
            let [x, y] = spec.cell(s);
            let rotated = spec.state([4 - y, x]);
            assert!((d[s] - d[rotated]).abs() < 1e-10);
        }
    }

    #[test]
    fn expert_prefers_green() {
        let spec = GridSpec::default();
        let cmp = build_gridworld(&spec).unwrap();
        let pi = build_expert_policy(&cmp, &spec).unwrap();
        assert!(pi.probs().iter().all(|p| *p > 0.0));
        let d = state_occupancy(&cmp, &pi).unwrap();
        let green: f64 = spec.green.iter().map(|c| d[spec.state(*c)]).sum();
        let red: f64 = spec.red.iter().map(|c| d[spec.state(*c)]).sum();
        assert!(green >= 2.0 * red, "green {green} red {red}");
    }

    #[test]
    fn expert_without_cells_is_uniform() {
        let spec = plain(5, 5);
        let cmp = build_gridworld(&spec).unwrap();
        let pi = build_expert_policy(&cmp, &spec).unwrap();
        assert!(pi.probs().iter().all(|p| (p - 0.2).abs() < 1e-12));
    }

    #[test]
    fn expert_flattens_at_high_temperature() {
        let spec = GridSpec { temperature: 1e12, ..GridSpec::default() };
        let cmp = build_gridworld(&spec).unwrap();
        let pi = build_expert_policy(&cmp, &spec).unwrap();
        assert!(pi.probs().iter().all(|p| (p - 0.2).abs() < 1e-9));
    }

    #[test]
    fn invalid_specs_rejected() {
        let overlap = GridSpec { green: vec![[1, 1]], red: vec![[1, 1]], ..GridSpec::default() };
        assert!(build_gridworld(&overlap).is_err());
        let outside = GridSpec { green: vec![[5, 0]], ..GridSpec::default() };
        assert!(build_gridworld(&outside).is_err());
    }

    #[test]
    fn two_state_chain() {
        let cmp = build_two_state(&TwoStateSpec { gamma: 0.5, ..TwoStateSpec::default() }).unwrap();
        let omega = occupancy(&cmp, &TabularPolicy::uniform(2, 2)).unwrap();
        for (x, e) in omega.values().iter().zip([0.375, 0.375, 0.125, 0.125]) {
            assert!((x - e).abs() < 1e-12);
        }
        let stay = TabularPolicy::from_logits(DMatrix::from_row_slice(2, 2, &[30.0, -30.0, 30.0, -30.0])).unwrap();
        let d = state_occupancy(&cmp, &stay).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && d[1].abs() < 1e-12);
        let switch = TabularPolicy::from_logits(DMatrix::from_row_slice(2, 2, &[-30.0, 30.0, -30.0, 30.0])).unwrap();
        let d = state_occupancy(&cmp, &switch).unwrap();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-12 && (d[1] - 1.0 / 3.0).abs() < 1e-12);
    }
}
