use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmp::{Cmp, CmpSpec, TabularPolicy};
use crate::envs::{build_expert_policy, build_gridworld, build_two_state, GridSpec, TwoStateSpec};
use crate::error::{Error, Result};
use crate::occupancy::sampling::rng_for;
use crate::occupancy::{occupancy, Occupancy};
use crate::optimizers::{GeometryConfig, OptimizerConfig, OptimizerState, Problem};
use crate::utilities::{
    entropy_utility, js_to_reference, linear_utility, make_constraint, mixture_mutual_information, Constraint,
    EntropyMode, LabelSpace, Utility,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Gridworld(GridSpec),
    TwoState(TwoStateSpec),
    /// A CMP file in JSON or TOML.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    Linear {
        reward: Vec<f64>,
    },
    Entropy {
        #[serde(default = "default_entropy_mode")]
        mode: EntropyMode,
    },
    MixtureMi {
        #[serde(default = "default_label_space")]
        label_space: LabelSpace,
    },
    JsToReference {
        /// Reference occupancy in state-action layout; the gridworld expert's
        /// occupancy when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<Vec<f64>>,
    },
}

fn default_entropy_mode() -> EntropyMode {
    EntropyMode::StateAction
}

fn default_label_space() -> LabelSpace {
    LabelSpace::State
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    #[serde(flatten)]
    pub base: UtilitySpec,
    /// Threshold in the base's reporting unit: bits for information
    /// quantities, raw value otherwise.
    pub threshold_bits: f64,
    /// Constrained component; every component when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// All-zero logits.
    #[default]
    Uniform,
    /// Logits drawn uniformly from `[-scale, scale]`.
    Random {
        #[serde(default = "default_init_scale")]
        scale: f64,
    },
    /// Gridworld expert logits plus uniform noise in `[-noise, noise]`.
    Expert {
        #[serde(default = "default_init_scale")]
        noise: f64,
    },
    /// Explicit flattened logits shared by every component.
    Logits { values: Vec<f64> },
}

fn default_init_scale() -> f64 {
    0.1
}

/// Step-size overrides for the paired VPG/HPG comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PairSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vpg_step_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hpg_step_size: Option<f64>,
}

fn default_components() -> usize {
    1
}

/// One experiment: environment, objective, optimizer and geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Number of mixture components; label weights are uniform.
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub environment: EnvironmentSpec,
    pub utility: UtilitySpec,
    /// Single-constraint shorthand, merged into `constraints`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub pair: PairSpec,
}

const GRIDWORLD_FIG2: &str = include_str!("../../presets/gridworld_fig2.toml");
const TWOSTATE_FIG3: &str = include_str!("../../presets/twostate_fig3.toml");

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 2] = ["gridworld_fig2", "twostate_fig3"];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads JSON (`.json`) or TOML (anything else).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text)?,
            _ => Self::from_toml(&text)?,
        };
        // Relative CMP paths resolve against the config's directory.
        if let EnvironmentSpec::File { path: cmp_path } = &mut config.environment {
            if cmp_path.is_relative() {
                if let Some(dir) = path.parent() {
                    *cmp_path = dir.join(&*cmp_path);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn all_constraints(&self) -> Vec<ConstraintSpec> {
        self.constraint.iter().chain(&self.constraints).cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::Config("components must be at least 1".into()));
        }
        self.optimizer.validate()?;
        if let Some(b) = &self.geometry.barrier {
            if !(b.beta > 0.0 && b.beta.is_finite()) {
                return Err(Error::Config(format!("barrier beta must be positive, got {}", b.beta)));
            }
        }
        for c in self.all_constraints() {
            if !c.threshold_bits.is_finite() {
                return Err(Error::Config("constraint threshold must be finite".into()));
            }
            if let Some(i) = c.component {
                if i >= self.components {
                    return Err(Error::Config(format!("constraint on component {i} of {}", self.components)));
                }
            }
        }
        for step in [self.pair.vpg_step_size, self.pair.hpg_step_size].into_iter().flatten() {
            if !(step >= 0.0 && step.is_finite()) {
                return Err(Error::Config(format!("step size must be finite and >= 0, got {step}")));
            }
        }
        Ok(())
    }
}

/// Built-in configuration by name.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "gridworld_fig2" | "gridworld" => ExperimentConfig::from_toml(GRIDWORLD_FIG2),
        "twostate_fig3" | "twostate" => ExperimentConfig::from_toml(TWOSTATE_FIG3),
        other => Err(Error::Config(format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")))),
    }
}

/// Everything instantiated from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: Problem,
    pub init: OptimizerState,
    /// Gridworld expert, when the environment has one.
    pub expert: Option<TabularPolicy>,
}

pub fn build_cmp(env: &EnvironmentSpec) -> Result<(Cmp, Option<TabularPolicy>)> {
    match env {
        EnvironmentSpec::Gridworld(spec) => {
            let cmp = build_gridworld(spec)?;
            let expert = build_expert_policy(&cmp, spec)?;
            Ok((cmp, Some(expert)))
        }
        EnvironmentSpec::TwoState(spec) => Ok((build_two_state(spec)?, None)),
        EnvironmentSpec::File { path } => Ok((Cmp::new(CmpSpec::load(path)?)?, None)),
    }
}

fn build_utility(spec: &UtilitySpec, cmp: &Cmp, expert: Option<&TabularPolicy>) -> Result<Arc<dyn Utility>> {
    let n = cmp.layout().len();
    Ok(match spec {
        UtilitySpec::Linear { reward } => {
            if reward.len() != n {
                return Err(Error::Config(format!("linear reward has {} entries, expected {n}", reward.len())));
            }
            Arc::new(linear_utility(DVector::from_vec(reward.clone()))?)
        }
        UtilitySpec::Entropy { mode } => Arc::new(entropy_utility(*mode)),
        UtilitySpec::MixtureMi { label_space } => Arc::new(mixture_mutual_information(*label_space)),
        UtilitySpec::JsToReference { reference } => {
            let omega = match (reference, expert) {
                (Some(values), _) => Occupancy::from_values(cmp.layout(), DVector::from_vec(values.clone()))
                    .map_err(|e| Error::Config(format!("reference occupancy: {e}")))?,
                (None, Some(pi)) => occupancy(cmp, pi)?,
                (None, None) => {
                    return Err(Error::Config("js_to_reference needs a reference occupancy outside the gridworld".into()))
                }
            };
            Arc::new(js_to_reference(&omega))
        }
    })
}

fn initial_thetas(config: &ExperimentConfig, cmp: &Cmp, expert: Option<&TabularPolicy>) -> Result<Vec<DVector<f64>>> {
    let n = cmp.layout().len();
    let mut rng = rng_for(config.optimizer.seed ^ 0x1417_0000);
    let noise = |rng: &mut rand_chacha::ChaCha8Rng, scale: f64| -> DVector<f64> {
        DVector::from_fn(n, |_, _| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
    };
    (0..config.components)
        .map(|_| match &config.init {
            InitSpec::Uniform => Ok(DVector::zeros(n)),
            InitSpec::Random { scale } => Ok(noise(&mut rng, *scale)),
            InitSpec::Expert { noise: scale } => {
                let pi = expert.ok_or_else(|| Error::Config("expert initialization needs a gridworld environment".into()))?;
                Ok(pi.theta() + noise(&mut rng, *scale))
            }
            InitSpec::Logits { values } => {
                if values.len() != n {
                    return Err(Error::Config(format!("init logits have {} entries, expected {n}", values.len())));
                }
                Ok(DVector::from_vec(values.clone()))
            }
        })
        .collect()
}

/// Instantiates the problem and initial iterate described by `config`.
pub fn build(config: &ExperimentConfig) -> Result<Setup> {
    config.validate()?;
    let (cmp, expert) = build_cmp(&config.environment)?;
    let utility = build_utility(&config.utility, &cmp, expert.as_ref())?;
    let mut constraints: Vec<Constraint> = Vec::new();
    for spec in config.all_constraints() {
        let base = build_utility(&spec.base, &cmp, expert.as_ref())?;
        let c = make_constraint(base, spec.threshold_bits).map_err(|e| Error::Config(e.to_string()))?;
        match spec.component {
            Some(i) => constraints.push(c.on_component(i)),
            None => constraints.extend((0..config.components).map(|i| c.clone().on_component(i))),
        }
    }
    let weights = vec![1.0 / config.components as f64; config.components];
    let thetas = initial_thetas(config, &cmp, expert.as_ref())?;
    for t in &thetas {
        // Rejects logit spreads that underflow the softmax.
        TabularPolicy::from_logits(DMatrix::from_fn(cmp.n_states(), cmp.n_actions(), |s, a| t[s * cmp.n_actions() + a]))?;
    }
    let n_constraints = constraints.len();
    let problem = Problem::new(cmp, utility, constraints, weights)?;
    let init = OptimizerState::new(thetas, n_constraints, config.optimizer.step_size);
    Ok(Setup { problem, init, expert })
}
