//! Experiment driver: configs, single runs, the paired VPG/HPG comparison,
//! and the CSV/JSON artifacts they produce.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{
    build, build_cmp, preset, ConstraintSpec, EnvironmentSpec, ExperimentConfig, InitSpec, PairSpec, Setup,
    UtilitySpec, PRESETS,
};

use crate::error::{Error, Result};
use crate::occupancy::Occupancy;
use crate::optimizers::{run_optimization, OptimizerKind, RunLog, RunOutcome, SamplingMode};

/// Runs the configured optimizer once.
pub fn solve(config: &ExperimentConfig) -> Result<RunOutcome> {
    let setup = build(config)?;
    run_optimization(&setup.problem, &config.optimizer, &config.geometry, setup.init)
}

/// Writes `runlog.csv` and `occupancy.csv` for a single run.
pub fn write_solve(out_dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    outcome.log.write_csv(&out_dir.join("runlog.csv"))?;
    fs::write(out_dir.join("occupancy.csv"), occupancies_csv(&outcome.final_occupancies))?;
    Ok(())
}

/// Long-format occupancy table `component,s,a,omega`.
pub fn occupancies_csv(omegas: &[Occupancy]) -> String {
    let mut out = String::from("component,s,a,omega\n");
    for (i, o) in omegas.iter().enumerate() {
        let l = o.layout();
        for s in 0..l.n_states {
            for a in 0..l.n_actions {
                let _ = writeln!(out, "{i},{s},{a},{}", o.get(s, a));
            }
        }
    }
    out
}

/// Final state of one optimizer in a paired comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub final_utility_bits: f64,
    /// Base value of each constraint at the last iterate, reporting units.
    pub final_constraint_bits: Vec<f64>,
    /// Every constraint satisfied (`g ≤ 0`) at the last iterate.
    pub feasible: bool,
    /// Every logged iterate strictly feasible (`g < 0`).
    pub all_iterates_feasible: bool,
    pub iterations: usize,
    pub env_steps: u64,
    pub mode: String,
}

/// Both runs of a paired comparison plus their summaries, keyed by optimizer.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub vpg: RunOutcome,
    pub hpg: RunOutcome,
    pub summary: BTreeMap<String, OptimizerSummary>,
}

fn summarize(log: &RunLog, outcome: &RunOutcome, thresholds: &[f64], mode: SamplingMode) -> OptimizerSummary {
    let last = log.last().expect("a run logs at least its initial iterate");
    let feasible = outcome
        .state
        .last_metrics
        .as_ref()
        .map(|m| m.constraint_g.iter().all(|g| *g <= 0.0))
        .unwrap_or(true);
    let all_iterates_feasible = log
        .records
        .iter()
        .all(|r| r.constraint_bits.iter().zip(thresholds).all(|(d, b)| d < b));
    OptimizerSummary {
        final_utility_bits: last.utility_bits,
        final_constraint_bits: last.constraint_bits.clone(),
        feasible,
        all_iterates_feasible,
        iterations: last.iter,
        env_steps: last.env_steps,
        mode: match mode {
            SamplingMode::Exact => "exact".into(),
            SamplingMode::Sampled => "sampled".into(),
        },
    }
}

/// Runs VPG-Lagrangian and HPG on the same problem, concurrently, with the
/// same seed and iteration budget.
pub fn run_pair(config: &ExperimentConfig) -> Result<PairOutcome> {
    let setup = build(config)?;
    let thresholds: Vec<f64> = setup.problem.constraints.iter().map(|c| c.unit().to_report(c.threshold)).collect();
    let mut vpg_config = config.optimizer.clone();
    vpg_config.kind = OptimizerKind::Vpg;
    if let Some(step) = config.pair.vpg_step_size {
        vpg_config.step_size = step;
    }
    let mut hpg_config = config.optimizer.clone();
    hpg_config.kind = OptimizerKind::Hpg;
    if let Some(step) = config.pair.hpg_step_size {
        hpg_config.step_size = step;
    }
    let mut vpg_init = setup.init.clone();
    vpg_init.step_size = vpg_config.step_size;
    let mut hpg_init = setup.init.clone();
    hpg_init.step_size = hpg_config.step_size;

    let problem = &setup.problem;
    let geometry = &config.geometry;
    let (vpg, hpg) = std::thread::scope(|scope| {
        let vpg = scope.spawn(|| run_optimization(problem, &vpg_config, geometry, vpg_init));
        let hpg = scope.spawn(|| run_optimization(problem, &hpg_config, geometry, hpg_init));
        (join(vpg), join(hpg))
    });
    let (vpg, hpg) = (vpg?, hpg?);
    let mut summary = BTreeMap::new();
    summary.insert("vpg".to_string(), summarize(&vpg.log, &vpg, &thresholds, config.optimizer.mode));
    summary.insert("hpg".to_string(), summarize(&hpg.log, &hpg, &thresholds, config.optimizer.mode));
    Ok(PairOutcome { vpg, hpg, summary })
}

fn join<T>(handle: std::thread::ScopedJoinHandle<'_, Result<T>>) -> Result<T> {
    handle.join().unwrap_or_else(|_| Err(Error::Config("optimizer thread panicked".into())))
}

/// Writes `vpg.csv`, `hpg.csv`, `plotdata.csv` and `summary.json`.
pub fn write_pair(out_dir: &Path, pair: &PairOutcome) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    pair.vpg.log.write_csv(&out_dir.join("vpg.csv"))?;
    pair.hpg.log.write_csv(&out_dir.join("hpg.csv"))?;
    write_plotdata(&out_dir.join("plotdata.csv"), &[&pair.vpg.log, &pair.hpg.log])?;
    let json = serde_json::to_string_pretty(&pair.summary).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out_dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// Long-format plot table `optimizer,iter,env_steps,utility_bits,constraint_bits`.
///
/// `constraint_bits` is the largest constraint value of the record, empty
/// for unconstrained runs.
pub fn emit_plotdata(logs: &[&RunLog]) -> Result<String> {
    if logs.is_empty() {
        return Err(Error::Config("no run logs to emit".into()));
    }
    let mut out = String::from("optimizer,iter,env_steps,utility_bits,constraint_bits\n");
    for log in logs {
        for r in &log.records {
            let worst = r.constraint_bits.iter().cloned().reduce(f64::max);
            let _ = write!(out, "{},{},{},{},", log.optimizer, r.iter, r.env_steps, r.utility_bits);
            if let Some(w) = worst {
                let _ = write!(out, "{w}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_plotdata(path: &Path, logs: &[&RunLog]) -> Result<()> {
    fs::write(path, emit_plotdata(logs)?)?;
    Ok(())
}

/// Writes the CMP built from `config`; JSON for `.json`, TOML otherwise.
pub fn dump_env(config: &ExperimentConfig, path: &Path) -> Result<()> {
    let (cmp, _) = build_cmp(&config.environment)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    cmp.to_spec().save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_round_trip() {
        for name in PRESETS {
            let config = preset(name).unwrap();
            config.validate().unwrap();
            let text = config.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), config, "{name}");
            let json = serde_json::to_string(&config).unwrap();
            assert_eq!(ExperimentConfig::from_json(&json).unwrap(), config, "{name}");
        }
    }

    #[test]
    fn spec_style_inline_tables() {
        let text = r#"
            components = 2
            environment = { kind = "two_state" }
            utility = { kind = "mixture_mi", label_space = "state" }
            constraint = { kind = "entropy", threshold_bits = 3.0 }
            geometry = { potential = "kakade", barrier = { ell = "neg_log", beta = 1.0 } }
        "#;
        let config = ExperimentConfig::from_toml(text).unwrap();
        let setup = build(&config).unwrap();
        assert_eq!(setup.problem.constraints.len(), 2);
        assert_eq!(setup.problem.constraints[1].component, 1);
    }

    #[test]
    fn unknown_kinds_are_config_errors() {
        let text = "environment = { kind = \"maze\" }\nutility = { kind = \"entropy\" }\n";
        assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))));
        let text = "environment = { kind = \"two_state\" }\nutility = { kind = \"entropy\" }\nbogus = 1\n";
        assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))));
    }

    #[test]
    fn zero_step_solve_logs_one_row() {
        let mut config = preset("twostate_fig3").unwrap();
        config.optimizer.steps = 0;
        let outcome = solve(&config).unwrap();
        assert_eq!(outcome.log.len(), 1);
        assert_eq!(outcome.log.to_csv().lines().count(), 2);
    }

    #[test]
    fn plotdata_concatenates_logs() {
        let mut config = preset("twostate_fig3").unwrap();
        config.optimizer.steps = 3;
        let a = solve(&config).unwrap().log;
        assert!(emit_plotdata(&[]).is_err());
        let single = emit_plotdata(&[&a]).unwrap();
        assert_eq!(single.lines().count(), 1 + a.len());
        let both = emit_plotdata(&[&a, &a]).unwrap();
        assert_eq!(both.lines().count(), 1 + 2 * a.len());
        assert_eq!(emit_plotdata(&[&a, &a]).unwrap(), both);
    }
}
