use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Metrics;
use crate::error::Result;

/// One logged iterate. Information quantities are in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iter: usize,
    pub utility_bits: f64,
    /// Base value of each constraint, `d(ω)` (the constraint reads `d ≤ b`).
    pub constraint_bits: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub grad_norm: f64,
    pub flow_residual: f64,
    pub env_steps: u64,
    pub wall_ms: u64,
}

impl RunRecord {
    pub fn from_metrics(iter: usize, metrics: &Metrics, multipliers: &[f64], env_steps: u64, wall_ms: u64) -> Self {
        Self {
            iter,
            utility_bits: metrics.utility,
            constraint_bits: metrics.constraints.clone(),
            multipliers: multipliers.to_vec(),
            grad_norm: metrics.grad_norm,
            flow_residual: metrics.flow_residual,
            env_steps,
            wall_ms,
        }
    }
}

/// Per-iteration history of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub optimizer: String,
    pub seed: u64,
    pub n_constraints: usize,
    /// Free-form description of the environment and configuration.
    pub fingerprint: String,
    pub records: Vec<RunRecord>,
    record_wall_time: bool,
}

impl RunLog {
    pub fn new(optimizer: &str, n_constraints: usize, seed: u64, record_wall_time: bool) -> Self {
        Self {
            optimizer: optimizer.to_string(),
            seed,
            n_constraints,
            fingerprint: String::new(),
            records: Vec::new(),
            record_wall_time,
        }
    }

    /// Appends a record; wall time is zeroed unless the log records it.
    pub fn push(&mut self, mut record: RunRecord) {
        if !self.record_wall_time {
            record.wall_ms = 0;
        }
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&RunRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["iter".to_string(), "utility_bits".to_string()];
        cols.extend((0..self.n_constraints).map(|i| format!("constraint_{i}_bits")));
        cols.extend((0..self.n_constraints).map(|i| format!("multiplier_{i}")));
        cols.extend(["grad_norm", "flow_residual", "env_steps", "wall_ms"].map(String::from));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{:?}", r.iter, r.utility_bits);
            for c in &r.constraint_bits {
                let _ = write!(out, ",{c:?}");
            }
            for m in &r.multipliers {
                let _ = write!(out, ",{m:?}");
            }
            let _ = writeln!(out, ",{:?},{:?},{},{}", r.grad_norm, r.flow_residual, r.env_steps, r.wall_ms);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics() -> Metrics {
        Metrics {
            utility: 1.5,
            constraints: vec![0.05],
            constraint_g: vec![-0.05],
            grad_norm: 0.25,
            flow_residual: 0.0,
        }
    }

    #[test]
    fn header_lists_constraints_then_multipliers() {
        let log = RunLog::new("hpg", 2, 0, false);
        assert_eq!(
            log.csv_header(),
            "iter,utility_bits,constraint_0_bits,constraint_1_bits,multiplier_0,multiplier_1,grad_norm,flow_residual,env_steps,wall_ms"
        );
    }

    #[test]
    fn wall_time_zeroed_unless_recorded() {
        let mut log = RunLog::new("vpg", 1, 0, false);
        log.push(RunRecord::from_metrics(0, &metrics(), &[0.0], 10, 123));
        assert_eq!(log.records[0].wall_ms, 0);
        let mut log = RunLog::new("vpg", 1, 0, true);
        log.push(RunRecord::from_metrics(0, &metrics(), &[0.0], 10, 123));
        assert_eq!(log.records[0].wall_ms, 123);
    }

    #[test]
    fn csv_rows() {
        let mut log = RunLog::new("vpg", 1, 0, false);
        log.push(RunRecord::from_metrics(0, &metrics(), &[0.5], 10, 0));
        let csv = log.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "0,1.5,0.05,0.5,0.25,0.0,10,0");
    }
}
