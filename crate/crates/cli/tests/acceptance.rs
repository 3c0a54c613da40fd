//! Acceptance criteria 1–11, one line each.
//!
//! Runs as a plain binary (`harness = false`) so every criterion prints a
//! single PASS/FAIL line in `cargo test` output. Each criterion names the
//! measured quantities it relies on together with the limit it expects; a
//! limit that drifts from the pinned value fails the criterion.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nmdp_core::checks::{run_check, CheckOutcome};

/// `(check, [(measure label, pinned limit)])`.
type Pins = &'static [(&'static str, &'static [(&'static str, f64)])];

struct Criterion {
    id: u32,
    title: &'static str,
    budget: Duration,
    kind: Kind,
}

enum Kind {
    Checks(Pins),
    Determinism,
    CheckCommand,
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        title: "occupancy correctness on 100 random CMPs",
        budget: Duration::from_secs(10),
        kind: Kind::Checks(&[(
            "occupancy.random_cmps",
            &[
                ("min_entry_negativity", 0.0),
                ("mass_defect", 1e-12),
                ("flow_residual", 1e-9),
                ("sr_vs_direct", 1e-10),
                ("neumann_excess", 1e-10),
            ],
        )]),
    },
    Criterion {
        id: 2,
        title: "Monte-Carlo discounted sums match <f, omega> within 3 standard errors",
        budget: Duration::from_secs(60),
        kind: Kind::Checks(&[("occupancy.discounted_expectation", &[("max_err_over_allowed", 1.0)])]),
    },
    Criterion {
        id: 3,
        title: "occupancy Jacobian vs central differences, unit scaling",
        budget: Duration::from_secs(60),
        kind: Kind::Checks(&[(
            "occupancy.jacobian_fd",
            &[("max_rel_err", 1e-5), ("fitted_scale_minus_one", 1e-6), ("rescaled_alternative_rel_err", 1e-2)],
        )]),
    },
    Criterion {
        id: 4,
        title: "exact utility gradients vs differences of theta -> f(omega(theta))",
        budget: Duration::from_secs(60),
        kind: Kind::Checks(&[("optimizers.utility_gradient_fd", &[("max_rel_err", 1e-5)])]),
    },
    Criterion {
        id: 5,
        title: "Jensen-Bregman identity, mutual information, disjoint mixture = 1 bit",
        budget: Duration::from_secs(60),
        kind: Kind::Checks(&[
            ("utilities.jensen_bregman", &[("max_abs_gap", 1e-10)]),
            ("utilities.dispersion_is_mi", &[("max_abs_gap_nats", 1e-10)]),
            (
                "utilities.disjoint_one_bit",
                &[("state_action_mi_minus_one_bit", 1e-12), ("state_mi_minus_one_bit", 1e-12)],
            ),
        ]),
    },
    Criterion {
        id: 6,
        title: "mirror-descent / surrogate equivalence on 20 instances",
        budget: Duration::from_secs(60),
        kind: Kind::Checks(&[("optimizers.surrogate_equivalence", &[("gradient_gap", 1e-8), ("hessian_gap", 1e-6)])]),
    },
    Criterion {
        id: 7,
        title: "linear sanity: HPG reaches the value-iteration optimum",
        budget: Duration::from_secs(30),
        kind: Kind::Checks(&[(
            "optimizers.linear_sanity",
            &[("seed_fraction_within_tol", 0.95), ("two_state_abs_gap", 1e-3), ("value_iteration_vs_enumeration", 1e-9)],
        )]),
    },
    Criterion {
        id: 8,
        title: "max-entropy two-state chain: HPG at grid optimum, HPG >= VPG",
        budget: Duration::from_secs(30),
        kind: Kind::Checks(&[(
            "optimizers.maxent_two_state",
            &[("hpg_gap_to_grid_max_bits", 0.01), ("vpg_gap_to_grid_max_bits", 0.01), ("hpg_minus_vpg_bits", 0.0)],
        )]),
    },
    Criterion {
        id: 9,
        title: "constrained diversity gridworld: feasible barrier-HPG beats VPG-Lagrangian",
        budget: Duration::from_secs(300),
        kind: Kind::Checks(&[
            (
                "optimizers.constrained_gridworld",
                &[
                    ("hpg_max_js_bits", 0.1 + 0.005),
                    ("hpg_mi_positive", 1.0),
                    ("hpg_minus_vpg_mi_bits", 0.0),
                    ("hpg_all_iterates_feasible", 1.0),
                    ("equal_budget", 1.0),
                ],
            ),
            (
                "optimizers.barrier_feasibility",
                &[("min_slack_positive", 1.0), ("min_slack_bits", 0.0), ("logged_flow_residual", 1e-9)],
            ),
        ]),
    },
    Criterion {
        id: 10,
        title: "repeated `experiment` runs write byte-identical files",
        budget: Duration::from_secs(300),
        kind: Kind::Determinism,
    },
    Criterion {
        id: 11,
        title: "`check` runs the whole suite and exits 0",
        budget: Duration::from_secs(300),
        kind: Kind::CheckCommand,
    },
];

fn verify_pins(outcome: &CheckOutcome, pins: &[(&str, f64)]) -> Result<(), String> {
    for (label, limit) in pins {
        let m = outcome.measure(label).ok_or_else(|| format!("{}: no measure {label}", outcome.name))?;
        if m.limit != *limit {
            return Err(format!("{}: {label} limit {} differs from pinned {limit}", outcome.name, m.limit));
        }
        if !m.ok() {
            return Err(format!("{}: {label} = {:e} violates {limit:e}", outcome.name, m.value));
        }
    }
    if !outcome.passed {
        return Err(format!("{}: {}", outcome.name, outcome.detail));
    }
    Ok(())
}

fn run_checks(pins: Pins) -> Result<String, String> {
    let mut details = Vec::new();
    for (name, labels) in pins {
        let outcome = run_check(name).ok_or_else(|| format!("unknown check {name}"))?;
        verify_pins(&outcome, labels)?;
        details.push(format!("{name}: {}", outcome.detail));
    }
    Ok(details.join(" | "))
}

fn nmdp() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nmdp"));
    cmd.env("RUST_LOG", "error");
    cmd
}

fn experiment(which: &str, out: &Path) -> Result<(), String> {
    let status = nmdp()
        .args(["experiment", which, "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("experiment {which} failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    Ok(())
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for which in ["twostate", "gridworld"] {
        let (a, b) = (dir.path().join(format!("{which}_a")), dir.path().join(format!("{which}_b")));
        experiment(which, &a)?;
        experiment(which, &b)?;
        let mut files: Vec<_> = std::fs::read_dir(&a)
            .map_err(|e| e.to_string())?
            .map(|e| e.map(|e| e.file_name()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        files.sort();
        if files.len() < 4 {
            return Err(format!("{which}: expected at least 4 output files, got {}", files.len()));
        }
        if std::fs::read_dir(&b).map_err(|e| e.to_string())?.count() != files.len() {
            return Err(format!("{which}: runs wrote different file sets"));
        }
        for file in files {
            let file = file.to_string_lossy().into_owned();
            let x = std::fs::read(a.join(&file)).map_err(|e| format!("{which}/{file}: {e}"))?;
            let y = std::fs::read(b.join(&file)).map_err(|e| format!("{which}/{file}: {e}"))?;
            if x != y {
                return Err(format!("{which}/{file} differs between runs"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} files byte-identical"))
}

fn check_command() -> Result<String, String> {
    let out = nmdp().arg("check").output().map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary = stdout.lines().last().unwrap_or_default().to_string();
    if out.status.code() != Some(0) {
        let failed: Vec<_> = stdout.lines().filter(|l| l.starts_with("FAIL")).collect();
        return Err(format!("exit {:?}: {}", out.status.code(), failed.join(" | ")));
    }
    let failed_lines = stdout.lines().filter(|l| l.starts_with("FAIL")).count();
    if failed_lines > 0 {
        return Err(format!("exit 0 but {failed_lines} FAIL lines"));
    }
    Ok(summary)
}

fn main() -> ExitCode {
    let mut failures = 0;
    for c in CRITERIA {
        let start = Instant::now();
        let result = match &c.kind {
            Kind::Checks(pins) => run_checks(pins),
            Kind::Determinism => determinism(),
            Kind::CheckCommand => check_command(),
        };
        let elapsed = start.elapsed();
        let result = result.and_then(|d| {
            if elapsed > c.budget {
                Err(format!("took {elapsed:.1?}, budget {:?}", c.budget))
            } else {
                Ok(d)
            }
        });
        match result {
            Ok(detail) => println!("criterion {:>2} PASS [{elapsed:.1?}] {}: {detail}", c.id, c.title),
            Err(why) => {
                failures += 1;
                println!("criterion {:>2} FAIL [{elapsed:.1?}] {}: {why}", c.id, c.title);
            }
        }
    }
    println!("acceptance: {} criteria, {failures} failed", CRITERIA.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
