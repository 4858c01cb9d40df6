//! Invariant suite run by the `verify` command: loss-core properties on
//! random draws, the schedule bounds on a simulated run, and short GD and SGD
//! runs with their hard checks.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::verify_margin;
use crate::loss::{
    full_gradient, full_loss, hessian_max_eigenvalue, norm, Dataset, MarginCertificate, Weights,
};
use crate::optim::{run_adaptive_sgd_observed, run_gd_schedule, DriftAudit, SgdOptions};
use crate::schedule::{
    crossing_time_brackets, stable_phase_bound, GrowthConstants, ScheduleState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Not run because an earlier property it depends on failed.
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status == Status::Pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }

    fn push(&mut self, name: &'static str, pass: bool, detail: String) -> bool {
        self.checks.push(Check {
            name,
            status: if pass { Status::Pass } else { Status::Fail },
            detail,
        });
        pass
    }

    fn skip(&mut self, name: &'static str, reason: &str) {
        self.checks.push(Check {
            name,
            status: Status::Skip,
            detail: reason.to_string(),
        });
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            writeln!(f, "{tag} {}: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Random weight vectors for the gradient and curvature properties.
    pub draws: usize,
    pub gd_steps: usize,
    pub schedule_steps: usize,
    pub sgd_epsilon: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            draws: 20,
            gd_steps: 200,
            schedule_steps: 2000,
            sgd_epsilon: 0.1,
            seed: 0,
        }
    }
}

fn random_weights(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let radius = rng.random_range(0.0..6.0);
    (0..dim).map(|_| rng.random_range(-radius..=radius)).collect()
}

/// Runs every property on `data`. `cert` is the claimed margin certificate,
/// checked here rather than trusted; `gamma` overrides its margin.
pub fn run_verification(
    data: &Dataset,
    cert: Option<&MarginCertificate>,
    gamma: Option<f64>,
    options: VerifyOptions,
) -> VerifyReport {
    let mut report = VerifyReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);

    let normalized = match data.max_row_norm() {
        Some((i, len)) => report.push(
            "normalization",
            len <= 1.0,
            format!("largest row norm {len} at row {i}"),
        ),
        None => report.push("normalization", false, "empty dataset".into()),
    };

    let certified = match cert {
        None => {
            report.skip("margin certificate", "no certificate supplied");
            None
        }
        Some(c) => match verify_margin(data, c) {
            Ok(min) => {
                let ok = report.push(
                    "margin certificate",
                    min >= c.margin(),
                    format!("claimed γ={} achieved min margin {min}", c.margin()),
                );
                ok.then(|| c.clone())
            }
            Err(e) => {
                report.push("margin certificate", false, e.to_string());
                None
            }
        },
    };
    let gamma = gamma.or(certified.as_ref().map(|c| c.margin()));

    let dim = data.dim();
    let mut fd_worst: f64 = 0.0;
    let mut self_bound_witness = None;
    let mut hessian_witness = None;
    for _ in 0..options.draws {
        let w = random_weights(&mut rng, dim);
        let (Ok(loss), Ok(g)) = (full_loss(&w, data), full_gradient(&w, data)) else {
            continue;
        };
        let gnorm = norm(&g);
        if gnorm > loss.min(1.0) * (1.0 + 1e-12) && self_bound_witness.is_none() {
            self_bound_witness = Some(format!("‖∇L‖={gnorm} > min(1, L)={} at ‖w‖={}", loss.min(1.0), norm(&w)));
        }
        let h = 1e-5;
        let mut diff = 0.0;
        for j in 0..dim {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (full_loss(&plus, data).unwrap_or(f64::NAN) - full_loss(&minus, data).unwrap_or(f64::NAN)) / (2.0 * h);
            diff += (fd - g[j]).powi(2);
        }
        if gnorm > 0.0 {
            fd_worst = fd_worst.max(diff.sqrt() / gnorm);
        }
        match hessian_max_eigenvalue(&w, data, 1e-10) {
            Ok(lambda) if lambda > loss.min(0.25) + 1e-8 && hessian_witness.is_none() => {
                hessian_witness = Some(format!("λ_max={lambda} > min(1/4, L)={} at ‖w‖={}", loss.min(0.25), norm(&w)));
            }
            Err(e) if hessian_witness.is_none() => hessian_witness = Some(e.to_string()),
            _ => {}
        }
    }
    if normalized {
        report.push(
            "self-bounded gradient",
            self_bound_witness.is_none(),
            self_bound_witness.unwrap_or_else(|| format!("{} draws", options.draws)),
        );
        report.push(
            "hessian bound",
            hessian_witness.is_none(),
            hessian_witness.unwrap_or_else(|| format!("{} draws", options.draws)),
        );
    } else {
        report.skip("self-bounded gradient", "rows outside the unit ball");
        report.skip("hessian bound", "rows outside the unit ball");
    }
    report.push(
        "gradient finite differences",
        fd_worst <= 1e-6,
        format!("max relative error {fd_worst:.3e} over {} draws", options.draws),
    );

    let Some(gamma) = gamma else {
        for name in ["schedule growth", "crossing brackets", "gd invariants", "sgd drift audit"] {
            report.skip(name, "no valid margin");
        }
        return report;
    };

    schedule_checks(&mut report, gamma, options.schedule_steps);

    if !normalized {
        report.skip("gd invariants", "rows outside the unit ball");
        report.skip("sgd drift audit", "rows outside the unit ball");
        return report;
    }
    gd_checks(&mut report, data, gamma, options.gd_steps);

    match certified {
        Some(c) => {
            let data = match data.clone().with_certificate(c) {
                Ok(d) => d,
                Err(e) => {
                    report.push("sgd drift audit", false, e.to_string());
                    return report;
                }
            };
            let eps = options.sgd_epsilon;
            let outcome = DriftAudit::for_sgd(&data, eps).and_then(|mut audit| {
                let cap = 1_000_000;
                run_adaptive_sgd_observed(&data, eps, options.seed, cap, SgdOptions { record_stride: 1000 }, &mut audit)
                    .map(|run| (run, audit))
            });
            match outcome {
                Ok((run, audit)) => report.push(
                    "sgd drift audit",
                    audit.comparator_loss <= eps / (4.0 * data.n() as f64),
                    format!(
                        "{} steps, τ={:?}, max pathwise excess {:.3e}, L(u)={:.3e}",
                        audit.steps_checked, run.tau, audit.max_excess, audit.comparator_loss
                    ),
                ),
                Err(e) => report.push("sgd drift audit", false, e.to_string()),
            };
        }
        None => report.skip("sgd drift audit", "needs a valid certificate"),
    }
    report
}

fn schedule_checks(report: &mut VerifyReport, gamma: f64, steps: usize) {
    let start = match ScheduleState::new(gamma, 0.0, 1.0) {
        Ok(s) => s,
        Err(e) => {
            report.push("schedule growth", false, e.to_string());
            report.skip("crossing brackets", "schedule failed");
            return;
        }
    };
    let states = match start.run_to_tau2(50_000_000).and_then(|mut s| {
        let extra = s.last().expect("nonempty").simulate(steps)?;
        s.extend(extra.into_iter().skip(1));
        Ok(s)
    }) {
        Ok(s) => s,
        Err(e) => {
            report.push("schedule growth", false, e.to_string());
            report.skip("crossing brackets", "schedule failed");
            return;
        }
    };
    let last = states[states.len() - 1];
    let (tau1, tau2) = (last.tau1.unwrap_or(0), last.tau2.unwrap_or(0));
    let witness = GrowthConstants::at_tau2(&states).map(|consts| {
        states[tau2..].iter().find_map(|s| {
            let (lo, hi) = consts.sandwich(s.t).ok()?;
            let cube = s.ln_s().powi(3);
            (cube < lo - 1e-9 || cube > hi + 1e-9).then(|| format!("t={}: ln³S={cube} outside [{lo}, {hi}]", s.t))
        })
    });
    match witness {
        Ok(w) => report.push(
            "schedule growth",
            w.is_none(),
            w.unwrap_or_else(|| format!("sandwich holds on t∈[{tau2}, {}]", last.t)),
        ),
        Err(e) => report.push("schedule growth", false, e.to_string()),
    };
    let brackets = crossing_time_brackets(start.s, 1.0, gamma);
    report.push(
        "crossing brackets",
        brackets.tau1.contains(tau1 as f64) && brackets.tau2.contains(tau2 as f64),
        format!(
            "τ₁={tau1} in [{:.1}, {:.1}], τ₂={tau2} in [{:.1}, {:.1}]",
            brackets.tau1.lo, brackets.tau1.hi, brackets.tau2.lo, brackets.tau2.hi
        ),
    );
}

fn gd_checks(report: &mut VerifyReport, data: &Dataset, gamma: f64, steps: usize) {
    match run_gd_schedule(data, gamma, &Weights::zeros(data.dim()), steps.max(1)) {
        Ok(run) => {
            let records = &run.trace.records;
            let witness = (1..records.len()).find_map(|t| {
                let bound = stable_phase_bound(run.f0, records[t - 1].s?);
                (records[t].loss > bound * (1.0 + 1e-10))
                    .then(|| format!("t={t}: loss {} above bound {bound}", records[t].loss))
            });
            report.push(
                "gd invariants",
                witness.is_none(),
                witness.unwrap_or_else(|| {
                    format!("{} steps, terminal loss {:.3e}", steps, records[records.len() - 1].loss)
                }),
            );
        }
        Err(e) => {
            report.push("gd invariants", false, e.to_string());
        }
    }
}
