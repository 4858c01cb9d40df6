use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::{dot, norm, sample_losses_into, sigmoid, softplus, Dataset, Weights};

use super::stats::{HitTime, HittingStats};
use super::trace::{RunTrace, TraceRecord};

/// Allowed excess in the per-step pathwise inequality.
pub const PATHWISE_SLACK: f64 = 1e-10;

/// `(2n/γ²)·ln²(4n/ε)`, the bound on the expected hitting time.
pub fn sgd_expectation_bound(n: usize, gamma: f64, epsilon: f64) -> f64 {
    let n = n as f64;
    2.0 * n / (gamma * gamma) * (4.0 * n / epsilon).ln().powi(2)
}

/// Default censoring cap: ten times the expectation bound.
pub fn default_cap(n: usize, gamma: f64, epsilon: f64) -> usize {
    (10.0 * sgd_expectation_bound(n, gamma, epsilon)).ceil() as usize
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Index drawn uniformly from `0..n`, with replacement.
#[inline]
pub(crate) fn draw_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Result of one stochastic step on sample `index`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepInfo {
    pub index: usize,
    pub eta: f64,
    pub sample_loss: f64,
    /// The sample gradient is `coeff · x_index`.
    pub coeff: f64,
}

/// `η = min{cap, 1/L_i(w)}` and `∇L_i(w)` at the current iterate, without updating.
#[inline]
pub(crate) fn plan_step(data: &Dataset, w: &[f64], index: usize, step_cap: f64) -> StepInfo {
    let m = data.margin(w, index);
    let sample_loss = softplus(-m);
    // A loss that underflows to 0 gives 1/0 = ∞ and the cap applies.
    let eta = step_cap.min(1.0 / sample_loss);
    StepInfo {
        index,
        eta,
        sample_loss,
        coeff: -sigmoid(-m) * data.label(index),
    }
}

#[inline]
pub(crate) fn apply_step(data: &Dataset, w: &mut [f64], step: &StepInfo) {
    let scale = step.eta * step.coeff;
    for (wj, xj) in w.iter_mut().zip(data.row(step.index)) {
        *wj -= scale * xj;
    }
}

#[inline]
pub(crate) fn sample_grad_norm(data: &Dataset, step: &StepInfo) -> f64 {
    step.coeff.abs() * norm(data.row(step.index))
}

/// Everything an observer sees about the step from `w_t` to `w_{t+1}`.
pub struct SgdStep<'a> {
    pub t: usize,
    pub index: usize,
    pub eta: f64,
    /// `L_{i_t}(w_t)`.
    pub sample_loss: f64,
    /// `∇L_{i_t}(w_t)`.
    pub gradient: &'a [f64],
    pub w_before: &'a [f64],
    pub w_after: &'a [f64],
    /// `L(w_t)`, which exceeds the tolerance since the run has not stopped.
    pub full_loss: f64,
    /// Every `L_j(w_t)`.
    pub sample_losses: &'a [f64],
}

pub trait SgdObserver {
    fn on_step(&mut self, data: &Dataset, step: &SgdStep<'_>) -> Result<()>;
}

pub struct NoObserver;

impl SgdObserver for NoObserver {
    fn on_step(&mut self, _: &Dataset, _: &SgdStep<'_>) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdOptions {
    /// Trace keeps every `record_stride`-th iterate plus the last one.
    pub record_stride: usize,
}

impl Default for SgdOptions {
    fn default() -> Self {
        Self { record_stride: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct SgdRun {
    pub trace: RunTrace,
    pub tau: HitTime,
}

/// Adaptive SGD from `w₀ = 0` with `η_t = min{1/ε, 1/L_{i_t}(w_t)}`.
///
/// The full loss is evaluated at every iterate; the run stops at the first
/// `t` with `L(w_t) ≤ ε` or is censored at `cap`.
pub fn run_adaptive_sgd(data: &Dataset, epsilon: f64, seed: u64, cap: usize) -> Result<SgdRun> {
    run_adaptive_sgd_observed(data, epsilon, seed, cap, SgdOptions::default(), &mut NoObserver)
}

pub fn run_adaptive_sgd_observed<O: SgdObserver>(
    data: &Dataset,
    epsilon: f64,
    seed: u64,
    cap: usize,
    options: SgdOptions,
    observer: &mut O,
) -> Result<SgdRun> {
    let start_loss = std::f64::consts::LN_2;
    if !(epsilon > 0.0 && epsilon < start_loss) {
        return Err(Error::InvalidInput(format!(
            "tolerance must lie in (0, L(0) = ln 2), got {epsilon}"
        )));
    }
    if !data.is_normalized() {
        return Err(Error::Precondition("feature rows must lie in the unit ball".into()));
    }
    if cap < 1 {
        return Err(Error::InvalidInput("censoring cap must be at least 1".into()));
    }
    if options.record_stride < 1 {
        return Err(Error::InvalidInput("record stride must be at least 1".into()));
    }
    let step_cap = 1.0 / epsilon;
    let n = data.n();
    let mut rng = rng_for(seed);
    let mut w = vec![0.0; data.dim()];
    let mut w_next = w.clone();
    let mut gradient = vec![0.0; data.dim()];
    let mut losses = Vec::with_capacity(n);
    let mut records = Vec::new();

    let mut t = 0;
    let tau = loop {
        let loss = sample_losses_into(&w, data, &mut losses);
        let step = plan_step(data, &w, draw_index(&mut rng, n), step_cap);
        let stop = if loss <= epsilon {
            Some(HitTime::Hit(t))
        } else if t == cap {
            Some(HitTime::Censored(t))
        } else {
            None
        };
        if stop.is_some() || t % options.record_stride == 0 {
            records.push(TraceRecord {
                t,
                loss,
                eta: step.eta,
                s: None,
                grad_norm: sample_grad_norm(data, &step),
                w_norm: norm(&w),
            });
        }
        if let Some(outcome) = stop {
            break outcome;
        }

        w_next.copy_from_slice(&w);
        apply_step(data, &mut w_next, &step);
        for (g, x) in gradient.iter_mut().zip(data.row(step.index)) {
            *g = step.coeff * x;
        }
        observer.on_step(
            data,
            &SgdStep {
                t,
                index: step.index,
                eta: step.eta,
                sample_loss: step.sample_loss,
                gradient: &gradient,
                w_before: &w,
                w_after: &w_next,
                full_loss: loss,
                sample_losses: &losses,
            },
        )?;
        std::mem::swap(&mut w, &mut w_next);
        t += 1;
    };

    Ok(SgdRun {
        trace: RunTrace {
            records,
            final_weights: Weights::new(w)?,
            seed: Some(seed),
        },
        tau,
    })
}

/// Per-step checks against the comparator `u = scale · w*`:
/// the pathwise inequality
/// `‖w_{t+1}−u‖² ≤ ‖w_t−u‖² − η_t L_{i_t}(w_t) + 2η_t L_{i_t}(u)`
/// and, before the hit, `max_j L_j(w_t) ≥ ε`.
#[derive(Debug, Clone)]
pub struct DriftAudit {
    u: Vec<f64>,
    epsilon: f64,
    /// `L(u)`.
    pub comparator_loss: f64,
    pub steps_checked: usize,
    /// Largest observed `lhs − rhs` of the pathwise inequality.
    pub max_excess: f64,
    /// Realized `D_{t+1} − D_t`, indexed by `t`.
    pub increments: Vec<f64>,
    /// `D_0 = ‖u‖²` for `w₀ = 0`.
    pub initial_distance: f64,
}

impl DriftAudit {
    /// `u = (1/γ) ln(4n/ε) w*` from the dataset's certificate.
    pub fn for_sgd(data: &Dataset, epsilon: f64) -> Result<Self> {
        let gamma = certificate_margin(data)?;
        let scale = (4.0 * data.n() as f64 / epsilon).ln() / gamma;
        Self::with_scale(data, epsilon, scale)
    }

    pub fn with_scale(data: &Dataset, epsilon: f64, scale: f64) -> Result<Self> {
        let cert = data
            .certificate()
            .ok_or_else(|| Error::Precondition("the drift audit needs a margin certificate".into()))?;
        let u = cert.comparator(scale).into_inner();
        let comparator_loss = crate::loss::full_loss(&u, data)?;
        Ok(Self {
            initial_distance: dot(&u, &u),
            u,
            epsilon,
            comparator_loss,
            steps_checked: 0,
            max_excess: f64::NEG_INFINITY,
            increments: Vec::new(),
        })
    }

    pub fn comparator(&self) -> &[f64] {
        &self.u
    }
}

fn certificate_margin(data: &Dataset) -> Result<f64> {
    data.certificate()
        .map(|c| c.margin())
        .ok_or_else(|| Error::Precondition("the drift audit needs a margin certificate".into()))
}

impl SgdObserver for DriftAudit {
    fn on_step(&mut self, data: &Dataset, step: &SgdStep<'_>) -> Result<()> {
        let max_sample = step.sample_losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max_sample >= self.epsilon) {
            return Err(Error::Falsified {
                t: step.t,
                message: format!(
                    "full loss {} exceeds ε={} but every sample loss is below it (max {max_sample})",
                    step.full_loss, self.epsilon
                ),
            });
        }

        // ‖w−ηg−u‖² − ‖w−u‖² = η²‖g‖² − 2η⟨g, w−u⟩, evaluated without cancellation.
        let g_sq = dot(step.gradient, step.gradient);
        let g_dot_gap: f64 = step
            .gradient
            .iter()
            .zip(step.w_before.iter().zip(&self.u))
            .map(|(g, (w, u))| g * (w - u))
            .sum();
        let lhs = step.eta * step.eta * g_sq - 2.0 * step.eta * g_dot_gap;
        let loss_at_u = softplus(-data.margin(&self.u, step.index));
        let rhs = -step.eta * step.sample_loss + 2.0 * step.eta * loss_at_u;
        let excess = lhs - rhs;
        self.max_excess = self.max_excess.max(excess);
        self.steps_checked += 1;
        if excess > PATHWISE_SLACK {
            return Err(Error::Falsified {
                t: step.t,
                message: format!(
                    "pathwise inequality fails by {excess:e} (η={}, L_i(w)={}, L_i(u)={loss_at_u})",
                    step.eta, step.sample_loss
                ),
            });
        }

        let distance = |w: &[f64]| -> f64 { w.iter().zip(&self.u).map(|(a, b)| (a - b) * (a - b)).sum() };
        self.increments.push(distance(step.w_after) - distance(step.w_before));
        Ok(())
    }
}

/// Seed-averaged drift of `D_t = ‖w_t − u‖²`, reported rather than asserted.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub runs: usize,
    pub steps_checked: usize,
    pub max_excess: f64,
    pub comparator_loss: f64,
    /// `ε/(4n)`, the bound on `L(u)`.
    pub comparator_bound: f64,
    /// Mean of `D_{t+1} − D_t` over all audited steps of all runs.
    pub mean_increment: f64,
    /// `−1/(2n)`, the theoretical conditional drift ceiling.
    pub drift_target: f64,
    /// Mean increment at matched `t` across the runs still active at `t`.
    pub mean_increment_by_t: Vec<f64>,
}

impl DriftReport {
    pub fn from_audits(audits: &[DriftAudit], n: usize, epsilon: f64) -> Option<Self> {
        let first = audits.first()?;
        let horizon = audits.iter().map(|a| a.increments.len()).max().unwrap_or(0);
        let mut sums = vec![0.0; horizon];
        let mut counts = vec![0usize; horizon];
        for audit in audits {
            for (t, inc) in audit.increments.iter().enumerate() {
                sums[t] += inc;
                counts[t] += 1;
            }
        }
        let steps: usize = audits.iter().map(|a| a.steps_checked).sum();
        let total: f64 = sums.iter().sum();
        Some(Self {
            runs: audits.len(),
            steps_checked: steps,
            max_excess: audits.iter().map(|a| a.max_excess).fold(f64::NEG_INFINITY, f64::max),
            comparator_loss: first.comparator_loss,
            comparator_bound: epsilon / (4.0 * n as f64),
            mean_increment: if steps > 0 { total / steps as f64 } else { 0.0 },
            drift_target: -1.0 / (2.0 * n as f64),
            mean_increment_by_t: sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub stats: HittingStats,
    /// In seed order.
    pub runs: Vec<SgdRun>,
    pub drift: Option<DriftReport>,
}

/// Independent Adaptive SGD runs for each seed, executed in parallel.
/// Results are assembled in seed order, so the output does not depend on scheduling.
pub fn montecarlo_sgd(
    data: &Dataset,
    epsilon: f64,
    gamma: f64,
    seeds: &[u64],
    cap: usize,
    options: SgdOptions,
    audit: bool,
) -> Result<MonteCarloRun> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("the seed list is empty".into()));
    }
    let mut ordered = seeds.to_vec();
    ordered.sort_unstable();
    let outcomes: Vec<Result<(SgdRun, Option<DriftAudit>)>> = ordered
        .par_iter()
        .map(|&seed| {
            if audit {
                let mut drift = DriftAudit::for_sgd(data, epsilon)?;
                let run = run_adaptive_sgd_observed(data, epsilon, seed, cap, options, &mut drift)?;
                Ok((run, Some(drift)))
            } else {
                let run = run_adaptive_sgd_observed(data, epsilon, seed, cap, options, &mut NoObserver)?;
                Ok((run, None))
            }
        })
        .collect();

    let mut stats = HittingStats::new(epsilon, data.n(), gamma);
    let mut runs = Vec::with_capacity(ordered.len());
    let mut audits = Vec::new();
    for (&seed, outcome) in ordered.iter().zip(outcomes) {
        let (run, drift) = outcome?;
        stats.push(seed, run.tau);
        runs.push(run);
        audits.extend(drift);
    }
    Ok(MonteCarloRun {
        stats,
        runs,
        drift: DriftReport::from_audits(&audits, data.n(), epsilon),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_separable, GenParams};
    use crate::loss::full_loss;

    fn data() -> Dataset {
        generate_separable(&GenParams { dim: 4, count: 50, margin: 0.4, seed: 5 }).unwrap()
    }

    #[test]
    fn step_size_arithmetic() {
        let eps: f64 = 0.01;
        assert_eq!((1.0 / eps).min(1.0 / (2.0 * eps)), 1.0 / (2.0 * eps));
        assert_eq!((1.0 / eps).min(1.0 / 0.0), 1.0 / eps);
        let d = data();
        // Along the certificate at large scale every sample loss underflows.
        let w = d.certificate().unwrap().comparator(1e5).into_inner();
        let step = plan_step(&d, &w, 0, 1.0 / eps);
        assert_eq!(step.sample_loss, 0.0);
        assert_eq!(step.eta, 100.0);
    }

    #[test]
    fn first_hitting_semantics() {
        let d = data();
        let eps = 0.05;
        let run = run_adaptive_sgd(&d, eps, 9, default_cap(d.n(), 0.4, eps)).unwrap();
        let tau = run.tau.hit().expect("hits");
        assert_eq!(run.trace.records.len(), tau + 1);
        for r in &run.trace.records[..tau] {
            assert!(r.loss > eps);
            assert!(r.eta <= 1.0 / eps);
        }
        assert!(full_loss(&run.trace.final_weights, &d).unwrap() <= eps);
        assert_eq!(run.trace.records[tau].loss, full_loss(&run.trace.final_weights, &d).unwrap());
    }

    #[test]
    fn deterministic_per_seed() {
        let d = data();
        let a = run_adaptive_sgd(&d, 0.1, 4, 100_000).unwrap();
        let b = run_adaptive_sgd(&d, 0.1, 4, 100_000).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.seed, Some(4));
    }

    #[test]
    fn censoring_is_reported() {
        let d = data();
        let run = run_adaptive_sgd(&d, 1e-6, 1, 3).unwrap();
        assert_eq!(run.tau, HitTime::Censored(3));
        assert_eq!(run.trace.records.last().unwrap().t, 3);
    }

    #[test]
    fn rejects_tolerance_outside_range() {
        let d = data();
        assert!(run_adaptive_sgd(&d, 0.7, 1, 10).is_err());
        assert!(run_adaptive_sgd(&d, 0.0, 1, 10).is_err());
        assert!(run_adaptive_sgd(&d, 0.1, 1, 0).is_err());
    }

    #[test]
    fn audit_passes_and_comparator_is_small() {
        let d = data();
        let eps = 0.05;
        let mut audit = DriftAudit::for_sgd(&d, eps).unwrap();
        let run = run_adaptive_sgd_observed(&d, eps, 2, 1_000_000, SgdOptions::default(), &mut audit).unwrap();
        assert_eq!(audit.steps_checked, run.tau.time());
        assert!(audit.max_excess <= PATHWISE_SLACK);
        assert!(audit.comparator_loss <= eps / (4.0 * d.n() as f64));
    }

    #[test]
    fn wrong_comparator_scale_is_caught_or_harmless() {
        // A comparator far from the separator breaks the inequality quickly.
        let d = data();
        let mut audit = DriftAudit::with_scale(&d, 0.05, -50.0).unwrap();
        let err = run_adaptive_sgd_observed(&d, 0.05, 2, 1_000_000, SgdOptions::default(), &mut audit);
        assert!(err.is_ok() || matches!(err, Err(Error::Falsified { .. })));
    }

    #[test]
    fn montecarlo_is_seed_ordered_and_reproducible() {
        let d = data();
        let a = montecarlo_sgd(&d, 0.1, 0.4, &[5, 1, 3], 1_000_000, SgdOptions { record_stride: 10 }, true).unwrap();
        let b = montecarlo_sgd(&d, 0.1, 0.4, &[3, 5, 1], 1_000_000, SgdOptions { record_stride: 10 }, true).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.runs.iter().map(|r| r.trace.seed).collect::<Vec<_>>(), vec![Some(1), Some(3), Some(5)]);
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.trace, y.trace);
        }
        let drift = a.drift.unwrap();
        assert_eq!(drift.runs, 3);
        assert!(montecarlo_sgd(&d, 0.1, 0.4, &[], 10, SgdOptions::default(), false).is_err());
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let n = 50;
        let draws = 1_000_000;
        let mut counts = vec![0usize; n];
        let mut rng = rng_for(2024);
        for _ in 0..draws {
            counts[draw_index(&mut rng, n)] += 1;
        }
        let p = 1.0 / n as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 5.0 * sd);
        }
    }
}
