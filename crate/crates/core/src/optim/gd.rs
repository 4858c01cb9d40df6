use crate::error::{Error, Result};
use crate::loss::{full_gradient_into, min_margin, norm, Dataset, Weights};
use crate::schedule::ScheduleState;

use super::trace::{RunTrace, TraceRecord};

/// Allowed excess in `L(w_t)·η_t ≤ 1`.
pub const INVARIANT_SLACK: f64 = 1e-10;
/// Allowed increase in `L(w_{t+1}) ≤ L(w_t)`.
pub const MONOTONE_SLACK: f64 = 1e-12;
/// The constant-step baseline aborts once the loss exceeds this.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// Relative tolerance when checking the supplied margin against a certificate.
const MARGIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GdRun {
    pub trace: RunTrace,
    /// Schedule state at the last iterate, carrying `τ₁` and `τ₂` if reached.
    pub schedule: ScheduleState,
    pub f0: f64,
}

fn check_run_inputs(data: &Dataset, w0: &Weights, steps: usize) -> Result<()> {
    data.check_dim(w0)?;
    if !data.is_normalized() {
        return Err(Error::Precondition("feature rows must lie in the unit ball".into()));
    }
    if steps < 1 {
        return Err(Error::InvalidInput("at least one step is required".into()));
    }
    Ok(())
}

/// GD with `η_t` from the increasing schedule for `steps` updates.
///
/// Records iterates `0..=steps`. Fails with [`Error::Falsified`] as soon as
/// `L(w_t)·η_t > 1 + 1e−10` or the loss increases by more than `1e−12`.
pub fn run_gd_schedule(data: &Dataset, gamma: f64, w0: &Weights, steps: usize) -> Result<GdRun> {
    check_run_inputs(data, w0, steps)?;
    if let Some(cert) = data.certificate() {
        let achieved = min_margin(data, cert.direction())?;
        if achieved < gamma * (1.0 - MARGIN_TOLERANCE) {
            return Err(Error::Precondition(format!(
                "certificate direction achieves margin {achieved}, below the requested {gamma}"
            )));
        }
    }
    let mut state = ScheduleState::for_start(w0, data, gamma)?;
    let f0 = state.f0;
    let mut w = w0.to_vec();
    let mut grad = vec![0.0; data.dim()];
    let mut records = Vec::with_capacity(steps + 1);
    let mut previous_loss = f64::INFINITY;

    for t in 0..=steps {
        let loss = full_gradient_into(&w, data, &mut grad);
        let eta = state.eta;
        if loss * eta > 1.0 + INVARIANT_SLACK {
            return Err(Error::Falsified {
                t,
                message: format!("L(w_t)·η_t = {loss:e}·{eta:e} = {} exceeds 1", loss * eta),
            });
        }
        if loss > previous_loss + MONOTONE_SLACK {
            return Err(Error::Falsified {
                t,
                message: format!("loss increased from {previous_loss:e} to {loss:e}"),
            });
        }
        records.push(TraceRecord {
            t,
            loss,
            eta,
            s: Some(state.s),
            grad_norm: norm(&grad),
            w_norm: norm(&w),
        });
        previous_loss = loss;
        if t == steps {
            break;
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= eta * gj;
        }
        state = state.advance()?;
    }

    Ok(GdRun {
        trace: RunTrace {
            records,
            final_weights: Weights::new(w)?,
            seed: None,
        },
        schedule: state,
        f0,
    })
}

/// Plain GD with a fixed step `eta ≥ 0` for `steps` updates.
///
/// Monotonicity is not enforced. Fails with [`Error::Divergence`] once the
/// loss is non-finite or above [`DIVERGENCE_LOSS`].
pub fn run_gd_constant(data: &Dataset, eta: f64, w0: &Weights, steps: usize) -> Result<RunTrace> {
    check_run_inputs(data, w0, steps)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!("step size must be finite and non-negative, got {eta}")));
    }
    let mut w = w0.to_vec();
    let mut grad = vec![0.0; data.dim()];
    let mut records = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let loss = full_gradient_into(&w, data, &mut grad);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { t, loss });
        }
        records.push(TraceRecord {
            t,
            loss,
            eta,
            s: None,
            grad_norm: norm(&grad),
            w_norm: norm(&w),
        });
        if t == steps {
            break;
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= eta * gj;
        }
    }
    Ok(RunTrace {
        records,
        final_weights: Weights::new(w)?,
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_separable, GenParams};
    use crate::loss::full_gradient;

    fn small() -> Dataset {
        generate_separable(&GenParams { dim: 5, count: 60, margin: 0.3, seed: 11 }).unwrap()
    }

    #[test]
    fn one_step_from_origin() {
        let data = small();
        let run = run_gd_schedule(&data, 0.3, &Weights::zeros(5), 1).unwrap();
        let g = full_gradient(&[0.0; 5], &data).unwrap();
        let expected: Vec<f64> = g.iter().map(|gj| -gj / std::f64::consts::LN_2).collect();
        for (a, b) in run.trace.final_weights.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        assert_eq!(run.trace.records.len(), 2);
        assert_eq!(run.trace.records[0].eta, 1.0 / std::f64::consts::LN_2);
    }

    #[test]
    fn schedule_run_is_monotone_and_deterministic() {
        let data = small();
        let a = run_gd_schedule(&data, 0.3, &Weights::zeros(5), 300).unwrap();
        let b = run_gd_schedule(&data, 0.3, &Weights::zeros(5), 300).unwrap();
        assert_eq!(a.trace, b.trace);
        for pair in a.trace.records.windows(2) {
            assert!(pair[1].loss <= pair[0].loss + MONOTONE_SLACK);
            assert!(pair[0].loss * pair[0].eta <= 1.0 + INVARIANT_SLACK);
        }
        assert!(a.schedule.tau2.is_some());
    }

    #[test]
    fn inflated_margin_is_rejected() {
        let data = small();
        let err = run_gd_schedule(&data, 3.0, &Weights::zeros(5), 10).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn zero_step_keeps_the_iterate() {
        let data = small();
        let w0 = Weights::new(vec![0.1, -0.2, 0.3, 0.0, 0.5]).unwrap();
        let trace = run_gd_constant(&data, 0.0, &w0, 20).unwrap();
        assert_eq!(trace.final_weights, w0);
        assert!(trace.records.iter().all(|r| r.loss == trace.records[0].loss));
    }

    #[test]
    fn classical_step_decreases_loss() {
        let data = small();
        let trace = run_gd_constant(&data, 2.0, &Weights::zeros(5), 200).unwrap();
        for pair in trace.records.windows(2) {
            assert!(pair[1].loss <= pair[0].loss);
        }
    }

    #[test]
    fn huge_step_reports_divergence_or_finishes_finite() {
        let data = small();
        match run_gd_constant(&data, 1e14, &Weights::zeros(5), 50) {
            Ok(trace) => assert!(trace.records.iter().all(|r| r.loss.is_finite())),
            Err(e) => assert!(matches!(e, Error::Divergence { .. })),
        }
    }

    #[test]
    fn rejects_unnormalized_rows() {
        let data = Dataset::from_rows_unnormalized(vec![vec![1.5, 0.0]], vec![1.0]).unwrap();
        let err = run_gd_schedule(&data, 0.1, &Weights::zeros(2), 5).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = small();
        assert!(run_gd_constant(&data, -1.0, &Weights::zeros(5), 5).is_err());
        assert!(run_gd_constant(&data, 1.0, &Weights::zeros(4), 5).is_err());
        assert!(run_gd_schedule(&data, 0.3, &Weights::zeros(5), 0).is_err());
    }
}
