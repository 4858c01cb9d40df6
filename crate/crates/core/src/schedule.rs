//! The deterministic increasing step-size schedule for gradient descent and
//! the closed-form bounds on its cumulative quantity `S_t = γ² Σ_{k≤t} η_k`.
//!
//! ```text
//! η_0 = 1 / (ln 2 + ‖w_0‖)
//! η_t = S_{t−1} / (2 max{2F(w_0), ln² S_{t−1}})     t > 0
//! ```
//!
//! `S_t` moves through three regimes: geometric growth with rate in `[a, b]`
//! while `ln S ≤ −√(2F₀)` (up to `τ₁`), exact geometric growth with rate `b`
//! until `ln S > √(2F₀)` (at `τ₂`), then `ln³ S_t = Θ(t)`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::{exp_loss, norm, Dataset};

/// Steps between checks of the recurrence against the plain running sum.
pub const CONSISTENCY_INTERVAL: usize = 1000;
pub const CONSISTENCY_TOLERANCE: f64 = 1e-9;

/// `η_0 = 1 / (ln 2 + ‖w_0‖)`.
pub fn initial_eta(w0: &[f64]) -> f64 {
    initial_eta_for_norm(norm(w0))
}

pub fn initial_eta_for_norm(w0_norm: f64) -> f64 {
    1.0 / (std::f64::consts::LN_2 + w0_norm)
}

/// `F(w_0) = (1/n) Σ exp(−y_i⟨x_i, w_0⟩)`.
pub fn initial_f(w0: &[f64], data: &Dataset) -> Result<f64> {
    exp_loss(w0, data)
}

/// Which term of `max{2F₀, ln² S}` set the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `η_0`, before the max is consulted.
    Initial,
    /// `2F₀ ≥ ln² S`: exact geometric growth.
    Exponential,
    /// `ln² S > 2F₀`.
    LogSquared,
}

impl Branch {
    /// CSV code: 0 for the `2F₀` branch, 1 for the `ln²` branch, none for `η_0`.
    pub fn code(self) -> Option<u8> {
        match self {
            Branch::Initial => None,
            Branch::Exponential => Some(0),
            Branch::LogSquared => Some(1),
        }
    }
}

/// `η_t` from `S_{t−1}`, with the active branch of the max.
pub fn next_eta(s_prev: f64, f0: f64) -> Result<(f64, Branch)> {
    if !(s_prev.is_finite() && s_prev > 0.0) {
        return Err(Error::Numeric(format!(
            "schedule sum must be finite and positive, got {s_prev}"
        )));
    }
    let ln_sq = s_prev.ln().powi(2);
    let two_f = 2.0 * f0;
    let (denominator, branch) = if two_f >= ln_sq {
        (two_f, Branch::Exponential)
    } else {
        (ln_sq, Branch::LogSquared)
    };
    Ok((s_prev / (2.0 * denominator), branch))
}

/// `(2F_s + ln² Σ) / Σ` where `Σ = γ² Σ_{k=s}^{t−1} η_k`: the loss bound at
/// step `t` once `L(w_k) ≤ 1/η_k` has held on `[s, t−1]`.
pub fn stable_phase_bound(f_s: f64, scaled_sum: f64) -> f64 {
    (2.0 * f_s + scaled_sum.ln().powi(2)) / scaled_sum
}

/// `2 ln²(S_{t−1}) / S_{t−1}`, the loss bound after `τ₂`.
pub fn pointwise_tail_bound(s_prev: f64) -> f64 {
    2.0 * s_prev.ln().powi(2) / s_prev
}

/// Running schedule values at iteration `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub t: usize,
    pub eta: f64,
    pub s: f64,
    pub f0: f64,
    pub gamma: f64,
    pub tau1: Option<usize>,
    pub tau2: Option<usize>,
    pub branch: Branch,
    /// Plain `Σ η_k`, kept only to audit `s` against.
    eta_sum: f64,
}

impl ScheduleState {
    pub fn new(gamma: f64, w0_norm: f64, f0: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("margin must be positive, got {gamma}")));
        }
        if !(f0 > 0.0 && f0.is_finite()) {
            return Err(Error::InvalidInput(format!("F(w0) must be positive, got {f0}")));
        }
        if !(w0_norm >= 0.0 && w0_norm.is_finite()) {
            return Err(Error::InvalidInput(format!("‖w0‖ must be finite, got {w0_norm}")));
        }
        let eta = initial_eta_for_norm(w0_norm);
        let mut state = Self {
            t: 0,
            eta,
            s: gamma * gamma * eta,
            f0,
            gamma,
            tau1: None,
            tau2: None,
            branch: Branch::Initial,
            eta_sum: eta,
        };
        state.mark_crossings();
        Ok(state)
    }

    /// Schedule for GD started at `w0` on `data`.
    pub fn for_start(w0: &[f64], data: &Dataset, gamma: f64) -> Result<Self> {
        Self::new(gamma, norm(w0), initial_f(w0, data)?)
    }

    pub fn ln_s(&self) -> f64 {
        self.s.ln()
    }

    /// `√(2F₀)`, the crossing level for `τ₂` (negated for `τ₁`).
    pub fn threshold(&self) -> f64 {
        (2.0 * self.f0).sqrt()
    }

    pub fn next_eta(&self) -> Result<(f64, Branch)> {
        next_eta(self.s, self.f0)
    }

    /// One step of `S_t = S_{t−1} + γ² η_t`.
    pub fn advance(&self) -> Result<Self> {
        let (eta, branch) = self.next_eta()?;
        let mut next = Self {
            t: self.t + 1,
            eta,
            s: self.s + self.gamma * self.gamma * eta,
            branch,
            eta_sum: self.eta_sum + eta,
            ..*self
        };
        next.mark_crossings();
        if next.t.is_multiple_of(CONSISTENCY_INTERVAL) {
            let drift = next.sum_drift();
            if drift > CONSISTENCY_TOLERANCE {
                return Err(Error::Numeric(format!(
                    "schedule recurrence drifted {drift:e} from the running sum at t={}",
                    next.t
                )));
            }
        }
        Ok(next)
    }

    /// Relative gap between the recurrence value of `S_t` and `γ² Σ η_k`.
    pub fn sum_drift(&self) -> f64 {
        let summed = self.gamma * self.gamma * self.eta_sum;
        (self.s - summed).abs() / summed
    }

    fn mark_crossings(&mut self) {
        let ln_s = self.ln_s();
        let level = self.threshold();
        if self.tau1.is_none() && ln_s > -level {
            self.tau1 = Some(self.t);
        }
        if self.tau2.is_none() && ln_s > level {
            self.tau2 = Some(self.t);
        }
    }

    /// `self` followed by `steps` advanced states.
    pub fn simulate(self, steps: usize) -> Result<Vec<ScheduleState>> {
        let mut states = Vec::with_capacity(steps + 1);
        states.push(self);
        for _ in 0..steps {
            let next = states[states.len() - 1].advance()?;
            states.push(next);
        }
        Ok(states)
    }

    /// Advances until both crossing times are known or `max_steps` elapse.
    pub fn run_to_tau2(self, max_steps: usize) -> Result<Vec<ScheduleState>> {
        let mut states = vec![self];
        while states[states.len() - 1].tau2.is_none() {
            if states.len() > max_steps {
                return Err(Error::Numeric(format!(
                    "ln S did not cross √(2F₀) within {max_steps} steps"
                )));
            }
            let next = states[states.len() - 1].advance()?;
            states.push(next);
        }
        Ok(states)
    }
}

/// Writes `t,eta,S,lnS,branch`; `branch` is empty for `t = 0`.
pub fn write_schedule_csv(states: &[ScheduleState], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let file = std::fs::File::create(path).map_err(io)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "t,eta,S,lnS,branch").map_err(io)?;
    for st in states {
        let branch = st.branch.code().map(|c| c.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", st.t, st.eta, st.s, st.ln_s(), branch).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Constants of the growth bounds, anchored at an index `s` with `S_s > 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthConstants {
    /// `1 + γ²/(2 ln² S_s)`.
    pub c1: f64,
    /// `3γ²/2 + 3γ⁴/(4 ln³ S_s) + γ⁶/(8 ln⁶ S_s)`.
    pub c2: f64,
    /// `1 + γ²/(2 ln² S_0)`, lower one-step growth before `τ₁`.
    pub a: f64,
    /// `1 + γ²/(4F₀)`, upper one-step growth before `τ₁` and exact rate up to `τ₂`.
    pub b: f64,
    /// `(3γ²/4)^{1/3}`, the rate exponent of the loss bound.
    pub c: f64,
    pub anchor: usize,
    pub ln_s_anchor: f64,
    pub gamma: f64,
}

impl GrowthConstants {
    pub fn new(gamma: f64, f0: f64, ln_s0: f64, anchor: usize, ln_s_anchor: f64) -> Result<Self> {
        if !(ln_s_anchor > 0.0) {
            return Err(Error::Precondition(format!(
                "growth bounds need S_s > 1, got ln S_s = {ln_s_anchor}"
            )));
        }
        let g2 = gamma * gamma;
        let l = ln_s_anchor;
        Ok(Self {
            c1: 1.0 + g2 / (2.0 * l * l),
            c2: 1.5 * g2 + 0.75 * g2 * g2 / l.powi(3) + g2 * g2 * g2 / (8.0 * l.powi(6)),
            a: 1.0 + g2 / (2.0 * ln_s0 * ln_s0),
            b: 1.0 + g2 / (4.0 * f0),
            c: rate_exponent(gamma),
            anchor,
            ln_s_anchor,
            gamma,
        })
    }

    /// Anchors at `τ₂` of a simulated schedule.
    pub fn at_tau2(states: &[ScheduleState]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::InvalidInput("empty schedule history".into()))?;
        let tau2 = states
            .iter()
            .find_map(|s| s.tau2)
            .ok_or_else(|| Error::Precondition("τ₂ not reached in the history".into()))?;
        let anchor = states
            .iter()
            .find(|s| s.t == tau2)
            .ok_or_else(|| Error::Precondition("τ₂ state missing from the history".into()))?;
        Self::new(first.gamma, first.f0, first.ln_s(), tau2, anchor.ln_s())
    }

    /// Lower and upper bounds on `ln³ S_t`.
    pub fn sandwich(&self, t: usize) -> Result<(f64, f64)> {
        if t < self.anchor {
            return Err(Error::Precondition(format!(
                "t={t} precedes the anchor {}",
                self.anchor
            )));
        }
        let steps = (t - self.anchor) as f64;
        let base = self.ln_s_anchor.powi(3);
        let g2 = self.gamma * self.gamma;
        Ok((
            base + 1.5 * g2 / self.c1 * steps,
            base + self.c2 * steps,
        ))
    }
}

/// `(3γ²/4)^{1/3}`.
pub fn rate_exponent(gamma: f64) -> f64 {
    (0.75 * gamma * gamma).cbrt()
}

/// Closed interval `[lo, hi]` of admissible integer times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn exact(t: f64) -> Self {
        Self { lo: t, hi: t }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.lo <= t && t <= self.hi
    }
}

/// Analytic ranges for the crossing times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingBrackets {
    pub tau1: Bracket,
    pub tau2: Bracket,
    /// Range of `ln S_{τ₂}`: `(√(2F₀), √(2F₀) + ln b]` when `τ₂ > 0`.
    pub ln_s_tau2: Bracket,
}

/// Brackets for `τ₁` and `τ₂` from `S_0`, `F₀` and `γ` alone.
///
/// `τ₁` lies in `((−√(2F₀) − ln S₀)/ln b, 1 + (−√(2F₀) − ln S₀)/ln a]`. Since
/// `S_t = S_{τ₁} b^{t−τ₁}` up to `τ₂` and `ln S_{τ₁}` overshoots `−√(2F₀)` by at
/// most `ln b`, the `τ₂` bracket follows by propagating the `τ₁` bracket.
/// When `S₀` already exceeds a level the matching time is 0.
pub fn crossing_time_brackets(s0: f64, f0: f64, gamma: f64) -> CrossingBrackets {
    let level = (2.0 * f0).sqrt();
    let ln_s0 = s0.ln();
    let g2 = gamma * gamma;
    let ln_a = (g2 / (2.0 * ln_s0 * ln_s0)).ln_1p();
    let ln_b = (g2 / (4.0 * f0)).ln_1p();
    let ln_s_tau2 = Bracket {
        lo: level,
        hi: level + ln_b,
    };

    if ln_s0 > level {
        return CrossingBrackets {
            tau1: Bracket::exact(0.0),
            tau2: Bracket::exact(0.0),
            ln_s_tau2: Bracket::exact(ln_s0),
        };
    }
    if ln_s0 > -level {
        return CrossingBrackets {
            tau1: Bracket::exact(0.0),
            tau2: tau2_bracket_given(0, ln_s0, f0, gamma),
            ln_s_tau2,
        };
    }
    let gap = -level - ln_s0;
    let tau1 = Bracket {
        lo: gap / ln_b,
        hi: 1.0 + gap / ln_a,
    };
    // ln S_{τ₁} ∈ (−level, −level + ln b] ⇒ level − ln S_{τ₁} ∈ [2·level − ln b, 2·level).
    let tau2 = Bracket {
        lo: tau1.lo + (2.0 * level - ln_b) / ln_b,
        hi: tau1.hi + 1.0 + 2.0 * level / ln_b,
    };
    CrossingBrackets {
        tau1,
        tau2,
        ln_s_tau2,
    }
}

/// `τ₂ ∈ [τ₁ + (√(2F₀) − ln S_{τ₁})/ln b, τ₁ + 1 + (√(2F₀) − ln S_{τ₁})/ln b]`
/// given the observed `τ₁` and `ln S_{τ₁}`.
pub fn tau2_bracket_given(tau1: usize, ln_s_tau1: f64, f0: f64, gamma: f64) -> Bracket {
    let level = (2.0 * f0).sqrt();
    let ln_b = (gamma * gamma / (4.0 * f0)).ln_1p();
    let steps = (level - ln_s_tau1) / ln_b;
    Bracket {
        lo: tau1 as f64 + steps,
        hi: tau1 as f64 + 1.0 + steps,
    }
}

/// Range of `ln S_{τ₁}` when `τ₁ > 0`: `(−√(2F₀), −√(2F₀) + ln b]`.
pub fn overshoot_bracket(f0: f64, gamma: f64) -> Bracket {
    let level = (2.0 * f0).sqrt();
    Bracket {
        lo: -level,
        hi: -level + (gamma * gamma / (4.0 * f0)).ln_1p(),
    }
}

/// `C t^{2/3} exp(−c t^{1/3})` with `c = (3γ²/4)^{1/3}` and a calibrated `C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRateBound {
    pub c: f64,
    pub scale: f64,
}

impl LossRateBound {
    pub fn new(gamma: f64, scale: f64) -> Self {
        Self {
            c: rate_exponent(gamma),
            scale,
        }
    }

    /// Picks `C` so that the bound equals `loss` at iteration `t`.
    pub fn calibrated(gamma: f64, t: usize, loss: f64) -> Self {
        let c = rate_exponent(gamma);
        let t = t as f64;
        Self {
            c,
            scale: loss * (c * t.cbrt()).exp() / t.powf(2.0 / 3.0),
        }
    }

    pub fn eval(&self, t: usize) -> f64 {
        let t = t as f64;
        self.scale * t.powf(2.0 / 3.0) * (-self.c * t.cbrt()).exp()
    }
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput("a fit needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::InvalidInput("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Fit of `ln S_t` against `t^{1/3}` over states with `from ≤ t ≤ to`.
pub fn growth_fit(states: &[ScheduleState], from: usize, to: usize) -> Result<LinearFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = states
        .iter()
        .filter(|s| s.t >= from && s.t <= to)
        .map(|s| ((s.t as f64).cbrt(), s.ln_s()))
        .unzip();
    linear_fit(&xs, &ys)
}
