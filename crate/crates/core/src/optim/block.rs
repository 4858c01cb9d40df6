use crate::error::{Error, Result};
use crate::loss::{full_loss_unchecked, norm, Dataset, Weights};

use super::sgd::{apply_step, draw_index, plan_step, rng_for, sample_grad_norm};
use super::stats::HitTime;
use super::trace::{RunTrace, TraceRecord};

/// Block `k` of the doubling schedule: tolerance `eps`, length `len = N_k`,
/// first iteration `start = s_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub k: usize,
    pub eps: f64,
    pub len: usize,
    pub start: usize,
}

impl Block {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Blocks `0..=k_ε` with `ε_k = ε₀/2^k` and
/// `N_k = ⌈(4n/(δγ²))·ln²(8n/(δ·ε_k))⌉`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    pub eps0: f64,
    pub delta: f64,
    pub target_eps: f64,
    pub gamma: f64,
    pub n: usize,
    pub blocks: Vec<Block>,
    pub k_eps: usize,
}

/// `N_k` for tolerance `eps`.
pub fn block_length(n: usize, gamma: f64, delta: f64, eps: f64) -> usize {
    let n = n as f64;
    (4.0 * n / (delta * gamma * gamma) * (8.0 * n / (delta * eps)).ln().powi(2)).ceil() as usize
}

pub fn make_block_plan(n: usize, gamma: f64, eps0: f64, delta: f64, target_eps: f64) -> Result<BlockPlan> {
    if n == 0 {
        return Err(Error::InvalidInput("the dataset is empty".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("margin must be positive, got {gamma}")));
    }
    if !(target_eps > 0.0 && target_eps <= eps0 && eps0 < 1.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 < target ≤ ε₀ < 1, got target {target_eps} and ε₀ {eps0}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("δ must lie in (0, 1), got {delta}")));
    }
    let mut blocks = Vec::new();
    let mut start = 0usize;
    let mut eps = eps0;
    loop {
        let k = blocks.len();
        let len = block_length(n, gamma, delta, eps);
        blocks.push(Block { k, eps, len, start });
        start = start
            .checked_add(len)
            .ok_or_else(|| Error::InvalidInput("block schedule overflows the iteration counter".into()))?;
        if eps <= target_eps {
            break;
        }
        eps /= 2.0;
    }
    Ok(BlockPlan {
        eps0,
        delta,
        target_eps,
        gamma,
        n,
        k_eps: blocks.len() - 1,
        blocks,
    })
}

impl BlockPlan {
    /// `s_{k_ε}`.
    pub fn activation(&self) -> usize {
        self.blocks[self.k_eps].start
    }

    /// `s_{k_ε+1}`, the last iterate of the run.
    pub fn end(&self) -> usize {
        self.blocks[self.k_eps].end()
    }

    /// `ε̄ = ε_{k_ε}`.
    pub fn eps_bar(&self) -> f64 {
        self.blocks[self.k_eps].eps
    }

    /// `‖u‖` for `u = (1/γ)·ln(8n/(δε̄))·w*`.
    pub fn comparator_norm(&self) -> f64 {
        (8.0 * self.n as f64 / (self.delta * self.eps_bar())).ln() / self.gamma
    }

    /// `2n‖u‖² + δN/2` with `N = N_{k_ε}`: the bound on `E[(τ−s)₊ ∧ N]`.
    pub fn post_activation_budget(&self) -> f64 {
        let u = self.comparator_norm();
        2.0 * self.n as f64 * u * u + self.delta * self.blocks[self.k_eps].len as f64 / 2.0
    }
}

/// When the full loss is computed during a block run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    /// Every iterate: `min_loss` is the exact minimum.
    EveryStep,
    /// Every iterate until the target is first met, and every iterate from
    /// `s_{k_ε}` until the post-activation hit; otherwise only on recorded
    /// iterates. Whether the minimum is at most the target and the
    /// post-activation hitting time are both exact; `min_loss` is the minimum
    /// over evaluated iterates.
    UntilDecided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockOptions {
    pub policy: EvalPolicy,
    /// Trace keeps every `record_stride`-th iterate, block starts and the last iterate.
    pub record_stride: usize,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self {
            policy: EvalPolicy::EveryStep,
            record_stride: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockRun {
    pub trace: RunTrace,
    pub min_loss: f64,
    pub min_loss_exact: bool,
    /// Some iterate with `t ≤ s_{k_ε+1}` has loss at most the target.
    pub reached_target: bool,
    /// First `t ≥ s_{k_ε}` with `L(w_t) ≤ ε̄`, censored at `s_{k_ε+1}`.
    pub post_activation_tau: HitTime,
    /// Largest `η_t · ε_k` over the run; at most 1 by construction.
    pub max_step_ratio: f64,
}

impl BlockRun {
    /// `(τ − s_{k_ε})₊ ∧ N_{k_ε}`.
    pub fn steps_after_activation(&self, plan: &BlockPlan) -> usize {
        let s = plan.activation();
        let n = plan.blocks[plan.k_eps].len;
        match self.post_activation_tau {
            HitTime::Hit(t) => t.saturating_sub(s).min(n),
            HitTime::Censored(_) => n,
        }
    }
}

/// Block Adaptive SGD from `w₀ = 0` through the end of block `k_ε`, with
/// `η_t = min{1/ε_k, 1/L_{i_t}(w_t)}` inside block `k`.
pub fn run_block_sgd(data: &Dataset, plan: &BlockPlan, seed: u64, options: BlockOptions) -> Result<BlockRun> {
    if plan.n != data.n() {
        return Err(Error::DimensionMismatch {
            expected: plan.n,
            actual: data.n(),
        });
    }
    if !data.is_normalized() {
        return Err(Error::Precondition("feature rows must lie in the unit ball".into()));
    }
    if options.record_stride < 1 {
        return Err(Error::InvalidInput("record stride must be at least 1".into()));
    }
    let activation = plan.activation();
    let end = plan.end();
    let target = plan.target_eps;
    let eps_bar = plan.eps_bar();
    let mut rng = rng_for(seed);
    let mut w = vec![0.0; data.dim()];
    let mut records = Vec::new();
    let mut min_loss = f64::INFINITY;
    let mut reached = false;
    let mut tau = None;
    let mut max_ratio: f64 = 0.0;
    let mut blocks = plan.blocks.iter();
    let mut block = *blocks.next().expect("a plan has at least one block");

    for t in 0..=end {
        if t == block.end() && t < end {
            block = *blocks.next().expect("blocks cover the run");
        }
        let block_start = t == block.start;
        let recorded = t % options.record_stride == 0 || block_start || t == end;
        let evaluate = match options.policy {
            EvalPolicy::EveryStep => true,
            EvalPolicy::UntilDecided => recorded || !reached || (t >= activation && tau.is_none()),
        };
        let loss = if evaluate {
            let loss = full_loss_unchecked(&w, data);
            min_loss = min_loss.min(loss);
            reached |= loss <= target;
            if t >= activation && tau.is_none() && loss <= eps_bar {
                tau = Some(t);
            }
            loss
        } else {
            f64::NAN
        };
        let step = plan_step(data, &w, draw_index(&mut rng, data.n()), 1.0 / block.eps);
        if recorded {
            records.push(TraceRecord {
                t,
                loss,
                eta: step.eta,
                s: None,
                grad_norm: sample_grad_norm(data, &step),
                w_norm: norm(&w),
            });
        }
        if t == end {
            break;
        }
        max_ratio = max_ratio.max(step.eta * block.eps);
        apply_step(data, &mut w, &step);
    }

    Ok(BlockRun {
        trace: RunTrace {
            records,
            final_weights: Weights::new(w)?,
            seed: Some(seed),
        },
        min_loss,
        min_loss_exact: options.policy == EvalPolicy::EveryStep,
        reached_target: reached,
        post_activation_tau: tau.map_or(HitTime::Censored(end), HitTime::Hit),
        max_step_ratio: max_ratio,
    })
}
