//! C ABI over the `sepgd` crate.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns a
//! [`SepgdStatus`]; on failure, [`sepgd_last_error_message`] describes the
//! error on the calling thread until the next failing call. Panics are caught
//! and reported as [`SepgdStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sepgd::data::{generate_separable, load_csv, read_certificate, CsvOptions, GenParams};
use sepgd::optim::{
    default_cap, make_block_plan, run_adaptive_sgd, run_block_sgd, run_gd_constant, run_gd_schedule, BlockOptions,
    BlockPlan, EvalPolicy, HitTime, RunTrace,
};
use sepgd::schedule::{self, Branch};
use sepgd::{Dataset, Error, Weights};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SepgdStatus {
    Ok = 0,
    InvalidInput = 1,
    DimensionMismatch = 2,
    IndexOutOfRange = 3,
    Numeric = 4,
    NoConvergence = 5,
    Range = 6,
    Precondition = 7,
    NotSeparable = 8,
    Parse = 9,
    /// A proven inequality failed on a concrete iterate.
    Falsified = 10,
    Divergence = 11,
    Config = 12,
    Io = 13,
    NullPointer = 14,
    /// A string argument was not valid UTF-8.
    Utf8 = 15,
    Panic = 16,
}

impl From<&Error> for SepgdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => SepgdStatus::InvalidInput,
            Error::DimensionMismatch { .. } => SepgdStatus::DimensionMismatch,
            Error::IndexOutOfRange { .. } => SepgdStatus::IndexOutOfRange,
            Error::Numeric(_) => SepgdStatus::Numeric,
            Error::NoConvergence { .. } => SepgdStatus::NoConvergence,
            Error::Range { .. } => SepgdStatus::Range,
            Error::Precondition(_) => SepgdStatus::Precondition,
            Error::NotSeparable { .. } => SepgdStatus::NotSeparable,
            Error::Parse { .. } => SepgdStatus::Parse,
            Error::Falsified { .. } => SepgdStatus::Falsified,
            Error::Divergence { .. } => SepgdStatus::Divergence,
            Error::Config(_) => SepgdStatus::Config,
            Error::Io { .. } => SepgdStatus::Io,
        }
    }
}

/// Which term of the schedule's max set a step size.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SepgdBranch {
    Initial = -1,
    Exponential = 0,
    LogSquared = 1,
}

impl From<Branch> for SepgdBranch {
    fn from(b: Branch) -> Self {
        match b {
            Branch::Initial => SepgdBranch::Initial,
            Branch::Exponential => SepgdBranch::Exponential,
            Branch::LogSquared => SepgdBranch::LogSquared,
        }
    }
}

/// One trace row. `s` is NaN and `has_s` false for runs without a schedule.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SepgdRecord {
    pub t: u64,
    pub loss: f64,
    pub eta: f64,
    pub s: f64,
    pub has_s: bool,
    pub grad_norm: f64,
    pub w_norm: f64,
}

/// One block of a block-SGD plan.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SepgdBlock {
    pub k: u64,
    pub eps: f64,
    pub len: u64,
    pub start: u64,
}

/// Outcome of a stopping-time search; `time` is the cap when censored.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SepgdHit {
    pub time: u64,
    pub censored: bool,
}

impl From<HitTime> for SepgdHit {
    fn from(h: HitTime) -> Self {
        SepgdHit {
            time: h.time() as u64,
            censored: h.is_censored(),
        }
    }
}

/// Summary of a block-SGD run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SepgdBlockSummary {
    pub min_loss: f64,
    pub min_loss_exact: bool,
    pub reached_target: bool,
    pub post_activation_tau: SepgdHit,
    pub steps_after_activation: u64,
    pub max_step_ratio: f64,
}

/// Opaque dataset handle.
pub struct SepgdDataset {
    inner: Dataset,
    scale: f64,
}

/// Opaque trace handle returned by every optimizer.
pub struct SepgdTrace {
    inner: RunTrace,
}

/// Opaque block-SGD plan handle.
pub struct SepgdBlockPlan {
    inner: BlockPlan,
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Utf8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SepgdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SepgdStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            let status = SepgdStatus::from(&e);
            set_last_error(e.to_string());
            status
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer passed for {what}"));
            SepgdStatus::NullPointer
        }
        Ok(Err(Failure::Utf8)) => {
            set_last_error("path is not valid UTF-8".into());
            SepgdStatus::Utf8
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            SepgdStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn dest<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path<'a>(p: *const c_char, what: &'static str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map(Path::new).map_err(|_| Failure::Utf8)
}

fn gamma_of(data: &SepgdDataset, gamma: f64) -> Result<f64, Failure> {
    if gamma > 0.0 {
        return Ok(gamma);
    }
    data.inner.certificate().map(|c| c.margin()).ok_or_else(|| {
        Failure::Core(Error::Precondition(
            "no margin supplied and the dataset carries no certificate".into(),
        ))
    })
}

fn weights(dim: usize, w0: &[f64]) -> Result<Weights, Failure> {
    if w0.is_empty() {
        Ok(Weights::zeros(dim))
    } else {
        Ok(Weights::new(w0.to_vec())?)
    }
}

/// Message for the last failing call on this thread, or NULL if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sepgd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Synthetic separable dataset in `dim` dimensions with certified margin `margin`.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn sepgd_dataset_generate(
    dim: usize,
    count: usize,
    margin: f64,
    seed: u64,
    out: *mut *mut SepgdDataset,
) -> SepgdStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let inner = generate_separable(&GenParams {
            dim,
            count,
            margin,
            seed,
        })?;
        *slot = Box::into_raw(Box::new(SepgdDataset { inner, scale: 1.0 }));
        Ok(())
    })
}

unsafe fn out_ptr<'a, T>(p: *mut *mut T) -> Result<&'a mut *mut T, Failure> {
    dest(p, "out")
}

/// Dataset from a row-major `count × dim` feature array and ±1 labels.
/// Rows must lie in the unit ball.
///
/// # Safety
/// `features` must point to `count * dim` doubles, `labels` to `count`
/// doubles, and `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn sepgd_dataset_from_arrays(
    features: *const f64,
    labels: *const f64,
    count: usize,
    dim: usize,
    out: *mut *mut SepgdDataset,
) -> SepgdStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let total = count.checked_mul(dim).ok_or_else(|| {
            Failure::Core(Error::InvalidInput("count * dim overflows".into()))
        })?;
        let x = slice(features, total, "features")?;
        let y = slice(labels, count, "labels")?;
        let rows = if dim == 0 {
            vec![Vec::new(); count]
        } else {
            x.chunks(dim).map(<[f64]>::to_vec).collect()
        };
        let inner = Dataset::new(rows, y.to_vec())?;
        *slot = Box::into_raw(Box::new(SepgdDataset { inner, scale: 1.0 }));
        Ok(())
    })
}

/// Reads `label,feature_1,…,feature_d` rows and rescales them into the unit
/// ball. When `certificate_path` is non-NULL, the certificate is attached
/// with its margin multiplied by the load scale.
///
/// # Safety
/// `path` and a non-NULL `certificate_path` must be NUL-terminated strings;
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn sepgd_dataset_load_csv(
    path: *const c_char,
    certificate_path: *const c_char,
    skip_header: bool,
    out: *mut *mut SepgdDataset,
) -> SepgdStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let data_path = self::path(path, "path")?;
        let loaded = load_csv(
            data_path,
            CsvOptions {
                skip_header,
                keep_scale: false,
            },
        )?;
        let mut inner = loaded.dataset;
        if !certificate_path.is_null() {
            let cert = read_certificate(self::path(certificate_path, "certificate_path")?)?;
            let scaled = cert.with_margin(cert.margin() * loaded.scale)?;
            inner = inner.with_certificate(scaled)?;
        }
        *slot = Box::into_raw(Box::new(SepgdDataset {
            inner,
            scale: loaded.scale,
        }));
        Ok(())
    })
}

/// Releases a dataset. NULL is ignored.
///
/// # Safety
/// `data` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sepgd_dataset_free(data: *mut SepgdDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sepgd_dataset_count(data: *const SepgdDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.n())
}

/// Feature dimension, or 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sepgd_dataset_dim(data: *const SepgdDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.dim())
}

/// Factor the features were multiplied by when loaded; 1 otherwise.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sepgd_dataset_scale(data: *const SepgdDataset) -> f64 {
    data.as_ref().map_or(f64::NAN, |d| d.scale)
}

/// Certified margin of the dataset; fails with `PRECONDITION` when uncertified.
///
/// # Safety
/// `data` must be a live handle and `margin` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sepgd_dataset_margin(data: *const SepgdDataset, margin: *mut f64) -> SepgdStatus {
    guard(|| {
        let data = deref(data, "data")?;
        *dest(margin, "margin")? = gamma_of(data, 0.0)?;
        Ok(())
    })
}

/// Writes the dataset to CSV in the loader's format, with ±1 labels and no header.
///
/// # Safety
/// `data` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sepgd_dataset_write_csv(data: *const SepgdDataset, path: *const c_char) -> SepgdStatus {
    guard(|| {
        let data = deref(data, "data")?;
        sepgd::data::write_csv(&data.inner, self::path(path, "path")?)?;
        Ok(())
    })
}

/// Mean logistic loss at `w` (length `dim`).
///
/// # Safety
/// `w` must point to `dim` doubles and `loss` be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sepgd_full_loss(
    data: *const SepgdDataset,
    w: *const f64,
    dim: usize,
    loss: *mut f64,
) -> SepgdStatus {
    guard(|| {
        let data = deref(data, "data")?;
        *dest(loss, "loss")? = sepgd::loss::full_loss(slice(w, dim, "w")?, &data.inner)?;
        Ok(())
    })
}

/// Gradient of the mean logistic loss at `w`, written to `grad` (length `dim`).
///
/// # Safety
/// `w` and `grad` must each point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sepgd_full_gradient(
    data: *const SepgdDataset,
    w: *const f64,
    dim: usize,
    grad: *mut f64,
) -> SepgdStatus {
    guard(|| {
        let data = deref(data, "data")?;
        let g = sepgd::loss::full_gradient(slice(w, dim, "w")?, &data.inner)?;
        slice_mut(grad, dim, "grad")?.copy_from_slice(&g);
        Ok(())
    })
}

/// `η₀ = 1/(ln 2 + ‖w₀‖)`.
#[no_mangle]
pub extern "C" fn sepgd_schedule_initial_eta(w0_norm: f64) -> f64 {
    schedule::initial_eta_for_norm(w0_norm)
}

/// Step size following running sum `s_prev`, with the branch that set it.
///
/// # Safety
/// `eta` and `branch` must each be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sepgd_schedule_next_eta(
    s_prev: f64,
    f0: f64,
    eta: *mut f64,
    branch: *mut SepgdBranch,
) -> SepgdStatus {
    guard(|| {
        let (e, b) = schedule::next_eta(s_prev, f0)?;
        *dest(eta, "eta")? = e;
        *dest(branch, "branch")? = b.into();
        Ok(())
    })
}

/// GD with the increasing step-size schedule for `steps` updates.
///
/// `gamma <= 0` uses the dataset's certified margin. `w0` may be NULL with
/// `w0_len` 0 to start from the origin. A violated invariant returns
/// `FALSIFIED` and no trace.
///
/// # Safety
/// `w0` must point to `w0_len` doubles and `out` be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sepgd_run_gd_schedule(
    data: *const SepgdDataset,
    gamma: f64,
    w0: *const f64,
    w0_len: usize,
    steps: usize,
    out: *mut *mut SepgdTrace,
) -> SepgdStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let data = deref(data, "data")?;
        let gamma = gamma_of(data, gamma)?;
        let w0 = weights(data.inner.dim(), slice(w0, w0_len, "w0")?)?;
        let run = run_gd_schedule(&data.inner, gamma, &w0, steps)?;
        *slot = Box::into_raw(Box::new(SepgdTrace { inner: run.trace }));
        Ok(())
    })
}

/// GD with constant step `eta` for `steps` updates.
///
/// # Safety
/// `w0` must point to `w0_len` doubles and `out` be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sepgd_run_gd_constant(
    data: *const SepgdDataset,
    eta: f64,
    w0: *const f64,
    w0_len: usize,
    steps: usize,
    out: *mut *mut SepgdTrace,
) -> SepgdStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let data = deref(data, "data")?;
        let w0 = weights(data.inner.dim(), slice(w0, w0_len, "w0")?)?;
        let trace = run_gd_constant(&data.inner, eta, &w0, steps)?;
        *slot = Box::into_raw(Box::new(SepgdTrace { inner: trace }));
        Ok(())
    })
}

/// Adaptive SGD from the origin until the full loss reaches `epsilon`.
///
/// `cap = 0` uses ten times the expectation bound, which needs a margin:
/// `gamma <= 0` takes the certified one.
///
/// # Safety
/// `out` and `tau` must each be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sepgd_run_adaptive_sgd(
    data: *const SepgdDataset,
    epsilon: f64,
    seed: u64,
    cap: usize,
    gamma: f64,
    out: *mut *mut SepgdTrace,
    tau: *mut SepgdHit,
) -> SepgdStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let tau = dest(tau, "tau")?;
        let data = deref(data, "data")?;
        let cap = if cap == 0 {
            default_cap(data.inner.n(), gamma_of(data, gamma)?, epsilon)
        } else {
            cap
        };
        let run = run_adaptive_sgd(&data.inner, epsilon, seed, cap)?;
        *tau = run.tau.into();
        *slot = Box::into_raw(Box::new(SepgdTrace { inner: run.trace }));
        Ok(())
    })
}

/// Number of records in a trace, or 0 for NULL.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sepgd_trace_len(trace: *const SepgdTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.records.len())
}

/// Copies record `index` into `record`.
///
/// # Safety
/// `trace` must be a live handle and `record` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sepgd_trace_record(
    trace: *const SepgdTrace,
    index: usize,
    record: *mut SepgdRecord,
) -> SepgdStatus {
    guard(|| {
        let trace = deref(trace, "trace")?;
        let records = &trace.inner.records;
        let r = records.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: records.len(),
        })?;
        *dest(record, "record")? = SepgdRecord {
            t: r.t as u64,
            loss: r.loss,
            eta: r.eta,
            s: r.s.unwrap_or(f64::NAN),
            has_s: r.s.is_some(),
            grad_norm: r.grad_norm,
            w_norm: r.w_norm,
        };
        Ok(())
    })
}

/// Length of the final weight vector, or 0 for NULL.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sepgd_trace_dim(trace: *const SepgdTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.final_weights.len())
}

/// Copies the final iterate into `w` (length `dim`, which must match).
///
/// # Safety
/// `trace` must be a live handle and `w` point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sepgd_trace_final_weights(trace: *const SepgdTrace, w: *mut f64, dim: usize) -> SepgdStatus {
    guard(|| {
        let trace = deref(trace, "trace")?;
        let weights: &[f64] = &trace.inner.final_weights;
        if weights.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                actual: dim,
            }
            .into());
        }
        slice_mut(w, dim, "w")?.copy_from_slice(weights);
        Ok(())
    })
}

/// Writes `t,loss,eta,S,grad_norm,w_norm` rows.
///
/// # Safety
/// `trace` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sepgd_trace_write_csv(trace: *const SepgdTrace, path: *const c_char) -> SepgdStatus {
    guard(|| {
        let trace = deref(trace, "trace")?;
        trace.inner.write_csv(self::path(path, "path")?)?;
        Ok(())
    })
}

/// Releases a trace. NULL is ignored.
///
/// # Safety
/// `trace` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sepgd_trace_free(trace: *mut SepgdTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Block plan with `ε_k = eps0/2^k` down to `target_eps`, plus one further block.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sepgd_block_plan_new(
    n: usize,
    gamma: f64,
    eps0: f64,
    delta: f64,
    target_eps: f64,
    out: *mut *mut SepgdBlockPlan,
) -> SepgdStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let inner = make_block_plan(n, gamma, eps0, delta, target_eps)?;
        *slot = Box::into_raw(Box::new(SepgdBlockPlan { inner }));
        Ok(())
    })
}

/// Number of blocks, or 0 for NULL.
///
/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sepgd_block_plan_len(plan: *const SepgdBlockPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.inner.blocks.len())
}

/// Index of the block whose tolerance reaches the target.
///
/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sepgd_block_plan_k_eps(plan: *const SepgdBlockPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.inner.k_eps)
}

/// Copies block `k` into `block`.
///
/// # Safety
/// `plan` must be a live handle and `block` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sepgd_block_plan_block(
    plan: *const SepgdBlockPlan,
    k: usize,
    block: *mut SepgdBlock,
) -> SepgdStatus {
    guard(|| {
        let plan = deref(plan, "plan")?;
        let blocks = &plan.inner.blocks;
        let b = blocks.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: blocks.len(),
        })?;
        *dest(block, "block")? = SepgdBlock {
            k: b.k as u64,
            eps: b.eps,
            len: b.len as u64,
            start: b.start as u64,
        };
        Ok(())
    })
}

/// Releases a plan. NULL is ignored.
///
/// # Safety
/// `plan` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sepgd_block_plan_free(plan: *mut SepgdBlockPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Block SGD over the whole plan. With `every_step` the full loss is
/// evaluated at every iterate; otherwise only until the outcome is decided.
/// The trace keeps every `record_stride`-th iterate (0 means 1).
///
/// # Safety
/// `out` and `summary` must each be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sepgd_run_block_sgd(
    data: *const SepgdDataset,
    plan: *const SepgdBlockPlan,
    seed: u64,
    every_step: bool,
    record_stride: usize,
    out: *mut *mut SepgdTrace,
    summary: *mut SepgdBlockSummary,
) -> SepgdStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let summary = dest(summary, "summary")?;
        let data = deref(data, "data")?;
        let plan = &deref(plan, "plan")?.inner;
        let options = BlockOptions {
            policy: if every_step {
                EvalPolicy::EveryStep
            } else {
                EvalPolicy::UntilDecided
            },
            record_stride: record_stride.max(1),
        };
        let run = run_block_sgd(&data.inner, plan, seed, options)?;
        *summary = SepgdBlockSummary {
            min_loss: run.min_loss,
            min_loss_exact: run.min_loss_exact,
            reached_target: run.reached_target,
            post_activation_tau: run.post_activation_tau.into(),
            steps_after_activation: run.steps_after_activation(plan) as u64,
            max_step_ratio: run.max_step_ratio,
        };
        *slot = Box::into_raw(Box::new(SepgdTrace { inner: run.trace }));
        Ok(())
    })
}
