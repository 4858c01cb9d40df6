use std::ffi::{CStr, CString};
use std::ptr;

use sepgd::data::{generate_separable, write_certificate, GenParams};
use sepgd::optim::{make_block_plan, run_adaptive_sgd, run_gd_schedule};
use sepgd::schedule::next_eta;
use sepgd::Weights;
use sepgd_ffi::*;

fn last_error() -> String {
    let p = sepgd_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn generated(dim: usize, count: usize, margin: f64, seed: u64) -> *mut SepgdDataset {
    let mut data = ptr::null_mut();
    let status = unsafe { sepgd_dataset_generate(dim, count, margin, seed, &mut data) };
    assert_eq!(status, SepgdStatus::Ok);
    assert!(!data.is_null());
    data
}

fn records(trace: *const SepgdTrace) -> Vec<SepgdRecord> {
    let len = unsafe { sepgd_trace_len(trace) };
    (0..len)
        .map(|i| {
            let mut r = SepgdRecord {
                t: 0,
                loss: 0.0,
                eta: 0.0,
                s: 0.0,
                has_s: false,
                grad_norm: 0.0,
                w_norm: 0.0,
            };
            assert_eq!(unsafe { sepgd_trace_record(trace, i, &mut r) }, SepgdStatus::Ok);
            r
        })
        .collect()
}

#[test]
fn dataset_accessors_and_loss_at_origin() {
    let data = generated(6, 40, 0.3, 2);
    unsafe {
        assert_eq!(sepgd_dataset_count(data), 40);
        assert_eq!(sepgd_dataset_dim(data), 6);
        assert_eq!(sepgd_dataset_scale(data), 1.0);
        let mut margin = 0.0;
        assert_eq!(sepgd_dataset_margin(data, &mut margin), SepgdStatus::Ok);
        assert_eq!(margin, 0.3);

        let w = [0.0; 6];
        let mut loss = 0.0;
        assert_eq!(sepgd_full_loss(data, w.as_ptr(), 6, &mut loss), SepgdStatus::Ok);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let w = [0.3, -0.2, 0.1, 0.0, 0.5, -0.4];
        let mut grad = [0.0; 6];
        assert_eq!(sepgd_full_gradient(data, w.as_ptr(), 6, grad.as_mut_ptr()), SepgdStatus::Ok);
        let core = generate_separable(&GenParams { dim: 6, count: 40, margin: 0.3, seed: 2 }).unwrap();
        assert_eq!(grad.to_vec(), sepgd::loss::full_gradient(&w, &core).unwrap());
        sepgd_dataset_free(data);
    }
}

#[test]
fn gd_schedule_trace_matches_core() {
    let data = generated(10, 200, 0.25, 4);
    let mut trace = ptr::null_mut();
    let status = unsafe { sepgd_run_gd_schedule(data, 0.0, ptr::null(), 0, 150, &mut trace) };
    assert_eq!(status, SepgdStatus::Ok);
    let rows = records(trace);
    assert_eq!(rows.len(), 151);
    for pair in rows.windows(2) {
        assert!(pair[1].loss <= pair[0].loss);
    }
    assert!(rows.iter().all(|r| r.has_s && r.loss * r.eta <= 1.0 + 1e-10));

    let core = generate_separable(&GenParams { dim: 10, count: 200, margin: 0.25, seed: 4 }).unwrap();
    let expected = run_gd_schedule(&core, 0.25, &Weights::zeros(10), 150).unwrap();
    for (r, e) in rows.iter().zip(&expected.trace.records) {
        assert_eq!((r.t as usize, r.loss, r.eta, Some(r.s)), (e.t, e.loss, e.eta, e.s));
    }

    let dim = unsafe { sepgd_trace_dim(trace) };
    assert_eq!(dim, 10);
    let mut w = vec![0.0; dim];
    assert_eq!(unsafe { sepgd_trace_final_weights(trace, w.as_mut_ptr(), dim) }, SepgdStatus::Ok);
    assert_eq!(w.as_slice(), &*expected.trace.final_weights);
    unsafe {
        sepgd_trace_free(trace);
        sepgd_dataset_free(data);
    }
}

#[test]
fn sgd_reports_hit_time_and_leaves_s_empty() {
    let data = generated(5, 200, 0.3, 2);
    let mut trace = ptr::null_mut();
    let mut tau = SepgdHit { time: 0, censored: true };
    let status = unsafe { sepgd_run_adaptive_sgd(data, 0.05, 4, 0, 0.0, &mut trace, &mut tau) };
    assert_eq!(status, SepgdStatus::Ok);
    let core = generate_separable(&GenParams { dim: 5, count: 200, margin: 0.3, seed: 2 }).unwrap();
    let expected = run_adaptive_sgd(&core, 0.05, 4, sepgd::optim::default_cap(200, 0.3, 0.05)).unwrap();
    assert!(!tau.censored);
    assert_eq!(tau.time as usize, expected.tau.time());
    let rows = records(trace);
    assert!(rows.iter().all(|r| !r.has_s && r.s.is_nan()));
    assert_eq!(rows.last().unwrap().t, tau.time);
    assert!(rows.last().unwrap().loss <= 0.05);
    unsafe {
        sepgd_trace_free(trace);
        sepgd_dataset_free(data);
    }
}

#[test]
fn constant_step_and_censoring() {
    let data = generated(4, 60, 0.2, 8);
    let mut trace = ptr::null_mut();
    let w0 = [0.1, 0.0, 0.0, 0.0];
    assert_eq!(
        unsafe { sepgd_run_gd_constant(data, 1.0, w0.as_ptr(), 4, 30, &mut trace) },
        SepgdStatus::Ok
    );
    let rows = records(trace);
    assert_eq!(rows.len(), 31);
    assert!(rows.iter().all(|r| r.eta == 1.0 && !r.has_s));
    unsafe { sepgd_trace_free(trace) };

    let mut tau = SepgdHit { time: 0, censored: false };
    assert_eq!(
        unsafe { sepgd_run_adaptive_sgd(data, 1e-9, 0, 5, 0.0, &mut trace, &mut tau) },
        SepgdStatus::Ok
    );
    assert!(tau.censored);
    assert_eq!(tau.time, 5);
    unsafe {
        sepgd_trace_free(trace);
        sepgd_dataset_free(data);
    }
}

#[test]
fn schedule_step_matches_core() {
    let mut eta = 0.0;
    let mut branch = SepgdBranch::Initial;
    for (s, f0) in [(1.5, 1.0), (400.0, 0.7), (1e9, 2.0)] {
        assert_eq!(unsafe { sepgd_schedule_next_eta(s, f0, &mut eta, &mut branch) }, SepgdStatus::Ok);
        let (e, b) = next_eta(s, f0).unwrap();
        assert_eq!(eta, e);
        assert_eq!(branch, SepgdBranch::from(b));
    }
    assert_eq!(sepgd_schedule_initial_eta(0.0), 1.0 / std::f64::consts::LN_2);
    assert_eq!(
        unsafe { sepgd_schedule_next_eta(-1.0, 1.0, &mut eta, &mut branch) },
        SepgdStatus::Numeric
    );
}

#[test]
fn block_plan_and_run() {
    let mut plan = ptr::null_mut();
    assert_eq!(unsafe { sepgd_block_plan_new(20, 0.5, 0.4, 0.5, 0.1, &mut plan) }, SepgdStatus::Ok);
    let expected = make_block_plan(20, 0.5, 0.4, 0.5, 0.1).unwrap();
    unsafe {
        assert_eq!(sepgd_block_plan_len(plan), expected.blocks.len());
        assert_eq!(sepgd_block_plan_k_eps(plan), 2);
        for (k, b) in expected.blocks.iter().enumerate() {
            let mut out = SepgdBlock { k: 0, eps: 0.0, len: 0, start: 0 };
            assert_eq!(sepgd_block_plan_block(plan, k, &mut out), SepgdStatus::Ok);
            assert_eq!((out.k as usize, out.eps, out.len as usize, out.start as usize), (b.k, b.eps, b.len, b.start));
        }
        let mut out = SepgdBlock { k: 0, eps: 0.0, len: 0, start: 0 };
        assert_eq!(sepgd_block_plan_block(plan, 99, &mut out), SepgdStatus::IndexOutOfRange);
    }

    let data = generated(3, 20, 0.5, 3);
    let mut trace = ptr::null_mut();
    let mut summary = SepgdBlockSummary {
        min_loss: 0.0,
        min_loss_exact: false,
        reached_target: false,
        post_activation_tau: SepgdHit { time: 0, censored: false },
        steps_after_activation: 0,
        max_step_ratio: 0.0,
    };
    let status = unsafe { sepgd_run_block_sgd(data, plan, 1, true, 1000, &mut trace, &mut summary) };
    assert_eq!(status, SepgdStatus::Ok);
    assert!(summary.min_loss_exact && summary.reached_target);
    assert!(summary.min_loss <= 0.1);
    assert!(summary.max_step_ratio <= 1.0);
    assert_eq!(records(trace).last().unwrap().t as usize, expected.end());
    unsafe {
        sepgd_trace_free(trace);
        sepgd_block_plan_free(plan);
        sepgd_dataset_free(data);
    }
}

#[test]
fn csv_round_trip_with_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let data = generated(4, 30, 0.2, 5);
    let csv = CString::new(dir.path().join("d.csv").to_str().unwrap()).unwrap();
    let cert_path = dir.path().join("d.cert.toml");
    let core = generate_separable(&GenParams { dim: 4, count: 30, margin: 0.2, seed: 5 }).unwrap();
    write_certificate(core.certificate().unwrap(), &cert_path).unwrap();
    let cert = CString::new(cert_path.to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(sepgd_dataset_write_csv(data, csv.as_ptr()), SepgdStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(sepgd_dataset_load_csv(csv.as_ptr(), cert.as_ptr(), false, &mut loaded), SepgdStatus::Ok);
        assert_eq!(sepgd_dataset_count(loaded), 30);
        let scale = sepgd_dataset_scale(loaded);
        assert!(scale >= 1.0);
        let mut margin = 0.0;
        assert_eq!(sepgd_dataset_margin(loaded, &mut margin), SepgdStatus::Ok);
        assert!((margin - 0.2 * scale).abs() < 1e-15);

        let mut trace = ptr::null_mut();
        assert_eq!(sepgd_run_gd_schedule(loaded, 0.0, ptr::null(), 0, 20, &mut trace), SepgdStatus::Ok);
        let out = CString::new(dir.path().join("trace.csv").to_str().unwrap()).unwrap();
        assert_eq!(sepgd_trace_write_csv(trace, out.as_ptr()), SepgdStatus::Ok);
        let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert!(text.starts_with("t,loss,eta,S,grad_norm,w_norm\n"));
        assert_eq!(text.lines().count(), 22);
        sepgd_trace_free(trace);
        sepgd_dataset_free(loaded);

        let missing = CString::new(dir.path().join("absent.csv").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(sepgd_dataset_load_csv(missing.as_ptr(), ptr::null(), false, &mut none), SepgdStatus::Io);
        assert!(none.is_null());
        assert!(last_error().contains("absent.csv"));
        sepgd_dataset_free(data);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut data = ptr::null_mut();
        assert_eq!(sepgd_dataset_generate(3, 5, 1.5, 0, &mut data), SepgdStatus::InvalidInput);
        assert!(data.is_null());
        assert!(last_error().contains("margin"));
        assert_eq!(sepgd_dataset_generate(3, 5, 0.2, 0, ptr::null_mut()), SepgdStatus::NullPointer);
        assert_eq!(last_error(), "null pointer passed for out");

        let features = [0.6, 0.0, 0.0, -0.6];
        let labels = [1.0, -1.0];
        assert_eq!(
            sepgd_dataset_from_arrays(features.as_ptr(), labels.as_ptr(), 2, 2, &mut data),
            SepgdStatus::Ok
        );
        let mut margin = 0.0;
        assert_eq!(sepgd_dataset_margin(data, &mut margin), SepgdStatus::Precondition);
        let mut trace = ptr::null_mut();
        let mut tau = SepgdHit { time: 0, censored: false };
        assert_eq!(
            sepgd_run_adaptive_sgd(data, 0.1, 0, 0, 0.0, &mut trace, &mut tau),
            SepgdStatus::Precondition
        );
        assert_eq!(
            sepgd_run_adaptive_sgd(data, 0.1, 0, 0, 0.5, &mut trace, &mut tau),
            SepgdStatus::Ok
        );
        sepgd_trace_free(trace);

        let w = [0.0; 3];
        let mut loss = 0.0;
        assert_eq!(sepgd_full_loss(data, w.as_ptr(), 3, &mut loss), SepgdStatus::DimensionMismatch);
        assert_eq!(sepgd_full_loss(ptr::null(), w.as_ptr(), 2, &mut loss), SepgdStatus::NullPointer);
        assert_eq!(sepgd_full_loss(data, ptr::null(), 2, &mut loss), SepgdStatus::NullPointer);

        sepgd_dataset_free(data);

        // A claimed margin above what the certificate achieves.
        let certified = generated(3, 30, 0.2, 1);
        assert_eq!(
            sepgd_run_gd_schedule(certified, 2.0, ptr::null(), 0, 5, &mut trace),
            SepgdStatus::Precondition
        );
        sepgd_dataset_free(certified);

        let outside = [1.5, 0.0];
        assert_eq!(
            sepgd_dataset_from_arrays(outside.as_ptr(), labels.as_ptr(), 1, 2, &mut data),
            SepgdStatus::InvalidInput
        );

        let bad = [0xff_u8, 0];
        assert_eq!(
            sepgd_dataset_load_csv(bad.as_ptr().cast(), ptr::null(), false, &mut data),
            SepgdStatus::Utf8
        );

        sepgd_dataset_free(ptr::null_mut());
        sepgd_trace_free(ptr::null_mut());
        sepgd_block_plan_free(ptr::null_mut());
        assert_eq!(sepgd_trace_len(ptr::null()), 0);
    }
}

#[test]
fn header_declares_every_export() {
    let source = include_str!("../src/lib.rs");
    let header = include_str!("../include/sepgd.h");
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["SepgdStatus", "SepgdBranch", "SepgdRecord", "SepgdBlockSummary", "SepgdDataset", "SepgdTrace"] {
        assert!(header.contains(&format!("typedef struct {ty}")) || header.contains(&format!("typedef enum {ty}")), "{ty} missing from header");
    }
}
