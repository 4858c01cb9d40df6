use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use sepgd::loss::{
    full_gradient, full_loss, hessian_max_eigenvalue, sample_gradient, sample_loss, sigmoid, softplus,
    Dataset,
};
use sepgd::optim::{block_length, make_block_plan, HitTime, HittingStats};
use sepgd::schedule::{
    crossing_time_brackets, next_eta, overshoot_bracket, tau2_bracket_given, Branch, GrowthConstants,
    ScheduleState,
};

fn unit_ball_row(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, dim), 0.0f64..=1.0).prop_map(|(v, r)| {
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len == 0.0 {
            v
        } else {
            v.iter().map(|x| x * r / len).collect()
        }
    })
}

/// A dataset in the unit ball plus a weight vector of moderate norm.
fn instance(max_dim: usize) -> impl Strategy<Value = (Dataset, Vec<f64>)> {
    (1..=max_dim, 1usize..16).prop_flat_map(|(dim, n)| {
        (
            prop::collection::vec(unit_ball_row(dim), n),
            prop::collection::vec(prop::bool::ANY, n),
            prop::collection::vec(-10.0f64..10.0, dim),
        )
            .prop_map(|(rows, signs, w)| {
                let labels = signs.iter().map(|&s| if s { 1.0 } else { -1.0 }).collect();
                (Dataset::new(rows, labels).expect("unit-ball rows"), w)
            })
    })
}

fn dense_hessian_max(data: &Dataset, w: &[f64]) -> f64 {
    let d = data.dim();
    let mut h = DMatrix::<f64>::zeros(d, d);
    for i in 0..data.n() {
        let x = data.row(i);
        let m = data.margin(w, i);
        let c = sigmoid(m) * sigmoid(-m) / data.n() as f64;
        for a in 0..d {
            for b in 0..d {
                h[(a, b)] += c * x[a] * x[b];
            }
        }
    }
    SymmetricEigen::new(h).eigenvalues.max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softplus_matches_naive_where_naive_is_safe(z in -30.0f64..30.0) {
        let naive = (1.0 + z.exp()).ln();
        prop_assert!((softplus(z) - naive).abs() <= 1e-12 * naive.max(1e-300) + 1e-15);
    }

    #[test]
    fn softplus_is_finite_and_positive(z in -1e300f64..1e300) {
        let v = softplus(z);
        prop_assert!(v.is_finite() && v >= 0.0);
        prop_assert!(v >= z.max(0.0));
    }

    #[test]
    fn gradient_is_self_bounded((data, w) in instance(6)) {
        let g = full_gradient(&w, &data).unwrap();
        let loss = full_loss(&w, &data).unwrap();
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(gnorm <= loss.min(1.0) * (1.0 + 1e-12));
    }

    #[test]
    fn sample_gradient_is_self_bounded((data, w) in instance(6), pick in 0usize..16) {
        let i = pick % data.n();
        let g = sample_gradient(&w, &data, i).unwrap();
        let loss = sample_loss(&w, &data, i).unwrap();
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(gnorm <= loss.min(1.0) * (1.0 + 1e-12));
    }

    #[test]
    fn gradient_matches_central_differences((data, w) in instance(6)) {
        let g = full_gradient(&w, &data).unwrap();
        let h = 1e-5;
        let mut err = 0.0;
        for j in 0..w.len() {
            let mut p = w.clone();
            let mut m = w.clone();
            p[j] += h;
            m[j] -= h;
            let fd = (full_loss(&p, &data).unwrap() - full_loss(&m, &data).unwrap()) / (2.0 * h);
            err += (fd - g[j]).powi(2);
        }
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Absolute floor for gradients that are themselves at rounding level.
        prop_assert!(err.sqrt() <= 1e-6 * gnorm + 1e-10);
    }

    #[test]
    fn hessian_bound_and_dense_oracle((data, w) in instance(5)) {
        let power = hessian_max_eigenvalue(&w, &data, 1e-12).unwrap();
        let dense = dense_hessian_max(&data, &w);
        let loss = full_loss(&w, &data).unwrap();
        prop_assert!(dense <= loss.min(0.25) + 1e-8);
        prop_assert!(power <= loss.min(0.25) + 1e-8);
        prop_assert!((power - dense).abs() <= 1e-6 * dense + 1e-14);
    }

    #[test]
    fn schedule_steps_are_positive_and_sums_increase(
        gamma in 0.05f64..1.0,
        w0_norm in 0.0f64..5.0,
        f0 in 0.05f64..5.0,
    ) {
        let states = ScheduleState::new(gamma, w0_norm, f0).unwrap().simulate(300).unwrap();
        for pair in states.windows(2) {
            prop_assert!(pair[1].eta > 0.0);
            prop_assert!(pair[1].s > pair[0].s);
            let (eta, branch) = next_eta(pair[0].s, f0).unwrap();
            prop_assert_eq!(eta, pair[1].eta);
            let ln_sq = pair[0].s.ln().powi(2);
            prop_assert_eq!(branch == Branch::Exponential, 2.0 * f0 >= ln_sq);
        }
    }

    #[test]
    fn crossing_brackets_hold(gamma in 0.1f64..1.0, f0 in 0.2f64..3.0) {
        let start = ScheduleState::new(gamma, 0.0, f0).unwrap();
        let states = start.run_to_tau2(5_000_000).unwrap();
        let last = states[states.len() - 1];
        let (tau1, tau2) = (last.tau1.unwrap(), last.tau2.unwrap());
        let b = crossing_time_brackets(start.s, f0, gamma);
        prop_assert!(b.tau1.contains(tau1 as f64), "τ₁={} {:?}", tau1, b.tau1);
        prop_assert!(b.tau2.contains(tau2 as f64), "τ₂={} {:?}", tau2, b.tau2);
        if tau1 > 0 {
            prop_assert!(overshoot_bracket(f0, gamma).contains(states[tau1].ln_s()));
            prop_assert!(tau2_bracket_given(tau1, states[tau1].ln_s(), f0, gamma).contains(tau2 as f64));
        }
        if tau2 > 0 {
            prop_assert!(b.ln_s_tau2.contains(states[tau2].ln_s()));
        }
    }

    #[test]
    fn growth_sandwich_holds(gamma in 0.1f64..1.0, extra in 50usize..2000) {
        let states = ScheduleState::new(gamma, 0.0, 1.0).unwrap().run_to_tau2(5_000_000).unwrap();
        let tau2 = states[states.len() - 1].tau2.unwrap();
        let tail = states[states.len() - 1].simulate(extra).unwrap();
        let consts = GrowthConstants::new(gamma, 1.0, states[0].ln_s(), tau2, states[tau2].ln_s()).unwrap();
        for s in &tail {
            let (lo, hi) = consts.sandwich(s.t).unwrap();
            let cube = s.ln_s().powi(3);
            prop_assert!(cube >= lo - 1e-9 && cube <= hi + 1e-9);
        }
    }

    #[test]
    fn block_plans_are_consistent(
        n in 1usize..5000,
        gamma in 0.05f64..1.0,
        eps0 in 0.01f64..0.99,
        halvings in 0u32..6,
        delta in 0.01f64..0.99,
    ) {
        let target = eps0 / 2f64.powi(halvings as i32);
        let plan = make_block_plan(n, gamma, eps0, delta, target).unwrap();
        prop_assert_eq!(plan.k_eps, halvings as usize);
        let mut start = 0;
        for (k, b) in plan.blocks.iter().enumerate() {
            prop_assert_eq!(b.k, k);
            prop_assert_eq!(b.eps, eps0 / 2f64.powi(k as i32));
            prop_assert_eq!(b.len, block_length(n, gamma, delta, b.eps));
            prop_assert_eq!(b.start, start);
            start += b.len;
        }
        prop_assert_eq!(plan.end(), start);
    }

    #[test]
    fn hitting_stats_merge_commutes(
        a in prop::collection::vec((0u64..50, 0usize..1000, prop::bool::ANY), 0..10),
        b in prop::collection::vec((50u64..100, 0usize..1000, prop::bool::ANY), 0..10),
    ) {
        let build = |entries: &[(u64, usize, bool)]| {
            let mut s = HittingStats::new(0.01, 100, 0.3);
            for &(seed, t, c) in entries {
                s.push(seed, if c { HitTime::Censored(t) } else { HitTime::Hit(t) });
            }
            s
        };
        let ab = build(&a).merge(build(&b)).unwrap();
        let ba = build(&b).merge(build(&a)).unwrap();
        prop_assert_eq!(ab, ba);
    }
}
