//! Linearizations and the SCA pipeline.

use approx::assert_relative_eq;
use proptest::prelude::*;
use urllc_mec::fbtrate::q_inv;
use urllc_mec::init::default_init;
use urllc_mec::problem::{self, masks_respected};
use urllc_mec::scasolver::{linearize_h, linearize_v, run, v_bar, v_gradient, ScaStatus};
use urllc_mec::sysmodel::{draw_realization, ChannelRealization};
use urllc_mec::{Allocation, Error, Link, ScaConfig, SystemConfig};

fn h(s: &[f64]) -> f64 {
    s.iter().map(|x| x * x).sum()
}

/// One user, one uplink cell of unit gain, one bit, capacity rates.
fn single_cell() -> (SystemConfig, ChannelRealization) {
    let mut cfg = SystemConfig::reference(1).with_subcarriers(1).with_task_bits(1.0).with_error_prob(0.5);
    cfg.slots_ul = 1;
    cfg.slots_dl = 1;
    cfg.tau = 1;
    cfg.deadlines = vec![2];
    cfg.result_ratio = vec![0.0];
    cfg.user_power_max_w = vec![2.0];
    cfg.validate().unwrap();
    let real = ChannelRealization::from_gains(vec![vec![1.0]], vec![vec![1.0]]).unwrap();
    (cfg, real)
}

#[test]
fn h_linearization_examples() {
    assert_eq!(linearize_h(&[0.0, 0.0], &[0.3, 1.0]), 0.0);
    assert_eq!(linearize_h(&[0.5], &[1.0]), 0.75);
    let a = [0.1, 0.9, 0.4];
    assert_relative_eq!(linearize_h(&a, &a), h(&a), max_relative = 1e-15);
}

#[test]
fn v_linearization_errors() {
    assert!(matches!(linearize_v(&[1.0], &[1.0], &[1.0], 0.6), Err(Error::Unsupported(_))));
    assert!(matches!(linearize_v(&[1.0], &[0.0], &[1.0], 1e-6), Err(Error::ZeroDispersion)));
}

#[test]
fn single_cell_closed_form() {
    let (cfg, real) = single_cell();
    let out = run(&cfg, &real, &ScaConfig::default(), &default_init(&cfg, &real)).unwrap();
    assert!(out.feasible(), "{}", out.report);
    assert_eq!(out.allocation.s_u.get(0, 0, 0), 1.0);
    // log2(1 + p) = 1 at p = (2^1 - 1) / 1.
    assert_relative_eq!(out.allocation.p_u.get(0, 0, 0), 1.0, max_relative = 1e-5);
    assert_relative_eq!(out.objective_w, 1.0, max_relative = 1e-5);
}

#[test]
fn optimal_start_is_a_fixed_point() {
    let (cfg, real) = single_cell();
    let mut start = Allocation::zeros(&cfg);
    start.s_u.set(0, 0, 0, 1.0);
    start.p_u.set(0, 0, 0, 1.0);
    start.sync_pbar();
    let out = run(&cfg, &real, &ScaConfig::default(), &start).unwrap();
    assert!(out.trace.len() <= 2);
    assert_eq!(out.relaxed_status, ScaStatus::Converged);
    for r in &out.trace.records {
        assert_relative_eq!(r.objective_w, 1.0, max_relative = 1e-6);
    }
}

#[test]
fn kept_power_variables_give_the_same_answer() {
    let cfg = SystemConfig::reference(2).with_subcarriers(4).with_task_bits(40.0);
    let real = draw_realization(&cfg, 4).unwrap();
    let init = default_init(&cfg, &real);
    let plain = run(&cfg, &real, &ScaConfig::default(), &init).unwrap();
    let kept = run(&cfg, &real, &ScaConfig { keep_power_vars: true, ..ScaConfig::default() }, &init).unwrap();
    assert!(plain.feasible() && kept.feasible());
    assert_relative_eq!(plain.objective_w, kept.objective_w, max_relative = 1e-4);
}

#[test]
fn reference_scale_run_is_monotone_and_feasible() {
    let cfg = SystemConfig::reference(4);
    let real = draw_realization(&cfg, 1).unwrap();
    let out = run(&cfg, &real, &ScaConfig::default(), &default_init(&cfg, &real)).unwrap();
    assert!(!out.trace.is_empty());
    for trace in [&out.trace, &out.resolve_trace] {
        for w in trace.records.windows(2) {
            assert!(w[1].penalized_w <= w[0].penalized_w * (1.0 + 1e-6), "{} -> {}", w[0].penalized_w, w[1].penalized_w);
        }
    }
    assert!(out.trace.len() <= ScaConfig::default().max_iters);
    assert!(out.feasible(), "{}", out.report);
    assert!(masks_respected(&out.allocation, &cfg));
    assert!(out.allocation.is_binary());
    let violations = problem::check(&out.allocation, &cfg, &real, problem::DEFAULT_TOLERANCE).unwrap();
    assert_eq!(violations.violation(urllc_mec::ConstraintId::C5), 0.0);
    assert_eq!(violations.violation(urllc_mec::ConstraintId::C9), 0.0);
}

#[test]
fn trace_csv_has_one_row_per_iteration() {
    let (cfg, real) = single_cell();
    let out = run(&cfg, &real, &ScaConfig::default(), &default_init(&cfg, &real)).unwrap();
    let csv = out.trace.to_csv().unwrap();
    assert!(csv.starts_with("stage,iteration,penalized_w,objective_w,gap_ul,gap_dl"));
    assert_eq!(csv.lines().count(), out.trace.len() + 1);
}

/// Expansion point with per-cell SNR in [1e-3, 1e2], a test point in the
/// power box and the gains.
fn point_and_gains() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..2.0, n),
            prop::collection::vec(0.0f64..0.2, n),
            prop::collection::vec(1e3f64..1e8, n),
        )
            .prop_map(|(log_snr, x, g)| {
                let at = log_snr.iter().zip(&g).map(|(l, g)| 10f64.powf(*l) / g).collect();
                (at, x, g)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn h_linearization_is_tangent_below(a in prop::collection::vec(0.0f64..=1.0, 1..30), seed in prop::collection::vec(0.0f64..=1.0, 30)) {
        let s = &seed[..a.len()];
        prop_assert!(linearize_h(&a, s) <= h(s) + 1e-10);
        prop_assert!((linearize_h(&a, &a) - h(&a)).abs() <= 1e-12 * h(&a).max(1.0));
    }

    #[test]
    fn v_linearization_is_tangent_above((at, x, g) in point_and_gains(), eps in 1e-8f64..0.4) {
        let q = q_inv(eps).unwrap();
        let at_value = v_bar(&at, &g, q);
        prop_assert!((linearize_v(&at, &at, &g, eps).unwrap() - at_value).abs() <= 1e-12 * at_value.max(1.0));
        prop_assert!(linearize_v(&x, &at, &g, eps).unwrap() >= v_bar(&x, &g, q) - 1e-10);
    }

    #[test]
    fn v_gradient_matches_difference((at, _x, g) in point_and_gains(), eps in 1e-8f64..0.4) {
        let q = q_inv(eps).unwrap();
        let (_, grad) = v_gradient(&at, &g, q).unwrap();
        for i in 0..at.len() {
            let step = at[i] * 1e-5;
            let mut up = at.clone();
            let mut dn = at.clone();
            up[i] += step;
            dn[i] -= step;
            let fd = (v_bar(&up, &g, q) - v_bar(&dn, &g, q)) / (2.0 * step);
            prop_assert!((grad[i] - fd).abs() <= 1e-5 * grad[i].abs().max(1e-300), "{i}: {} vs {fd}", grad[i]);
        }
    }
}

#[test]
fn zero_result_ratio_needs_no_downlink_power() {
    let mut cfg = SystemConfig::reference(1).with_subcarriers(2).with_task_bits(8.0);
    cfg.result_ratio = vec![0.0];
    let real = draw_realization(&cfg, 2).unwrap();
    let out = run(&cfg, &real, &ScaConfig::default(), &default_init(&cfg, &real)).unwrap();
    assert!(out.feasible(), "{}", out.report);
    assert!(out.allocation.p(Link::Up).data.iter().sum::<f64>() > 0.0);
    assert_eq!(out.allocation.p(Link::Down).data.iter().sum::<f64>(), 0.0);
}
