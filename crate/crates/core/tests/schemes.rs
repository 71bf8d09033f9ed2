//! Benchmark schemes and the exhaustive reference.

use approx::assert_relative_eq;
use urllc_mec::benchmarks::{run_fsa, run_oracle, run_proposed, run_sc, ORACLE_GRID_POINTS};
use urllc_mec::init::round_robin_assignment;
use urllc_mec::problem::{build_masks, masks_respected};
use urllc_mec::sysmodel::{draw_realization, ChannelRealization};
use urllc_mec::{Error, Link, ScaConfig, SystemConfig};

/// One sub-carrier and one slot per link, no frame overlap.
fn single_cells(bits: f64, eps: f64) -> SystemConfig {
    let mut cfg = SystemConfig::reference(1).with_subcarriers(1).with_task_bits(bits).with_error_prob(eps);
    cfg.slots_ul = 1;
    cfg.slots_dl = 1;
    cfg.tau = 1;
    cfg.deadlines = vec![2];
    cfg.user_power_max_w = vec![2.0];
    cfg
}

/// Two sub-carriers per link and a single slot.
fn tiny_two_users(bits: f64) -> SystemConfig {
    let mut cfg = SystemConfig::reference(2).with_subcarriers(2).with_task_bits(bits);
    cfg.slots_ul = 1;
    cfg.slots_dl = 1;
    cfg.tau = 1;
    cfg.deadlines = vec![2, 2];
    cfg
}

#[test]
fn sc_and_proposed_coincide_at_half() {
    let cfg = SystemConfig::reference(2).with_subcarriers(4).with_task_bits(40.0).with_error_prob(0.5);
    let real = draw_realization(&cfg, 6).unwrap();
    let sca = ScaConfig::default();
    let p = run_proposed(&cfg, &real, &sca).unwrap();
    let s = run_sc(&cfg, &real, &sca).unwrap();
    assert!(p.feasible() && s.feasible());
    assert_relative_eq!(p.objective_w, s.objective_w, max_relative = 1e-9);
}

#[test]
fn sc_single_resource_closed_form() {
    let bits = 3.0;
    let cfg = single_cells(bits, 1e-6);
    let (gu, gd) = (5.0, 10.0);
    let real = ChannelRealization::from_gains(vec![vec![gu]], vec![vec![gd]]).unwrap();
    let s = run_sc(&cfg, &real, &ScaConfig::default()).unwrap();
    assert!(s.feasible(), "{}", s.report);
    let want = (2f64.powf(bits) - 1.0) / gu + (2f64.powf(bits) - 1.0) / gd;
    assert_relative_eq!(s.objective_w, want, max_relative = 1e-5);
}

#[test]
fn single_user_fsa_holds_every_usable_cell() {
    let cfg = SystemConfig::reference(1).with_subcarriers(4).with_task_bits(60.0);
    let real = draw_realization(&cfg, 2).unwrap();
    let sca = ScaConfig::default();
    let f = run_fsa(&cfg, &real, &sca).unwrap();
    let p = run_proposed(&cfg, &real, &sca).unwrap();
    assert!(f.feasible() && p.feasible());
    // Every uplink cell and every downlink cell not released for causality.
    assert_eq!(f.assignment.cells_of(&cfg, Link::Up, 0).len(), 4 * cfg.slots_ul);
    let masks = build_masks(&cfg);
    let released = masks.causality_pairs.len() * 4;
    assert_eq!(f.assignment.cells_of(&cfg, Link::Down, 0).len(), 4 * cfg.slots_dl - released);
    assert!(p.objective_w <= f.objective_w * (1.0 + 1e-4));
}

#[test]
fn symmetric_users_get_equal_power() {
    let cfg = SystemConfig::reference(2).with_subcarriers(4).with_task_bits(40.0);
    let g = vec![vec![2e5; 4]; 2];
    let real = ChannelRealization::from_gains(g.clone(), g).unwrap();
    let f = run_fsa(&cfg, &real, &ScaConfig::default()).unwrap();
    assert!(f.feasible(), "{}", f.report);
    for link in Link::BOTH {
        let per_user: Vec<f64> = (0..2).map(|k| f.allocation.p(link).user(k).iter().sum()).collect();
        assert_relative_eq!(per_user[0], per_user[1], max_relative = 1e-5);
    }
    assert_eq!(f.assignment, round_robin_assignment(&cfg));
}

#[test]
fn oracle_single_cell_within_one_grid_step() {
    let bits = 1.0;
    let mut cfg = single_cells(bits, 0.5);
    cfg.result_ratio = vec![2.0];
    let real = ChannelRealization::from_gains(vec![vec![1.0]], vec![vec![4.0]]).unwrap();
    let o = run_oracle(&cfg, &real, ORACLE_GRID_POINTS).unwrap();
    assert!(o.feasible());
    let exact = (2f64.powf(bits) - 1.0) / 1.0 + (2f64.powf(2.0 * bits) - 1.0) / 4.0;
    assert!(o.objective_w >= exact * (1.0 - 1e-12));
    assert!(o.objective_w <= exact * o.grid_ratio() * (1.0 + 1e-12), "{} vs {exact}", o.objective_w);
}

#[test]
fn oracle_reports_infeasible_demand() {
    let cfg = single_cells(400.0, 1e-6);
    let real = ChannelRealization::from_gains(vec![vec![1e4]], vec![vec![1e4]]).unwrap();
    let o = run_oracle(&cfg, &real, ORACLE_GRID_POINTS).unwrap();
    assert!(!o.feasible());
    assert!(o.allocation.is_none());
}

#[test]
fn oracle_refuses_large_instances() {
    let cfg = SystemConfig::reference(2).with_subcarriers(8);
    let real = draw_realization(&cfg, 0).unwrap();
    assert!(matches!(run_oracle(&cfg, &real, ORACLE_GRID_POINTS), Err(Error::TooLarge { .. })));
}

#[test]
fn proposed_is_not_below_the_oracle() {
    let cfg = tiny_two_users(4.0);
    let sca = ScaConfig::default();
    for seed in 0..3 {
        let real = draw_realization(&cfg, seed).unwrap();
        let o = run_oracle(&cfg, &real, ORACLE_GRID_POINTS).unwrap();
        let p = run_proposed(&cfg, &real, &sca).unwrap();
        assert!(o.feasible() && p.feasible());
        assert!(p.objective_w >= o.objective_w / o.grid_ratio() * (1.0 - 1e-6), "seed {seed}");
        assert!(masks_respected(&p.allocation, &cfg));
    }
}

#[test]
fn schemes_are_ordered() {
    let cfg = SystemConfig::reference(2).with_subcarriers(16);
    let real = draw_realization(&cfg, 0).unwrap();
    let sca = ScaConfig::default();
    let (p, s, f) = (
        run_proposed(&cfg, &real, &sca).unwrap(),
        run_sc(&cfg, &real, &sca).unwrap(),
        run_fsa(&cfg, &real, &sca).unwrap(),
    );
    assert!(p.feasible() && s.feasible() && f.feasible());
    assert!(s.objective_w <= p.objective_w * (1.0 + 1e-4));
    assert!(p.objective_w <= f.objective_w * (1.0 + 1e-4));
}
