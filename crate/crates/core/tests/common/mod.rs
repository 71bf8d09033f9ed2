//! Helpers shared by integration test targets.

#![allow(dead_code)]

use urllc_mec::SystemConfig;

/// Gaussian tail by composite Simpson integration of the density.
pub fn tail_by_quadrature(x: f64) -> f64 {
    let (a, b, n) = (x, x + 40.0, 200_000);
    let h = (b - a) / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut sum = f(a) + f(b);
    for i in 1..n {
        sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

/// Inverse of [`tail_by_quadrature`] by bisection on `[0, 10]` to 1e-10.
pub fn tail_inverse_by_bisection(eps: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 10.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if tail_by_quadrature(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `per_link` sub-carriers and `slots` slots per link, downlink offset
/// `tau` and no delay restriction.
pub fn small_system(users: usize, per_link: usize, slots: usize, tau: usize, bits: f64) -> SystemConfig {
    let mut cfg = SystemConfig::reference(users).with_subcarriers(per_link).with_task_bits(bits);
    cfg.slots_ul = slots;
    cfg.slots_dl = slots;
    cfg.tau = tau;
    cfg.deadlines = vec![tau + slots; users];
    cfg
}
