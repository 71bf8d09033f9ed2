//! Big-M envelopes for the indicator-power products and the
//! difference-of-convex integrality penalty.

use crate::error::{Error, Result};
use crate::problem::{bigm_objective, Allocation, ConstraintId};
use crate::sysmodel::{Link, SystemConfig};

/// One affine row `coef_s*s + coef_p*p + coef_pbar*pbar <= rhs` on a single
/// resource cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigMRow {
    pub id: ConstraintId,
    pub link: Link,
    pub user: usize,
    pub subcarrier: usize,
    pub slot: usize,
    pub coef_s: f64,
    pub coef_p: f64,
    pub coef_pbar: f64,
    pub rhs: f64,
}

impl BigMRow {
    /// Left-hand side minus right-hand side; positive means violated.
    pub fn residual(&self, s: f64, p: f64, pbar: f64) -> f64 {
        self.coef_s * s + self.coef_p * p + self.coef_pbar * pbar - self.rhs
    }

    pub fn residual_in(&self, alloc: &Allocation) -> f64 {
        let (k, m, n) = (self.user, self.subcarrier, self.slot);
        self.residual(
            alloc.s(self.link).get(k, m, n),
            alloc.p(self.link).get(k, m, n),
            alloc.pbar(self.link).get(k, m, n),
        )
    }
}

/// The four envelope rows for one cell with cap `cap`, in the order
/// `pbar <= cap*s`, `pbar <= p`, `pbar >= p - (1-s)*cap`, `pbar >= 0`.
pub fn envelope(cap: f64) -> [(f64, f64, f64, f64); 4] {
    [
        (-cap, 0.0, 1.0, 0.0),
        (0.0, -1.0, 1.0, 0.0),
        (cap, 1.0, -1.0, cap),
        (0.0, 0.0, -1.0, 0.0),
    ]
}

/// All envelope rows of both links.
pub fn bigm_constraints(cfg: &SystemConfig) -> Vec<BigMRow> {
    let mut rows = Vec::new();
    for (link, ids) in [
        (Link::Up, [ConstraintId::C13, ConstraintId::C14, ConstraintId::C15, ConstraintId::C16]),
        (Link::Down, [ConstraintId::C17, ConstraintId::C18, ConstraintId::C19, ConstraintId::C20]),
    ] {
        for user in 0..cfg.users {
            let cap = cfg.power_cap_w(link, user);
            for subcarrier in 0..cfg.subcarriers(link) {
                for slot in 0..cfg.slots(link) {
                    for (id, (coef_s, coef_p, coef_pbar, rhs)) in ids.iter().zip(envelope(cap)) {
                        rows.push(BigMRow {
                            id: *id,
                            link,
                            user,
                            subcarrier,
                            slot,
                            coef_s,
                            coef_p,
                            coef_pbar,
                            rhs,
                        });
                    }
                }
            }
        }
    }
    rows
}

/// Integrality gap `sum s - sum s^2`; zero exactly when every entry is binary.
pub fn e_minus_h(s: &[f64]) -> Result<f64> {
    let mut gap = 0.0;
    for &x in s {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain {
                what: "indicator",
                value: x,
            });
        }
        gap += x - x * x;
    }
    Ok(gap)
}

/// Penalty weights together with the integrality gaps of an allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyState {
    pub eta1: f64,
    pub eta2: f64,
    pub gap_u: f64,
    pub gap_d: f64,
}

impl PenaltyState {
    pub fn of(alloc: &Allocation, cfg: &SystemConfig) -> Result<Self> {
        Ok(PenaltyState {
            eta1: cfg.eta1_w(),
            eta2: cfg.eta2_w(),
            gap_u: e_minus_h(&alloc.s_u.data)?,
            gap_d: e_minus_h(&alloc.s_d.data)?,
        })
    }

    pub fn penalty_w(&self) -> f64 {
        self.eta1 * self.gap_u + self.eta2 * self.gap_d
    }

    pub fn total_gap(&self) -> f64 {
        self.gap_u + self.gap_d
    }
}

/// Big-M objective plus `eta1*gap_u + eta2*gap_d`.
pub fn penalized_objective(alloc: &Allocation, cfg: &SystemConfig) -> Result<f64> {
    let phi = bigm_objective(alloc, cfg)?;
    Ok(phi + PenaltyState::of(alloc, cfg)?.penalty_w())
}
