//! Successive convex approximation of the penalized Big-M problem.
//!
//! Each iterate replaces the concave part of the integrality penalty and the
//! concave dispersion term by their first-order expansions, solves the
//! resulting convex program, and repeats until the penalized objective and
//! the integrality gap settle. The relaxed result is then rounded, repaired
//! against the causality masks, and the powers are re-optimized with the
//! assignment held fixed.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbtrate::{dispersion, dispersion_slope, q_inv, LOG2_E};
use crate::problem::{self, build_masks, Allocation, Assignment, ConstraintId, ConstraintMasks, FeasibilityReport};
use crate::subproblem::{self, ConvexSubproblem, SolveOptions, SolveStatus, VarKey, VarKind};
use crate::sysmodel::{ChannelRealization, Link, SystemConfig};
use crate::transform::PenaltyState;

/// Rate expression used in the demand constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateModel {
    /// Normal approximation with the dispersion penalty.
    FiniteBlocklength,
    /// Plain capacity, `V = 0`.
    Shannon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaConfig {
    pub max_iters: usize,
    /// Relative change of the penalized objective between iterates.
    pub rel_tol: f64,
    /// Bound on the total integrality gap `E - H` at convergence.
    pub gap_tol: f64,
    pub rounding_threshold: f64,
    /// Re-expansions toward the fallback point after a failed subproblem.
    pub recovery_retries: usize,
    /// Keep `p` as explicit variables instead of eliminating it.
    pub keep_power_vars: bool,
    /// Power substituted at the expansion point when a user's dispersion
    /// sum vanishes.
    pub zero_power_floor_w: f64,
    pub solver: SolveOptions,
}

impl Default for ScaConfig {
    fn default() -> Self {
        ScaConfig {
            max_iters: 30,
            rel_tol: 1e-5,
            gap_tol: 1e-4,
            rounding_threshold: 0.5,
            recovery_retries: 3,
            keep_power_vars: false,
            zero_power_floor_w: 1e-9,
            solver: SolveOptions::default(),
        }
    }
}

/// Which variables a subproblem optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Indicators relaxed to `[0, 1]` under the penalty.
    Relaxed,
    /// Indicators fixed to a binary assignment; powers only.
    PowerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub stage: Stage,
    pub iteration: usize,
    pub penalized_w: f64,
    pub objective_w: f64,
    pub gap_ul: f64,
    pub gap_dl: f64,
    /// Smallest demand-constraint slack over users and links.
    pub worst_slack_bits: f64,
    pub subproblem_status: SolveStatus,
    pub subproblem_iters: usize,
    pub recoveries: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaStatus {
    Converged,
    MaxIter,
    /// A subproblem failed even after recovery; the last good iterate was used.
    SubproblemFailed,
}

#[derive(Debug, Clone)]
pub struct ScaOutcome {
    /// Final binary allocation after rounding and the power-only resolve.
    pub allocation: Allocation,
    /// Last iterate of the relaxed stage.
    pub relaxed: Allocation,
    pub assignment: Assignment,
    pub trace: IterationTrace,
    pub resolve_trace: IterationTrace,
    pub relaxed_status: ScaStatus,
    pub resolve_status: ScaStatus,
    /// Feasibility of `allocation` under the rate model of the run.
    pub report: FeasibilityReport,
    /// Weighted total transmit power of `allocation`.
    pub objective_w: f64,
}

impl ScaOutcome {
    pub fn feasible(&self) -> bool {
        self.report.feasible
    }

    /// Relaxed plus power-only iterations.
    pub fn iterations(&self) -> usize {
        self.trace.len() + self.resolve_trace.len()
    }
}

/// First-order expansion of `H(s) = sum s^2` at `point`, evaluated at `s`.
pub fn linearize_h(point: &[f64], s: &[f64]) -> f64 {
    point
        .iter()
        .zip(s)
        .map(|(&a, &x)| a * a + 2.0 * a * (x - a))
        .sum()
}

/// Dispersion penalty `log2(e) Q^-1 sqrt(sum V(g p))` in bits.
pub fn v_bar(pbar: &[f64], gains: &[f64], q: f64) -> f64 {
    let sum: f64 = pbar.iter().zip(gains).map(|(&p, &g)| dispersion(g * p.max(0.0))).sum();
    LOG2_E * q * sum.sqrt()
}

/// Value and gradient of [`v_bar`] at `point`.
pub fn v_gradient(point: &[f64], gains: &[f64], q: f64) -> Result<(f64, Vec<f64>)> {
    if q == 0.0 {
        return Ok((0.0, vec![0.0; point.len()]));
    }
    let sum: f64 = point.iter().zip(gains).map(|(&p, &g)| dispersion(g * p.max(0.0))).sum();
    if sum <= 0.0 {
        return Err(Error::ZeroDispersion);
    }
    let root = sum.sqrt();
    let a = LOG2_E * q;
    let grad = point
        .iter()
        .zip(gains)
        .map(|(&p, &g)| a * g * dispersion_slope(g * p.max(0.0)) / (2.0 * root))
        .collect();
    Ok((a * root, grad))
}

/// Tangent-plane upper bound of the dispersion penalty expanded at `point`,
/// evaluated at `pbar`. Error probabilities above 0.5 flip the curvature and
/// are rejected.
pub fn linearize_v(pbar: &[f64], point: &[f64], gains: &[f64], eps: f64) -> Result<f64> {
    let q = rate_q(eps)?;
    let (value, grad) = v_gradient(point, gains, q)?;
    Ok(value + grad.iter().zip(pbar.iter().zip(point)).map(|(d, (x, x0))| d * (x - x0)).sum::<f64>())
}

fn rate_q(eps: f64) -> Result<f64> {
    if eps > 0.5 {
        return Err(Error::Unsupported(format!(
            "error probability {eps} above 0.5 makes the dispersion term convex"
        )));
    }
    q_inv(eps)
}

/// Variable indices of one resource cell in a built subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVar {
    pub link: Link,
    pub user: usize,
    pub subcarrier: usize,
    pub slot: usize,
    pub gain: f64,
    pub cap: f64,
    pub s: Option<usize>,
    pub pbar: usize,
    pub p: Option<usize>,
}

/// A convex subproblem with the map back to allocation tensors.
#[derive(Debug, Clone)]
pub struct BuiltSubproblem {
    pub program: ConvexSubproblem,
    pub cells: Vec<CellVar>,
    /// The expansion point in variable order.
    pub expansion: Vec<f64>,
}

/// Builds the convex program expanded at `point`.
///
/// In the relaxed stage every cell allowed by the delay mask carries an
/// indicator and a surrogate power. In the power-only stage only cells with
/// `s >= 0.5` in `point` are present and their indicators are fixed to one.
/// Power variables are scaled by their cell cap.
pub fn build_subproblem(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    point: &Allocation,
    stage: Stage,
    rate: RateModel,
    sca: &ScaConfig,
) -> Result<BuiltSubproblem> {
    point.check_shape(cfg)?;
    real.check_shape(cfg)?;
    let masks = build_masks(cfg);
    let mut prog = ConvexSubproblem::new();
    let mut cells = Vec::new();
    let mut warm = Vec::new();
    let key = |link, kind, user, subcarrier, slot| VarKey {
        link,
        kind,
        user,
        subcarrier,
        slot,
    };

    for link in Link::BOTH {
        let eta = cfg.eta(link);
        for k in 0..cfg.users {
            let weight = match link {
                Link::Up => cfg.weights[k],
                Link::Down => 1.0,
            };
            let cap = cfg.power_cap_w(link, k);
            for m in 0..cfg.subcarriers(link) {
                let g = real.gain(link, k, m);
                for n in 0..cfg.slots(link) {
                    if link == Link::Down && !masks.downlink_allowed(k, n) {
                        continue;
                    }
                    let s0 = point.s(link).get(k, m, n).clamp(0.0, 1.0);
                    let s = match stage {
                        Stage::Relaxed => {
                            let j = prog.add_var(key(link, VarKind::Indicator, k, m, n), 0.0, 1.0, 1.0, eta * (1.0 - 2.0 * s0));
                            prog.objective_constant += eta * s0 * s0;
                            warm.push(s0);
                            Some(j)
                        }
                        Stage::PowerOnly => {
                            if s0 < 0.5 {
                                continue;
                            }
                            None
                        }
                    };
                    let pbar = prog.add_var(key(link, VarKind::Surrogate, k, m, n), 0.0, cap, cap, weight);
                    let pb0 = point.pbar(link).get(k, m, n).clamp(0.0, cap);
                    warm.push(pb0);
                    let p = if sca.keep_power_vars {
                        let j = prog.add_var(key(link, VarKind::Power, k, m, n), 0.0, cap, cap, 0.0);
                        warm.push(point.p(link).get(k, m, n).clamp(pb0, cap));
                        Some(j)
                    } else {
                        None
                    };
                    cells.push(CellVar {
                        link,
                        user: k,
                        subcarrier: m,
                        slot: n,
                        gain: g,
                        cap,
                        s,
                        pbar,
                        p,
                    });
                }
            }
        }
    }

    // Envelope rows, in fractions of the cell power cap; the lower
    // envelopes are variable bounds.
    for c in &cells {
        let u = 1.0 / c.cap;
        let (ub_id, lb_id) = match c.link {
            Link::Up => (ConstraintId::C13, ConstraintId::C15),
            Link::Down => (ConstraintId::C17, ConstraintId::C19),
        };
        let mid_id = match c.link {
            Link::Up => ConstraintId::C14,
            Link::Down => ConstraintId::C18,
        };
        if let Some(s) = c.s {
            prog.add_linear(ub_id, vec![(c.pbar, u), (s, -1.0)], 0.0);
        }
        if let Some(p) = c.p {
            prog.add_linear(mid_id, vec![(c.pbar, u), (p, -u)], 0.0);
            match c.s {
                Some(s) => prog.add_linear(lb_id, vec![(p, u), (c.pbar, -u), (s, 1.0)], 1.0),
                None => prog.add_linear(lb_id, vec![(p, u), (c.pbar, -u)], 0.0),
            }
        }
    }

    if stage == Stage::Relaxed {
        add_exclusivity_rows(cfg, &cells, &mut prog);
        add_causality_rows(cfg, &masks, &cells, &mut prog);
    }

    // Budgets.
    for k in 0..cfg.users {
        let terms: Vec<(usize, f64)> = cells
            .iter()
            .filter(|c| c.link == Link::Up && c.user == k)
            .map(|c| (c.pbar, 1.0))
            .collect();
        if !terms.is_empty() {
            prog.add_linear(ConstraintId::C7, terms, cfg.user_power_max_w[k]);
        }
    }
    let dl: Vec<(usize, f64)> = cells.iter().filter(|c| c.link == Link::Down).map(|c| (c.pbar, 1.0)).collect();
    if !dl.is_empty() {
        prog.add_linear(ConstraintId::C11, dl, cfg.bs_power_max_w);
    }

    // Demand rows.
    for link in Link::BOTH {
        let tag = match link {
            Link::Up => ConstraintId::C1,
            Link::Down => ConstraintId::C2,
        };
        for k in 0..cfg.users {
            let demand = cfg.demand_bits(link, k);
            if demand <= 0.0 {
                continue;
            }
            let mine: Vec<&CellVar> = cells.iter().filter(|c| c.link == link && c.user == k).collect();
            let log_terms: Vec<(usize, f64)> = mine.iter().map(|c| (c.pbar, c.gain)).collect();
            let (linear, rhs) = match rate {
                RateModel::Shannon => (Vec::new(), demand),
                RateModel::FiniteBlocklength => {
                    let q = rate_q(cfg.error_prob(link, k))?;
                    let gains: Vec<f64> = mine.iter().map(|c| c.gain).collect();
                    let mut at: Vec<f64> = mine
                        .iter()
                        .map(|c| point.pbar(link).get(k, c.subcarrier, c.slot).clamp(0.0, c.cap))
                        .collect();
                    if q > 0.0 && !at.is_empty() && v_bar(&at, &gains, 1.0) <= 0.0 {
                        for p in &mut at {
                            *p = p.max(sca.zero_power_floor_w);
                        }
                    }
                    if at.is_empty() {
                        (Vec::new(), demand)
                    } else {
                        let (value, grad) = v_gradient(&at, &gains, q)?;
                        let offset: f64 = grad.iter().zip(&at).map(|(d, p)| d * p).sum();
                        let linear = mine.iter().zip(&grad).map(|(c, &d)| (c.pbar, d)).collect();
                        (linear, demand + value - offset)
                    }
                }
            };
            prog.add_log(tag, log_terms, linear, rhs);
        }
    }

    Ok(BuiltSubproblem {
        program: prog,
        cells,
        expansion: warm,
    })
}

fn add_exclusivity_rows(cfg: &SystemConfig, cells: &[CellVar], prog: &mut ConvexSubproblem) {
    for link in Link::BOTH {
        let slots = cfg.slots(link);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); cfg.subcarriers(link) * slots];
        for c in cells.iter().filter(|c| c.link == link) {
            if let Some(s) = c.s {
                groups[c.subcarrier * slots + c.slot].push(s);
            }
        }
        let tag = match link {
            Link::Up => ConstraintId::C5,
            Link::Down => ConstraintId::C9,
        };
        for g in groups.into_iter().filter(|g| g.len() > 1) {
            prog.add_linear(tag, g.into_iter().map(|j| (j, 1.0)).collect(), 1.0);
        }
    }
}

fn add_causality_rows(cfg: &SystemConfig, masks: &ConstraintMasks, cells: &[CellVar], prog: &mut ConvexSubproblem) {
    for k in 0..cfg.users {
        for &(n_u, n_d) in &masks.causality_pairs {
            let ul: Vec<usize> = cells
                .iter()
                .filter(|c| c.link == Link::Up && c.user == k && c.slot == n_u)
                .filter_map(|c| c.s)
                .collect();
            let dl: Vec<usize> = cells
                .iter()
                .filter(|c| c.link == Link::Down && c.user == k && c.slot == n_d)
                .filter_map(|c| c.s)
                .collect();
            for &a in &ul {
                for &b in &dl {
                    prog.add_linear(ConstraintId::C3, vec![(a, 1.0), (b, 1.0)], 1.0);
                }
            }
        }
    }
}

/// Reads a subproblem solution back into allocation tensors. Between
/// iterates `p` equals `pbar` unless powers are kept as variables.
pub fn decode(cfg: &SystemConfig, built: &BuiltSubproblem, values: &[f64]) -> Allocation {
    let mut a = Allocation::zeros(cfg);
    for c in &built.cells {
        let (k, m, n) = (c.user, c.subcarrier, c.slot);
        let s = c.s.map_or(1.0, |j| values[j].clamp(0.0, 1.0));
        let pbar = values[c.pbar].clamp(0.0, c.cap);
        let p = c.p.map_or(pbar, |j| values[j].clamp(0.0, c.cap));
        a.s_mut(c.link).set(k, m, n, s);
        a.pbar_mut(c.link).set(k, m, n, pbar);
        a.p_mut(c.link).set(k, m, n, p);
    }
    a
}

/// Smallest Big-M demand slack `C(pbar) - V(pbar) - demand` over users.
pub fn worst_slack_bits(cfg: &SystemConfig, real: &ChannelRealization, a: &Allocation, rate: RateModel) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for link in Link::BOTH {
        for k in 0..cfg.users {
            let demand = cfg.demand_bits(link, k);
            if demand <= 0.0 {
                continue;
            }
            let (pb, gains) = user_powers(cfg, real, a, link, k);
            let c: f64 = pb.iter().zip(&gains).map(|(p, g)| (g * p).ln_1p()).sum::<f64>() * LOG2_E;
            let v = match rate {
                RateModel::Shannon => 0.0,
                RateModel::FiniteBlocklength => v_bar(&pb, &gains, rate_q(cfg.error_prob(link, k))?),
            };
            worst = worst.min(c - v - demand);
        }
    }
    Ok(worst)
}

fn user_powers(cfg: &SystemConfig, real: &ChannelRealization, a: &Allocation, link: Link, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pb = Vec::new();
    let mut gains = Vec::new();
    for m in 0..cfg.subcarriers(link) {
        for n in 0..cfg.slots(link) {
            let v = a.pbar(link).get(k, m, n);
            if v > 0.0 {
                pb.push(v);
                gains.push(real.gain(link, k, m));
            }
        }
    }
    (pb, gains)
}

fn blend(a: &Allocation, b: &Allocation, w: f64) -> Allocation {
    let mix = |x: &crate::problem::Tensor3, y: &crate::problem::Tensor3| {
        let mut t = x.clone();
        for (v, u) in t.data.iter_mut().zip(&y.data) {
            *v = (1.0 - w) * *v + w * u;
        }
        t
    };
    Allocation {
        s_u: mix(&a.s_u, &b.s_u),
        s_d: mix(&a.s_d, &b.s_d),
        p_u: mix(&a.p_u, &b.p_u),
        p_d: mix(&a.p_d, &b.p_d),
        pbar_u: mix(&a.pbar_u, &b.pbar_u),
        pbar_d: mix(&a.pbar_d, &b.pbar_d),
    }
}

struct LoopOutcome {
    point: Allocation,
    trace: IterationTrace,
    status: ScaStatus,
}

fn solve_at(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    point: &Allocation,
    stage: Stage,
    rate: RateModel,
    sca: &ScaConfig,
) -> Result<Option<(Allocation, SolveStatus, usize)>> {
    let built = build_subproblem(cfg, real, point, stage, rate, sca)?;
    let opts = SolveOptions {
        center: Some(built.expansion.clone()),
        ..sca.solver.clone()
    };
    let sol = subproblem::solve_with(&built.program, &opts)?;
    if sol.status != SolveStatus::Optimal {
        return Ok(None);
    }
    Ok(Some((decode(cfg, &built, &sol.values), sol.status, sol.iterations)))
}

fn sca_loop(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    start: &Allocation,
    fallback: &Allocation,
    stage: Stage,
    rate: RateModel,
    sca: &ScaConfig,
) -> Result<LoopOutcome> {
    let mut point = start.clone();
    let mut trace = IterationTrace::default();
    let mut prev: Option<f64> = None;
    for it in 1..=sca.max_iters {
        let mut expansion = point.clone();
        let mut solved = solve_at(cfg, real, &expansion, stage, rate, sca)?;
        let mut recoveries = 0;
        while solved.is_none() && recoveries < sca.recovery_retries {
            recoveries += 1;
            expansion = blend(&expansion, fallback, 0.5);
            solved = solve_at(cfg, real, &expansion, stage, rate, sca)?;
        }
        let Some((next, status, sub_iters)) = solved else {
            return Ok(LoopOutcome {
                point,
                trace,
                status: ScaStatus::SubproblemFailed,
            });
        };
        let pen = PenaltyState::of(&next, cfg)?;
        let objective_w = problem::bigm_objective(&next, cfg)?;
        let penalized_w = objective_w + pen.penalty_w();
        trace.records.push(IterationRecord {
            stage,
            iteration: it,
            penalized_w,
            objective_w,
            gap_ul: pen.gap_u,
            gap_dl: pen.gap_d,
            worst_slack_bits: worst_slack_bits(cfg, real, &next, rate)?,
            subproblem_status: status,
            subproblem_iters: sub_iters,
            recoveries,
        });
        point = next;
        let settled = prev.is_some_and(|f| (penalized_w - f).abs() <= sca.rel_tol * f.abs().max(1e-12));
        let integral = stage == Stage::PowerOnly || pen.total_gap() < sca.gap_tol;
        if settled && integral {
            return Ok(LoopOutcome {
                point,
                trace,
                status: ScaStatus::Converged,
            });
        }
        prev = Some(penalized_w);
    }
    Ok(LoopOutcome {
        point,
        trace,
        status: ScaStatus::MaxIter,
    })
}

/// Threshold rounding of a relaxed iterate.
///
/// Each cell goes to the user with the largest indicator at or above
/// `threshold`; equal indicators go to the user with the largest remaining
/// capacity deficit, accumulated over the cells assigned so far. Cells
/// blocked by the delay mask stay empty.
pub fn round_assignment(cfg: &SystemConfig, real: &ChannelRealization, relaxed: &Allocation, threshold: f64) -> Assignment {
    let masks = build_masks(cfg);
    let mut out = Assignment::empty(cfg);
    for link in Link::BOTH {
        let mut deficit: Vec<f64> = (0..cfg.users).map(|k| cfg.demand_bits(link, k)).collect();
        let s = relaxed.s(link);
        for m in 0..cfg.subcarriers(link) {
            for n in 0..cfg.slots(link) {
                let mut best: Option<usize> = None;
                for k in 0..cfg.users {
                    if link == Link::Down && !masks.downlink_allowed(k, n) {
                        continue;
                    }
                    let v = s.get(k, m, n);
                    if v < threshold {
                        continue;
                    }
                    best = match best {
                        None => Some(k),
                        Some(b) => {
                            let vb = s.get(b, m, n);
                            if v > vb || (v == vb && deficit[k] > deficit[b]) {
                                Some(k)
                            } else {
                                Some(b)
                            }
                        }
                    };
                }
                if let Some(k) = best {
                    let g = real.gain(link, k, m);
                    deficit[k] -= (g * relaxed.pbar(link).get(k, m, n).max(0.0)).ln_1p() * LOG2_E;
                    out.set(cfg, link, m, n, Some(k));
                }
            }
        }
    }
    out
}

/// Removes causality conflicts from `a`.
///
/// For each conflicting uplink/downlink slot pair of a user, the downlink
/// cells in the conflicting slot are released if the user keeps another
/// downlink cell; otherwise the uplink cells in the conflicting slot go.
/// Downlink cells beyond the delay limit are released as well.
pub fn repair_causality(cfg: &SystemConfig, masks: &ConstraintMasks, a: &mut Assignment) {
    for k in 0..cfg.users {
        for (m, n) in a.cells_of(cfg, Link::Down, k) {
            if !masks.downlink_allowed(k, n) {
                a.set(cfg, Link::Down, m, n, None);
            }
        }
        for &(n_u, n_d) in &masks.causality_pairs {
            let ul = a.cells_of(cfg, Link::Up, k);
            let dl = a.cells_of(cfg, Link::Down, k);
            let ul_hit: Vec<_> = ul.iter().filter(|c| c.1 == n_u).copied().collect();
            let dl_hit: Vec<_> = dl.iter().filter(|c| c.1 == n_d).copied().collect();
            if ul_hit.is_empty() || dl_hit.is_empty() {
                continue;
            }
            if dl.len() > dl_hit.len() {
                for (m, n) in dl_hit {
                    a.set(cfg, Link::Down, m, n, None);
                }
            } else {
                for (m, n) in ul_hit {
                    a.set(cfg, Link::Up, m, n, None);
                }
            }
        }
    }
}

/// Smallest equal per-cell power whose normal-approximation rate over cells
/// with `gains` meets `demand` bits at `q = Q^-1(eps)`; infinite if no power
/// below 1e12 W does.
pub fn equal_power(gains: &[f64], demand: f64, q: f64) -> f64 {
    if demand <= 0.0 {
        return 0.0;
    }
    if gains.is_empty() {
        return f64::INFINITY;
    }
    let bits = |p: f64| {
        let c: f64 = gains.iter().map(|g| (g * p).ln_1p()).sum::<f64>() * LOG2_E;
        let v: f64 = gains.iter().map(|g| dispersion(g * p)).sum();
        c - LOG2_E * q * v.sqrt()
    };
    // The rate dips below zero at low power and then grows without bound,
    // so the demand is met on a half-line.
    let mut hi = 1e-12;
    while bits(hi) < demand {
        hi *= 2.0;
        if hi > 1e12 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bits(mid) < demand {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Binary allocation for `assignment` with equal per-cell powers that meet
/// the capacity demand with a 3 dB margin, clipped to the budgets.
pub fn initial_allocation(cfg: &SystemConfig, real: &ChannelRealization, assignment: &Assignment) -> Allocation {
    inverted_allocation(cfg, real, assignment, |_, _| 0.0)
}

/// As [`initial_allocation`], but inverting the rate of `rate` at the
/// configured error probability. Subproblems that fail are re-expanded
/// toward this point: at low SNR a capacity-inverting point misses the
/// finite-blocklength demand by several bits, and the tangent of the
/// dispersion term there can leave the convex program without a feasible
/// point.
pub fn rate_feasible_allocation(cfg: &SystemConfig, real: &ChannelRealization, assignment: &Assignment, rate: RateModel) -> Allocation {
    inverted_allocation(cfg, real, assignment, |link, k| match rate {
        RateModel::Shannon => 0.0,
        RateModel::FiniteBlocklength => rate_q(cfg.error_prob(link, k)).unwrap_or(0.0).max(0.0),
    })
}

fn inverted_allocation(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    assignment: &Assignment,
    q: impl Fn(Link, usize) -> f64,
) -> Allocation {
    let mut a = Allocation::zeros(cfg);
    let (s_u, s_d) = assignment.to_indicators(cfg);
    a.s_u = s_u;
    a.s_d = s_d;
    for link in Link::BOTH {
        let mut link_total = 0.0;
        for k in 0..cfg.users {
            let cells = assignment.cells_of(cfg, link, k);
            if cells.is_empty() {
                continue;
            }
            let gains: Vec<f64> = cells.iter().map(|&(m, _)| real.gain(link, k, m)).collect();
            let cap = cfg.power_cap_w(link, k);
            let hi = equal_power(&gains, cfg.demand_bits(link, k), q(link, k)).min(cap);
            let mut p = 2.0 * hi;
            if link == Link::Up {
                p = p.min(cfg.user_power_max_w[k] / cells.len() as f64);
            }
            for &(m, n) in &cells {
                a.p_mut(link).set(k, m, n, p);
            }
            link_total += p * cells.len() as f64;
        }
        if link == Link::Down && link_total > cfg.bs_power_max_w {
            let f = cfg.bs_power_max_w / link_total;
            for v in &mut a.p_d.data {
                *v *= f;
            }
        }
    }
    a.sync_pbar();
    a
}

/// Spreads every budget evenly over the assigned cells.
pub fn full_budget_allocation(cfg: &SystemConfig, assignment: &Assignment) -> Allocation {
    let mut a = Allocation::zeros(cfg);
    let (s_u, s_d) = assignment.to_indicators(cfg);
    a.s_u = s_u;
    a.s_d = s_d;
    for k in 0..cfg.users {
        let cells = assignment.cells_of(cfg, Link::Up, k);
        for &(m, n) in &cells {
            a.p_u.set(k, m, n, cfg.user_power_max_w[k] / cells.len() as f64);
        }
    }
    let dl_cells = assignment.owner_dl.iter().filter(|o| o.is_some()).count();
    for k in 0..cfg.users {
        for (m, n) in assignment.cells_of(cfg, Link::Down, k) {
            a.p_d.set(k, m, n, cfg.bs_power_max_w / dl_cells as f64);
        }
    }
    a.sync_pbar();
    a
}

/// Binary allocation from a power-only iterate: `p = pbar` on owned cells.
fn finalize(cfg: &SystemConfig, assignment: &Assignment, point: &Allocation) -> Allocation {
    let mut a = Allocation::zeros(cfg);
    let (s_u, s_d) = assignment.to_indicators(cfg);
    a.s_u = s_u;
    a.s_d = s_d;
    for link in Link::BOTH {
        for k in 0..cfg.users {
            for (m, n) in assignment.cells_of(cfg, link, k) {
                let p = point.pbar(link).get(k, m, n).max(0.0);
                a.p_mut(link).set(k, m, n, p);
            }
        }
    }
    a.sync_pbar();
    a
}

/// Power-only optimization for a fixed binary assignment, starting from the
/// powers in `start`.
pub fn optimize_powers(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    sca: &ScaConfig,
    assignment: &Assignment,
    start: &Allocation,
    rate: RateModel,
) -> Result<(Allocation, IterationTrace, ScaStatus)> {
    let mut begin = Allocation::zeros(cfg);
    let (s_u, s_d) = assignment.to_indicators(cfg);
    begin.s_u = s_u;
    begin.s_d = s_d;
    for link in Link::BOTH {
        for k in 0..cfg.users {
            for (m, n) in assignment.cells_of(cfg, link, k) {
                let v = start.pbar(link).get(k, m, n).max(0.0);
                begin.pbar_mut(link).set(k, m, n, v);
                begin.p_mut(link).set(k, m, n, v);
            }
        }
    }
    let fallback = full_budget_allocation(cfg, assignment);
    let out = sca_loop(cfg, real, &begin, &fallback, Stage::PowerOnly, rate, sca)?;
    let point = if out.trace.is_empty() { begin } else { out.point };
    Ok((finalize(cfg, assignment, &point), out.trace, out.status))
}

/// The configuration whose normal-approximation rates equal `rate`: plain
/// capacity is the normal approximation at error probability 0.5.
pub fn rated_config(cfg: &SystemConfig, rate: RateModel) -> SystemConfig {
    match rate {
        RateModel::FiniteBlocklength => cfg.clone(),
        RateModel::Shannon => cfg.clone().with_error_prob(0.5),
    }
}

/// Full pipeline with the finite-blocklength rate model.
pub fn run(cfg: &SystemConfig, real: &ChannelRealization, sca: &ScaConfig, init: &Allocation) -> Result<ScaOutcome> {
    run_with_model(cfg, real, sca, init, RateModel::FiniteBlocklength)
}

/// Relaxed SCA from `init`, rounding and repair, then the power-only resolve.
pub fn run_with_model(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    sca: &ScaConfig,
    init: &Allocation,
    rate: RateModel,
) -> Result<ScaOutcome> {
    cfg.validate()?;
    init.check_shape(cfg)?;
    real.check_shape(cfg)?;
    if rate == RateModel::FiniteBlocklength {
        for link in Link::BOTH {
            for k in 0..cfg.users {
                rate_q(cfg.error_prob(link, k))?;
            }
        }
    }
    let start = Assignment::from_indicators(cfg, &init.s_u, &init.s_d, 0.5);
    let fallback = rate_feasible_allocation(cfg, real, &start, rate);
    let relaxed = sca_loop(cfg, real, init, &fallback, Stage::Relaxed, rate, sca)?;
    let masks = build_masks(cfg);
    let mut assignment = round_assignment(cfg, real, &relaxed.point, sca.rounding_threshold);
    repair_causality(cfg, &masks, &mut assignment);
    let (allocation, resolve_trace, resolve_status) = optimize_powers(cfg, real, sca, &assignment, &relaxed.point, rate)?;
    let report = problem::check(&allocation, &rated_config(cfg, rate), real, problem::DEFAULT_TOLERANCE)?;
    let objective_w = problem::objective(&allocation, cfg)?;
    Ok(ScaOutcome {
        allocation,
        relaxed: relaxed.point,
        assignment,
        trace: relaxed.trace,
        resolve_trace,
        relaxed_status: relaxed.status,
        resolve_status,
        report,
        objective_w,
    })
}
