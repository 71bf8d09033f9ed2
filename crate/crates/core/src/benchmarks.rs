//! The proposed pipeline, its two benchmark schemes, and an exhaustive
//! grid-search reference for small instances.
//!
//! * Proposed: relaxed SCA with the normal-approximation rates from several
//!   starting assignments, keeping the best final allocation.
//! * SC: the same pipeline with plain capacity rates.
//! * FSA: the round-robin assignment held fixed; powers only.
//! * Oracle: every binary assignment and a geometric power grid per cell.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbtrate::{dispersion, q_inv, LOG2_E};
use crate::init::{greedy_assignment, round_robin_assignment};
use crate::problem::{self, build_masks, Allocation, Assignment, FeasibilityReport};
use crate::scasolver::{self, initial_allocation, rated_config, IterationTrace, RateModel, ScaConfig, ScaOutcome};
use crate::sysmodel::{ChannelRealization, Link, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    Proposed,
    Sc,
    Fsa,
    Oracle,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [SchemeId::Proposed, SchemeId::Sc, SchemeId::Fsa, SchemeId::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Proposed => "proposed",
            SchemeId::Sc => "sc",
            SchemeId::Fsa => "fsa",
            SchemeId::Oracle => "oracle",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown scheme {s:?}")))
    }
}

/// Final allocation of one scheme on one realization.
#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub scheme: SchemeId,
    pub allocation: Allocation,
    pub assignment: Assignment,
    /// Weighted total transmit power in watts.
    pub objective_w: f64,
    /// Feasibility under the rate model the scheme designs for.
    pub report: FeasibilityReport,
    /// Relaxed-stage trace of the selected start; empty for fixed
    /// assignments and the oracle.
    pub trace: IterationTrace,
    pub resolve_trace: IterationTrace,
    /// SCA iterations summed over all starts.
    pub iterations: usize,
}

impl SchemeRun {
    pub fn feasible(&self) -> bool {
        self.report.feasible
    }

    fn from_outcome(scheme: SchemeId, out: ScaOutcome, iterations: usize) -> Self {
        SchemeRun {
            scheme,
            allocation: out.allocation,
            assignment: out.assignment,
            objective_w: out.objective_w,
            report: out.report,
            trace: out.trace,
            resolve_trace: out.resolve_trace,
            iterations,
        }
    }
}

/// Feasible runs first, by power; infeasible runs by their worst violation.
fn better(a: &ScaOutcome, b: &ScaOutcome) -> bool {
    match (a.feasible(), b.feasible()) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.objective_w < b.objective_w,
        (false, false) => a.report.worst().1 < b.report.worst().1,
    }
}

/// Relaxed SCA from the round-robin start and from the greedy start of
/// `rate`, keeping the better final allocation.
fn multi_start(
    scheme: SchemeId,
    cfg: &SystemConfig,
    real: &ChannelRealization,
    sca: &ScaConfig,
    rate: RateModel,
) -> Result<SchemeRun> {
    let mut starts = vec![round_robin_assignment(cfg)];
    let greedy = greedy_assignment(cfg, real, rate);
    if !starts.contains(&greedy) {
        starts.push(greedy);
    }
    let inits: Vec<Allocation> = starts.iter().map(|a| initial_allocation(cfg, real, a)).collect();
    let mut best: Option<ScaOutcome> = None;
    let mut iterations = 0;
    for init in &inits {
        let out = scasolver::run_with_model(cfg, real, sca, init, rate)?;
        iterations += out.iterations();
        if best.as_ref().is_none_or(|b| better(&out, b)) {
            best = Some(out);
        }
    }
    Ok(SchemeRun::from_outcome(scheme, best.expect("at least one start"), iterations))
}

/// The proposed scheme: normal-approximation rates.
pub fn run_proposed(cfg: &SystemConfig, real: &ChannelRealization, sca: &ScaConfig) -> Result<SchemeRun> {
    multi_start(SchemeId::Proposed, cfg, real, sca, RateModel::FiniteBlocklength)
}

/// Capacity lower bound: the dispersion term is dropped from both demand
/// constraints. Feasibility is judged against plain capacity.
pub fn run_sc(cfg: &SystemConfig, real: &ChannelRealization, sca: &ScaConfig) -> Result<SchemeRun> {
    multi_start(SchemeId::Sc, cfg, real, sca, RateModel::Shannon)
}

/// Fixed round-robin assignment; only the powers are optimized.
pub fn run_fsa(cfg: &SystemConfig, real: &ChannelRealization, sca: &ScaConfig) -> Result<SchemeRun> {
    cfg.validate()?;
    real.check_shape(cfg)?;
    let assignment = round_robin_assignment(cfg);
    let start = initial_allocation(cfg, real, &assignment);
    let rate = RateModel::FiniteBlocklength;
    let (allocation, trace, _) = scasolver::optimize_powers(cfg, real, sca, &assignment, &start, rate)?;
    let report = problem::check(&allocation, cfg, real, problem::DEFAULT_TOLERANCE)?;
    let objective_w = problem::objective(&allocation, cfg)?;
    Ok(SchemeRun {
        scheme: SchemeId::Fsa,
        allocation,
        assignment,
        objective_w,
        report,
        iterations: trace.len(),
        trace: IterationTrace::default(),
        resolve_trace: trace,
    })
}

/// Default grid size of the exhaustive reference.
pub const ORACLE_GRID_POINTS: usize = 64;
/// Smallest nonzero grid power in watts.
pub const ORACLE_GRID_MIN_W: f64 = 1e-6;
/// Work limit of the exhaustive reference, in power-tuple evaluations.
pub const ORACLE_WORK_LIMIT: f64 = 1e7;

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Best grid allocation; `None` when no assignment is feasible.
    pub allocation: Option<Allocation>,
    pub assignment: Option<Assignment>,
    pub objective_w: f64,
    /// Ratio between neighbouring grid powers, per link.
    pub grid_ratio_ul: f64,
    pub grid_ratio_dl: f64,
    pub assignments_checked: usize,
    /// Power tuples evaluated.
    pub evaluations: u64,
}

impl OracleResult {
    pub fn feasible(&self) -> bool {
        self.allocation.is_some()
    }

    /// The largest grid ratio; no allocation on the continuum can be
    /// cheaper than the grid optimum divided by it.
    pub fn grid_ratio(&self) -> f64 {
        self.grid_ratio_ul.max(self.grid_ratio_dl)
    }
}

/// Geometric grid of `points` powers from [`ORACLE_GRID_MIN_W`] to `cap`.
pub fn power_grid(cap: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![cap];
    }
    let r = (cap / ORACLE_GRID_MIN_W).powf(1.0 / (points - 1) as f64);
    let mut grid: Vec<f64> = (0..points).map(|i| ORACLE_GRID_MIN_W * r.powi(i as i32)).collect();
    // The top point is the budget itself, not a rounded power of `r`.
    grid[points - 1] = cap;
    grid
}

/// Held cells of one user on one link, grouped by sub-carrier: cells on the
/// same sub-carrier share a gain, so only sorted power tuples are tried
/// within a group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct CellClass {
    link: Link,
    user: usize,
    /// `(sub-carrier, cell count)` in ascending sub-carrier order.
    groups: Vec<(usize, usize)>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl CellClass {
    fn of(cfg: &SystemConfig, a: &Assignment, link: Link, user: usize) -> Self {
        let mut groups: Vec<(usize, usize)> = Vec::new();
        for (m, _) in a.cells_of(cfg, link, user) {
            match groups.last_mut() {
                Some(g) if g.0 == m => g.1 += 1,
                _ => groups.push((m, 1)),
            }
        }
        CellClass { link, user, groups }
    }

    /// Number of sorted power tuples: one multiset per group.
    fn work(&self, points: usize) -> f64 {
        self.groups.iter().map(|&(_, c)| binomial(points + c - 1, c)).product()
    }
}

/// Best grid powers of one class: total power and per-cell powers in
/// `cells_of` order, or `None` if the demand cannot be met.
struct ClassBest {
    total_w: f64,
    powers: Vec<f64>,
    evaluations: u64,
}

struct Search<'a> {
    gains: Vec<f64>,
    grid: &'a [f64],
    demand: f64,
    q: f64,
    budget: f64,
    best: f64,
    best_idx: Vec<usize>,
    idx: Vec<usize>,
    /// First position of each group in `idx`.
    group_start: Vec<bool>,
    evaluations: u64,
}

impl Search<'_> {
    fn descend(&mut self, pos: usize, power: f64, c_bits: f64, v_sum: f64) {
        let n = self.gains.len();
        if pos == n {
            self.evaluations += 1;
            let bits = c_bits - LOG2_E * self.q * v_sum.sqrt();
            if bits >= self.demand && power < self.best {
                self.best = power;
                self.best_idx.clone_from(&self.idx);
            }
            return;
        }
        let from = if self.group_start[pos] { 0 } else { self.idx[pos - 1] };
        let rest = (n - pos - 1) as f64 * self.grid[0];
        for i in from..self.grid.len() {
            let p = self.grid[i];
            let total = power + p + rest;
            if total >= self.best || total > self.budget {
                break;
            }
            self.idx[pos] = i;
            let gamma = self.gains[pos] * p;
            self.descend(pos + 1, power + p, c_bits + gamma.ln_1p() * LOG2_E, v_sum + dispersion(gamma));
        }
    }
}

fn class_best(cfg: &SystemConfig, real: &ChannelRealization, class: &CellClass, points: usize) -> Result<Option<ClassBest>> {
    let demand = cfg.demand_bits(class.link, class.user);
    if class.groups.is_empty() {
        return Ok((demand <= 0.0).then_some(ClassBest {
            total_w: 0.0,
            powers: Vec::new(),
            evaluations: 0,
        }));
    }
    let cap = cfg.power_cap_w(class.link, class.user);
    let grid = power_grid(cap, points);
    let mut gains = Vec::new();
    let mut group_start = Vec::new();
    for &(m, count) in &class.groups {
        for i in 0..count {
            gains.push(real.gain(class.link, class.user, m));
            group_start.push(i == 0);
        }
    }
    let n = gains.len();
    let mut search = Search {
        gains,
        grid: &grid,
        demand,
        q: q_inv(cfg.error_prob(class.link, class.user))?,
        budget: cap,
        best: f64::INFINITY,
        best_idx: vec![0; n],
        idx: vec![0; n],
        group_start,
        evaluations: 0,
    };
    search.descend(0, 0.0, 0.0, 0.0);
    if search.best.is_infinite() {
        return Ok(None);
    }
    Ok(Some(ClassBest {
        total_w: search.best,
        powers: search.best_idx.iter().map(|&i| grid[i]).collect(),
        evaluations: search.evaluations,
    }))
}

/// Every assignment of cells to users (or to nobody) that respects the
/// delay and causality masks, in lexicographic owner order.
fn assignments(cfg: &SystemConfig) -> Result<Vec<Assignment>> {
    let masks = build_masks(cfg);
    let cells: Vec<(Link, usize, usize)> = Link::BOTH
        .into_iter()
        .flat_map(|link| {
            (0..cfg.subcarriers(link)).flat_map(move |m| (0..cfg.slots(link)).map(move |n| (link, m, n)))
        })
        .collect();
    let count = ((cfg.users + 1) as f64).powi(cells.len() as i32);
    if count > ORACLE_WORK_LIMIT {
        return Err(Error::TooLarge {
            estimated: count,
            limit: ORACLE_WORK_LIMIT,
        });
    }
    let mut out = Vec::new();
    let mut digits = vec![0usize; cells.len()];
    loop {
        let mut a = Assignment::empty(cfg);
        for (d, &(link, m, n)) in digits.iter().zip(&cells) {
            a.set(cfg, link, m, n, d.checked_sub(1));
        }
        if a.respects_masks(cfg, &masks) {
            out.push(a);
        }
        let mut i = 0;
        loop {
            if i == digits.len() {
                return Ok(out);
            }
            digits[i] += 1;
            if digits[i] <= cfg.users {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Exhaustive search over binary assignments and a geometric power grid.
///
/// For a fixed assignment the problem separates per user and link: uplink
/// users have their own budgets, and the base-station budget binds the sum
/// of the downlink powers, which is also their share of the objective, so
/// the per-user minima are jointly optimal whenever their sum fits.
/// Identical per-user cell sets are solved once. Refuses instances whose
/// estimated number of power-tuple evaluations exceeds
/// [`ORACLE_WORK_LIMIT`].
pub fn run_oracle(cfg: &SystemConfig, real: &ChannelRealization, grid_points: usize) -> Result<OracleResult> {
    cfg.validate()?;
    real.check_shape(cfg)?;
    if grid_points == 0 {
        return Err(Error::Config("the oracle grid needs at least one point".into()));
    }
    let candidates = assignments(cfg)?;
    let mut classes = BTreeSet::new();
    for a in &candidates {
        for link in Link::BOTH {
            for k in 0..cfg.users {
                classes.insert(CellClass::of(cfg, a, link, k));
            }
        }
    }
    let work: f64 = classes.iter().map(|c| c.work(grid_points)).sum::<f64>() + candidates.len() as f64;
    if work > ORACLE_WORK_LIMIT {
        return Err(Error::TooLarge {
            estimated: work,
            limit: ORACLE_WORK_LIMIT,
        });
    }
    let classes: Vec<CellClass> = classes.into_iter().collect();
    let solved: Vec<Option<ClassBest>> = classes
        .par_iter()
        .map(|c| class_best(cfg, real, c, grid_points))
        .collect::<Result<_>>()?;
    let evaluations = solved.iter().flatten().map(|b| b.evaluations).sum();
    let table: HashMap<&CellClass, &Option<ClassBest>> = classes.iter().zip(&solved).collect();

    let mut best: Option<(f64, &Assignment)> = None;
    for a in &candidates {
        let mut total = 0.0;
        let mut dl_total = 0.0;
        let mut ok = true;
        for link in Link::BOTH {
            for k in 0..cfg.users {
                match table[&CellClass::of(cfg, a, link, k)] {
                    Some(b) => match link {
                        Link::Up => total += cfg.weights[k] * b.total_w,
                        Link::Down => dl_total += b.total_w,
                    },
                    None => ok = false,
                }
            }
        }
        total += dl_total;
        if ok && dl_total <= cfg.bs_power_max_w && best.is_none_or(|(b, _)| total < b) {
            best = Some((total, a));
        }
    }

    let ratio = |cap: f64| (cap / ORACLE_GRID_MIN_W).powf(1.0 / (grid_points.max(2) - 1) as f64);
    let ul_cap = cfg.user_power_max_w.iter().copied().fold(0.0, f64::max);
    let mut out = OracleResult {
        allocation: None,
        assignment: None,
        objective_w: f64::INFINITY,
        grid_ratio_ul: ratio(ul_cap),
        grid_ratio_dl: ratio(cfg.bs_power_max_w),
        assignments_checked: candidates.len(),
        evaluations,
    };
    if let Some((_, a)) = best {
        let mut alloc = Allocation::zeros(cfg);
        let (s_u, s_d) = a.to_indicators(cfg);
        alloc.s_u = s_u;
        alloc.s_d = s_d;
        for link in Link::BOTH {
            for k in 0..cfg.users {
                let class = CellClass::of(cfg, a, link, k);
                let powers = &table[&class].as_ref().expect("feasible class").powers;
                for (&(m, n), &p) in a.cells_of(cfg, link, k).iter().zip(powers) {
                    alloc.p_mut(link).set(k, m, n, p);
                }
            }
        }
        alloc.sync_pbar();
        out.objective_w = problem::objective(&alloc, cfg)?;
        out.allocation = Some(alloc);
        out.assignment = Some(a.clone());
    }
    Ok(out)
}

/// Runs one scheme. The oracle uses [`ORACLE_GRID_POINTS`]; an infeasible
/// oracle result is reported through an empty feasibility report.
pub fn run_scheme(scheme: SchemeId, cfg: &SystemConfig, real: &ChannelRealization, sca: &ScaConfig) -> Result<SchemeRun> {
    match scheme {
        SchemeId::Proposed => run_proposed(cfg, real, sca),
        SchemeId::Sc => run_sc(cfg, real, sca),
        SchemeId::Fsa => run_fsa(cfg, real, sca),
        SchemeId::Oracle => {
            let o = run_oracle(cfg, real, ORACLE_GRID_POINTS)?;
            let allocation = o.allocation.clone().unwrap_or_else(|| Allocation::zeros(cfg));
            let mut report = problem::check(&allocation, cfg, real, problem::DEFAULT_TOLERANCE)?;
            report.feasible &= o.feasible();
            Ok(SchemeRun {
                scheme,
                assignment: o.assignment.unwrap_or_else(|| Assignment::empty(cfg)),
                allocation,
                objective_w: o.objective_w,
                report,
                trace: IterationTrace::default(),
                resolve_trace: IterationTrace::default(),
                iterations: 0,
            })
        }
    }
}

/// The configuration a scheme's feasibility is judged against.
pub fn judged_config(scheme: SchemeId, cfg: &SystemConfig) -> SystemConfig {
    match scheme {
        SchemeId::Sc => rated_config(cfg, RateModel::Shannon),
        _ => cfg.clone(),
    }
}
