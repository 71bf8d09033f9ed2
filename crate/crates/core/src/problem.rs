//! The mixed-integer allocation problem: decision tensors, objective and the
//! full constraint check.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbtrate::{q_inv, RateTerms};
use crate::sysmodel::{ChannelRealization, Link, SystemConfig};

/// Dense `[user][subcarrier][slot]` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    pub users: usize,
    pub subcarriers: usize,
    pub slots: usize,
    /// Row-major: slot fastest, then sub-carrier, then user.
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(users: usize, subcarriers: usize, slots: usize) -> Self {
        Tensor3 {
            users,
            subcarriers,
            slots,
            data: vec![0.0; users * subcarriers * slots],
        }
    }

    pub fn filled(users: usize, subcarriers: usize, slots: usize, value: f64) -> Self {
        let mut t = Self::zeros(users, subcarriers, slots);
        t.data.fill(value);
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, k: usize, m: usize, n: usize) -> usize {
        debug_assert!(k < self.users && m < self.subcarriers && n < self.slots);
        (k * self.subcarriers + m) * self.slots + n
    }

    #[inline]
    pub fn get(&self, k: usize, m: usize, n: usize) -> f64 {
        self.data[self.index(k, m, n)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, m: usize, n: usize, value: f64) {
        let i = self.index(k, m, n);
        self.data[i] = value;
    }

    /// Entries of user `k`, sub-carrier-major.
    pub fn user(&self, k: usize) -> &[f64] {
        let w = self.subcarriers * self.slots;
        &self.data[k * w..(k + 1) * w]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.users == other.users && self.subcarriers == other.subcarriers && self.slots == other.slots
    }

    fn check_dims(&self, what: &str, users: usize, subcarriers: usize, slots: usize) -> Result<()> {
        if self.users != users
            || self.subcarriers != subcarriers
            || self.slots != slots
            || self.data.len() != users * subcarriers * slots
        {
            return Err(Error::Shape(format!(
                "{what} is {}x{}x{} ({} entries), expected {users}x{subcarriers}x{slots}",
                self.users,
                self.subcarriers,
                self.slots,
                self.data.len()
            )));
        }
        Ok(())
    }
}

/// Sub-carrier indicators and powers for both links.
///
/// `s` may be fractional inside the solver; emitted allocations are binary.
/// `pbar` is the product surrogate `s * p` used by the Big-M form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub s_u: Tensor3,
    pub s_d: Tensor3,
    pub p_u: Tensor3,
    pub p_d: Tensor3,
    pub pbar_u: Tensor3,
    pub pbar_d: Tensor3,
}

impl Allocation {
    pub fn zeros(cfg: &SystemConfig) -> Self {
        let ul = || Tensor3::zeros(cfg.users, cfg.subcarriers_ul, cfg.slots_ul);
        let dl = || Tensor3::zeros(cfg.users, cfg.subcarriers_dl, cfg.slots_dl);
        Allocation {
            s_u: ul(),
            s_d: dl(),
            p_u: ul(),
            p_d: dl(),
            pbar_u: ul(),
            pbar_d: dl(),
        }
    }

    pub fn s(&self, link: Link) -> &Tensor3 {
        match link {
            Link::Up => &self.s_u,
            Link::Down => &self.s_d,
        }
    }

    pub fn p(&self, link: Link) -> &Tensor3 {
        match link {
            Link::Up => &self.p_u,
            Link::Down => &self.p_d,
        }
    }

    pub fn pbar(&self, link: Link) -> &Tensor3 {
        match link {
            Link::Up => &self.pbar_u,
            Link::Down => &self.pbar_d,
        }
    }

    pub fn s_mut(&mut self, link: Link) -> &mut Tensor3 {
        match link {
            Link::Up => &mut self.s_u,
            Link::Down => &mut self.s_d,
        }
    }

    pub fn p_mut(&mut self, link: Link) -> &mut Tensor3 {
        match link {
            Link::Up => &mut self.p_u,
            Link::Down => &mut self.p_d,
        }
    }

    pub fn pbar_mut(&mut self, link: Link) -> &mut Tensor3 {
        match link {
            Link::Up => &mut self.pbar_u,
            Link::Down => &mut self.pbar_d,
        }
    }

    /// Sets `pbar = s * p` on both links.
    pub fn sync_pbar(&mut self) {
        for link in Link::BOTH {
            let prod: Vec<f64> = self
                .s(link)
                .data
                .iter()
                .zip(&self.p(link).data)
                .map(|(s, p)| s * p)
                .collect();
            self.pbar_mut(link).data = prod;
        }
    }

    pub fn check_shape(&self, cfg: &SystemConfig) -> Result<()> {
        let k = cfg.users;
        for (name, t) in [("s_u", &self.s_u), ("p_u", &self.p_u), ("pbar_u", &self.pbar_u)] {
            t.check_dims(name, k, cfg.subcarriers_ul, cfg.slots_ul)?;
        }
        for (name, t) in [("s_d", &self.s_d), ("p_d", &self.p_d), ("pbar_d", &self.pbar_d)] {
            t.check_dims(name, k, cfg.subcarriers_dl, cfg.slots_dl)?;
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        [&self.s_u, &self.s_d]
            .iter()
            .all(|t| t.data.iter().all(|&s| s == 0.0 || s == 1.0))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("allocation serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Binary sub-carrier assignment: the owning user of every cell, if any.
///
/// Cells are indexed `m * slots + n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub owner_ul: Vec<Option<usize>>,
    pub owner_dl: Vec<Option<usize>>,
}

impl Assignment {
    pub fn empty(cfg: &SystemConfig) -> Self {
        Assignment {
            owner_ul: vec![None; cfg.subcarriers_ul * cfg.slots_ul],
            owner_dl: vec![None; cfg.subcarriers_dl * cfg.slots_dl],
        }
    }

    pub fn owners(&self, link: Link) -> &[Option<usize>] {
        match link {
            Link::Up => &self.owner_ul,
            Link::Down => &self.owner_dl,
        }
    }

    pub fn owners_mut(&mut self, link: Link) -> &mut Vec<Option<usize>> {
        match link {
            Link::Up => &mut self.owner_ul,
            Link::Down => &mut self.owner_dl,
        }
    }

    pub fn owner(&self, cfg: &SystemConfig, link: Link, m: usize, n: usize) -> Option<usize> {
        self.owners(link)[m * cfg.slots(link) + n]
    }

    pub fn set(&mut self, cfg: &SystemConfig, link: Link, m: usize, n: usize, owner: Option<usize>) {
        let slots = cfg.slots(link);
        self.owners_mut(link)[m * slots + n] = owner;
    }

    /// Cells `(m, n)` held by user `k` on `link`.
    pub fn cells_of(&self, cfg: &SystemConfig, link: Link, k: usize) -> Vec<(usize, usize)> {
        let slots = cfg.slots(link);
        self.owners(link)
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == Some(k))
            .map(|(c, _)| (c / slots, c % slots))
            .collect()
    }

    pub fn to_indicators(&self, cfg: &SystemConfig) -> (Tensor3, Tensor3) {
        let mut s_u = Tensor3::zeros(cfg.users, cfg.subcarriers_ul, cfg.slots_ul);
        let mut s_d = Tensor3::zeros(cfg.users, cfg.subcarriers_dl, cfg.slots_dl);
        for (link, t) in [(Link::Up, &mut s_u), (Link::Down, &mut s_d)] {
            let slots = cfg.slots(link);
            for (c, owner) in self.owners(link).iter().enumerate() {
                if let Some(k) = owner {
                    t.set(*k, c / slots, c % slots, 1.0);
                }
            }
        }
        (s_u, s_d)
    }

    /// Reads a binary assignment from indicators, taking the largest entry
    /// at or above `threshold` in each cell.
    pub fn from_indicators(cfg: &SystemConfig, s_u: &Tensor3, s_d: &Tensor3, threshold: f64) -> Self {
        let mut a = Assignment::empty(cfg);
        for (link, t) in [(Link::Up, s_u), (Link::Down, s_d)] {
            for m in 0..cfg.subcarriers(link) {
                for n in 0..cfg.slots(link) {
                    let mut best: Option<(usize, f64)> = None;
                    for k in 0..cfg.users {
                        let v = t.get(k, m, n);
                        if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                            best = Some((k, v));
                        }
                    }
                    a.set(cfg, link, m, n, best.map(|(k, _)| k));
                }
            }
        }
        a
    }

    /// Whether the assignment respects the causality and delay masks.
    pub fn respects_masks(&self, cfg: &SystemConfig, masks: &ConstraintMasks) -> bool {
        for k in 0..cfg.users {
            let dl = self.cells_of(cfg, Link::Down, k);
            if dl.iter().any(|&(_, n)| !masks.downlink_allowed(k, n)) {
                return false;
            }
            let ul = self.cells_of(cfg, Link::Up, k);
            for &(n_u, n_d) in &masks.causality_pairs {
                if ul.iter().any(|&(_, n)| n == n_u) && dl.iter().any(|&(_, n)| n == n_d) {
                    return false;
                }
            }
        }
        true
    }
}

/// Causality and delay masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintMasks {
    /// Zero-based `(uplink slot, downlink slot)` pairs that a user may not
    /// occupy together, on any pair of sub-carriers.
    pub causality_pairs: Vec<(usize, usize)>,
    /// Zero-based downlink slots barred for each user by its deadline.
    pub delay_forbidden: Vec<Vec<usize>>,
    slots_dl: usize,
}

impl ConstraintMasks {
    pub fn downlink_allowed(&self, k: usize, n: usize) -> bool {
        n < self.slots_dl && !self.delay_forbidden[k].contains(&n)
    }

    /// Number of leading downlink slots user `k` may use.
    pub fn usable_dl_slots(&self, k: usize) -> usize {
        (0..self.slots_dl).filter(|&n| self.downlink_allowed(k, n)).count()
    }

    /// Downlink slots that conflict with uplink slot `n_u`.
    pub fn dl_conflicts(&self, n_u: usize) -> impl Iterator<Item = usize> + '_ {
        self.causality_pairs
            .iter()
            .filter(move |(u, _)| *u == n_u)
            .map(|&(_, d)| d)
    }

    /// Uplink slots that conflict with downlink slot `n_d`.
    pub fn ul_conflicts(&self, n_d: usize) -> impl Iterator<Item = usize> + '_ {
        self.causality_pairs
            .iter()
            .filter(move |(_, d)| *d == n_d)
            .map(|&(u, _)| u)
    }

    pub fn conflicts(&self, n_u: usize, n_d: usize) -> bool {
        self.causality_pairs.contains(&(n_u, n_d))
    }
}

/// Builds the per-user causality pairs and the deadline masks.
///
/// For overlap index `o = 1..=overlap`, uplink frame slot `tau + o` conflicts
/// with downlink frame slots `1..=o`. A deadline `D` bars downlink frame
/// slots `n > D - tau`.
pub fn build_masks(cfg: &SystemConfig) -> ConstraintMasks {
    let mut causality_pairs = Vec::new();
    for o in 1..=cfg.overlap() {
        let n_u = cfg.tau + o - 1;
        for n_d in 0..o.min(cfg.slots_dl) {
            causality_pairs.push((n_u, n_d));
        }
    }
    let delay_forbidden = cfg
        .deadlines
        .iter()
        .map(|&d| {
            let usable = d.saturating_sub(cfg.tau);
            (usable..cfg.slots_dl).collect()
        })
        .collect();
    ConstraintMasks {
        causality_pairs,
        delay_forbidden,
        slots_dl: cfg.slots_dl,
    }
}

/// Weighted total power `sum w s_u p_u + sum s_d p_d` in watts.
pub fn objective(alloc: &Allocation, cfg: &SystemConfig) -> Result<f64> {
    alloc.check_shape(cfg)?;
    let dot = |s: &Tensor3, p: &Tensor3, k: usize| -> f64 {
        s.user(k).iter().zip(p.user(k)).map(|(s, p)| s * p).sum()
    };
    Ok((0..cfg.users)
        .map(|k| cfg.weights[k] * dot(&alloc.s_u, &alloc.p_u, k) + dot(&alloc.s_d, &alloc.p_d, k))
        .sum())
}

/// Big-M form of the objective, `sum w pbar_u + sum pbar_d`.
pub fn bigm_objective(alloc: &Allocation, cfg: &SystemConfig) -> Result<f64> {
    alloc.check_shape(cfg)?;
    let mut total = 0.0;
    for k in 0..cfg.users {
        total += cfg.weights[k] * alloc.pbar_u.user(k).iter().sum::<f64>();
        total += alloc.pbar_d.user(k).iter().sum::<f64>();
    }
    Ok(total)
}

/// Constraint labels of the original and Big-M problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintId {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    C8,
    C9,
    C10,
    C11,
    C12,
    C13,
    C14,
    C15,
    C16,
    C17,
    C18,
    C19,
    C20,
}

impl ConstraintId {
    pub const ALL: [ConstraintId; 20] = [
        ConstraintId::C1,
        ConstraintId::C2,
        ConstraintId::C3,
        ConstraintId::C4,
        ConstraintId::C5,
        ConstraintId::C6,
        ConstraintId::C7,
        ConstraintId::C8,
        ConstraintId::C9,
        ConstraintId::C10,
        ConstraintId::C11,
        ConstraintId::C12,
        ConstraintId::C13,
        ConstraintId::C14,
        ConstraintId::C15,
        ConstraintId::C16,
        ConstraintId::C17,
        ConstraintId::C18,
        ConstraintId::C19,
        ConstraintId::C20,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.index() + 1)
    }
}

/// Default constraint tolerance: bits for the rate rows, watts for budgets.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Worst violation of every constraint family.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub violations: [f64; 20],
    pub tolerance: f64,
    pub feasible: bool,
}

impl FeasibilityReport {
    pub fn violation(&self, id: ConstraintId) -> f64 {
        self.violations[id.index()]
    }

    /// The largest violation and its constraint.
    pub fn worst(&self) -> (ConstraintId, f64) {
        ConstraintId::ALL
            .iter()
            .map(|&id| (id, self.violation(id)))
            .fold((ConstraintId::C1, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
    }

    pub fn violated(&self) -> Vec<(ConstraintId, f64)> {
        ConstraintId::ALL
            .iter()
            .map(|&id| (id, self.violation(id)))
            .filter(|&(_, v)| !(v <= self.tolerance))
            .collect()
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.feasible {
            return write!(f, "feasible (tol {:e})", self.tolerance);
        }
        write!(f, "infeasible:")?;
        for (id, v) in self.violated() {
            write!(f, " {id}={v:.3e}")?;
        }
        Ok(())
    }
}

/// SNRs and indicator weights of user `k` on `link` under powers `p`.
pub(crate) fn user_terms(
    cfg: &SystemConfig,
    real: &ChannelRealization,
    link: Link,
    k: usize,
    s: &Tensor3,
    p: &Tensor3,
) -> (Vec<f64>, Vec<f64>) {
    let slots = cfg.slots(link);
    let mut snrs = Vec::with_capacity(s.subcarriers * slots);
    let mut weights = Vec::with_capacity(s.subcarriers * slots);
    for m in 0..cfg.subcarriers(link) {
        let g = real.gain(link, k, m);
        for n in 0..slots {
            let sv = s.get(k, m, n);
            if sv != 0.0 {
                snrs.push(g * p.get(k, m, n).max(0.0));
                weights.push(sv);
            }
        }
    }
    (snrs, weights)
}

/// Achieved normal-approximation bits of user `k` on `link`, using the
/// indicator-weighted sums of the original problem.
pub fn achieved_bits(
    alloc: &Allocation,
    cfg: &SystemConfig,
    real: &ChannelRealization,
    link: Link,
    k: usize,
) -> Result<f64> {
    let q = q_inv(cfg.error_prob(link, k))?;
    let (snrs, w) = user_terms(cfg, real, link, k, alloc.s(link), alloc.p(link));
    Ok(RateTerms::weighted(&snrs, &w, q).psi_bits)
}

/// Evaluates every constraint of the original and Big-M problems.
///
/// Fails only on a shape mismatch; all other defects are reported as
/// violations.
pub fn check(
    alloc: &Allocation,
    cfg: &SystemConfig,
    real: &ChannelRealization,
    tol: f64,
) -> Result<FeasibilityReport> {
    alloc.check_shape(cfg)?;
    real.check_shape(cfg)?;
    let masks = build_masks(cfg);
    let mut v = [0.0f64; 20];
    let mut bump = |id: ConstraintId, x: f64| {
        let slot = &mut v[id.index()];
        // NaN counts as an infinite violation.
        let x = if x.is_nan() { f64::INFINITY } else { x };
        if x > *slot {
            *slot = x;
        }
    };

    for k in 0..cfg.users {
        for (link, id) in [(Link::Up, ConstraintId::C1), (Link::Down, ConstraintId::C2)] {
            let bits = achieved_bits(alloc, cfg, real, link, k)?;
            bump(id, cfg.demand_bits(link, k) - bits);
        }
    }

    for k in 0..cfg.users {
        for &(n_u, n_d) in &masks.causality_pairs {
            let up = (0..cfg.subcarriers_ul).map(|m| alloc.s_u.get(k, m, n_u)).fold(0.0, f64::max);
            let down = (0..cfg.subcarriers_dl).map(|m| alloc.s_d.get(k, m, n_d)).fold(0.0, f64::max);
            bump(ConstraintId::C3, up + down - 1.0);
        }
        for &n in &masks.delay_forbidden[k] {
            for m in 0..cfg.subcarriers_dl {
                bump(ConstraintId::C4, alloc.s_d.get(k, m, n).abs());
            }
        }
    }

    for (link, excl, integ, budget_nonneg) in [
        (Link::Up, ConstraintId::C5, ConstraintId::C6, ConstraintId::C8),
        (Link::Down, ConstraintId::C9, ConstraintId::C10, ConstraintId::C12),
    ] {
        let s = alloc.s(link);
        for m in 0..cfg.subcarriers(link) {
            for n in 0..cfg.slots(link) {
                let total: f64 = (0..cfg.users).map(|k| s.get(k, m, n)).sum();
                bump(excl, total - 1.0);
            }
        }
        for &sv in &s.data {
            bump(integ, sv.min(1.0 - sv).max(-sv).max(sv - 1.0));
        }
        for &p in &alloc.p(link).data {
            bump(budget_nonneg, -p);
        }
    }

    let powered = |link: Link, k: usize| -> f64 {
        alloc.s(link).user(k).iter().zip(alloc.p(link).user(k)).map(|(s, p)| s * p).sum()
    };
    let mut bs_total = 0.0;
    for k in 0..cfg.users {
        bump(ConstraintId::C7, powered(Link::Up, k) - cfg.user_power_max_w[k]);
        bs_total += powered(Link::Down, k);
    }
    bump(ConstraintId::C11, bs_total - cfg.bs_power_max_w);

    for (link, first) in [(Link::Up, 12usize), (Link::Down, 16usize)] {
        let (s, p, pbar) = (alloc.s(link), alloc.p(link), alloc.pbar(link));
        for k in 0..cfg.users {
            let cap = cfg.power_cap_w(link, k);
            for i in k * s.subcarriers * s.slots..(k + 1) * s.subcarriers * s.slots {
                let (sv, pv, bv) = (s.data[i], p.data[i], pbar.data[i]);
                bump(ConstraintId::ALL[first], bv - cap * sv);
                bump(ConstraintId::ALL[first + 1], bv - pv);
                bump(ConstraintId::ALL[first + 2], pv - (1.0 - sv) * cap - bv);
                bump(ConstraintId::ALL[first + 3], -bv);
            }
        }
    }

    let feasible = v.iter().all(|&x| x <= tol);
    Ok(FeasibilityReport {
        violations: v,
        tolerance: tol,
        feasible,
    })
}

/// Zero-tolerance check of the causality and delay masks on a binary
/// allocation: no forbidden downlink cell is used and no user holds a
/// conflicting uplink/downlink slot pair.
pub fn masks_respected(alloc: &Allocation, cfg: &SystemConfig) -> bool {
    let masks = build_masks(cfg);
    for k in 0..cfg.users {
        for &n in &masks.delay_forbidden[k] {
            if (0..cfg.subcarriers_dl).any(|m| alloc.s_d.get(k, m, n) != 0.0) {
                return false;
            }
        }
        for &(n_u, n_d) in &masks.causality_pairs {
            let up = (0..cfg.subcarriers_ul).any(|m| alloc.s_u.get(k, m, n_u) != 0.0);
            let down = (0..cfg.subcarriers_dl).any(|m| alloc.s_d.get(k, m, n_d) != 0.0);
            if up && down {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_cfg() -> SystemConfig {
        SystemConfig::reference(2).with_subcarriers(3)
    }

    fn flat_real(cfg: &SystemConfig, g: f64) -> ChannelRealization {
        ChannelRealization::from_gains(
            vec![vec![g; cfg.subcarriers_ul]; cfg.users],
            vec![vec![g; cfg.subcarriers_dl]; cfg.users],
        )
        .unwrap()
    }

    #[test]
    fn masks_reference_geometry() {
        let cfg = small_cfg();
        let masks = build_masks(&cfg);
        // tau = 3, overlap 1: uplink frame slot 4 against downlink frame slot 1.
        assert_eq!(masks.causality_pairs, vec![(3, 0)]);
        assert!(masks.delay_forbidden.iter().all(|f| f.is_empty()));
    }

    #[test]
    fn masks_without_overlap() {
        let mut cfg = small_cfg();
        cfg.tau = cfg.slots_ul;
        cfg.deadlines = vec![cfg.tau + 1; 2];
        assert!(build_masks(&cfg).causality_pairs.is_empty());
    }

    #[test]
    fn strict_deadline_keeps_two_slots() {
        let cfg = small_cfg().with_deadlines(vec![5, 7]);
        let masks = build_masks(&cfg);
        assert_eq!(masks.delay_forbidden[0], vec![2, 3]);
        assert_eq!(masks.usable_dl_slots(0), 2);
        assert_eq!(masks.usable_dl_slots(1), 4);
    }

    #[test]
    fn causality_pair_count_shrinks_with_tau() {
        let mut cfg = SystemConfig::reference(1);
        for tau in 0..cfg.slots_ul {
            cfg.tau = tau;
            cfg.deadlines = vec![tau + cfg.slots_dl];
            let a = build_masks(&cfg).causality_pairs.len();
            cfg.tau = tau + 1;
            cfg.deadlines = vec![tau + 1 + cfg.slots_dl];
            let b = build_masks(&cfg).causality_pairs.len();
            let o = cfg.slots_ul - tau;
            assert_eq!(a, o * (o + 1) / 2);
            assert_eq!(a - b, o);
        }
    }

    #[test]
    fn objective_examples() {
        let mut cfg = small_cfg();
        let mut a = Allocation::zeros(&cfg);
        assert_eq!(objective(&a, &cfg).unwrap(), 0.0);
        cfg.weights[0] = 2.0;
        a.s_u.set(0, 1, 2, 1.0);
        a.p_u.set(0, 1, 2, 0.1);
        assert_abs_diff_eq!(objective(&a, &cfg).unwrap(), 0.2, epsilon = 1e-15);
        a.s_d.set(1, 0, 0, 1.0);
        a.p_d.set(1, 0, 0, 0.3);
        assert_abs_diff_eq!(objective(&a, &cfg).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn objective_rejects_bad_shape() {
        let cfg = small_cfg();
        let mut a = Allocation::zeros(&cfg);
        a.p_d = Tensor3::zeros(2, 2, 4);
        assert!(matches!(objective(&a, &cfg), Err(Error::Shape(_))));
        assert!(check(&a, &cfg, &flat_real(&cfg, 1.0), 1e-6).is_err());
    }

    #[test]
    fn zero_allocation_misses_demand() {
        let cfg = small_cfg();
        let real = flat_real(&cfg, 1e3);
        let r = check(&Allocation::zeros(&cfg), &cfg, &real, 1e-6).unwrap();
        assert!(!r.feasible);
        assert_abs_diff_eq!(r.violation(ConstraintId::C1), 160.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.violation(ConstraintId::C2), 160.0, epsilon = 1e-12);
        assert_eq!(r.violation(ConstraintId::C7), 0.0);
    }

    #[test]
    fn budget_excess_is_reported() {
        let cfg = small_cfg();
        let real = flat_real(&cfg, 1e3);
        let mut a = Allocation::zeros(&cfg);
        for m in 0..3 {
            a.s_u.set(0, m, 0, 1.0);
            a.p_u.set(0, m, 0, 0.1);
        }
        a.sync_pbar();
        let r = check(&a, &cfg, &real, 1e-6).unwrap();
        assert_abs_diff_eq!(r.violation(ConstraintId::C7), 0.3 - cfg.user_power_max_w[0], epsilon = 1e-12);
    }

    #[test]
    fn double_assignment_is_reported() {
        let cfg = small_cfg();
        let real = flat_real(&cfg, 1e3);
        let mut a = Allocation::zeros(&cfg);
        a.s_u.set(0, 1, 1, 1.0);
        a.s_u.set(1, 1, 1, 1.0);
        let r = check(&a, &cfg, &real, 1e-6).unwrap();
        assert_eq!(r.violation(ConstraintId::C5), 1.0);
    }

    #[test]
    fn causality_and_delay_are_reported() {
        let cfg = small_cfg().with_deadlines(vec![5, 7]);
        let real = flat_real(&cfg, 1e3);
        let mut a = Allocation::zeros(&cfg);
        a.s_u.set(1, 0, 3, 1.0);
        a.s_d.set(1, 2, 0, 1.0);
        a.s_d.set(0, 0, 2, 1.0);
        let r = check(&a, &cfg, &real, 1e-6).unwrap();
        assert_eq!(r.violation(ConstraintId::C3), 1.0);
        assert_eq!(r.violation(ConstraintId::C4), 1.0);
        assert!(!masks_respected(&a, &cfg));
    }

    #[test]
    fn feasible_hand_allocation() {
        let cfg = SystemConfig::reference(1).with_subcarriers(2).with_task_bits(20.0);
        let real = flat_real(&cfg, 1e5);
        let mut a = Allocation::zeros(&cfg);
        // Six cells per link at SNR 1000; uplink skips frame slot 4 and
        // downlink skips frame slot 1.
        for m in 0..2 {
            for n in 0..3 {
                a.s_u.set(0, m, n, 1.0);
                a.p_u.set(0, m, n, 0.01);
            }
            for n in 1..4 {
                a.s_d.set(0, m, n, 1.0);
                a.p_d.set(0, m, n, 0.01);
            }
        }
        a.sync_pbar();
        let r = check(&a, &cfg, &real, 1e-6).unwrap();
        assert!(r.feasible, "{r}");
        assert!(masks_respected(&a, &cfg));
    }

    #[test]
    fn bigm_rows_catch_inconsistent_surrogate() {
        let cfg = small_cfg();
        let real = flat_real(&cfg, 1.0);
        let mut a = Allocation::zeros(&cfg);
        a.p_u.set(0, 0, 0, 0.1);
        a.pbar_u.set(0, 0, 0, 0.05);
        let r = check(&a, &cfg, &real, 1e-6).unwrap();
        assert_abs_diff_eq!(r.violation(ConstraintId::C13), 0.05, epsilon = 1e-15);
        assert_eq!(r.violation(ConstraintId::C14), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let cfg = small_cfg();
        let mut a = Allocation::zeros(&cfg);
        a.s_d.set(1, 2, 3, 1.0);
        a.p_d.set(1, 2, 3, 0.125);
        a.sync_pbar();
        let back = Allocation::from_json(&a.to_json()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn report_display_lists_violations() {
        let cfg = small_cfg();
        let real = flat_real(&cfg, 1.0);
        let r = check(&Allocation::zeros(&cfg), &cfg, &real, 1e-6).unwrap();
        let text = r.to_string();
        assert!(text.contains("C1=") && text.contains("C2="), "{text}");
        assert_eq!(r.worst().0, ConstraintId::C1);
    }
}
