//! Convex programs with a linear objective, affine rows and concave
//! logarithmic rate rows, and their interior-point solver.
//!
//! A [`ConvexSubproblem`] is stated in physical units. The solver rescales
//! variables by [`ConvexSubproblem::scale`] and normalizes affine rows
//! internally; reported values, residuals and objective are in the units the
//! rows are written in. The allocation programs use bits for rate rows, watts
//! for budget rows, fractions of the cell power cap for envelope rows, and
//! plain numbers for indicator rows.

mod conic;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ConstraintId;
use crate::sysmodel::Link;

pub use conic::{solve, solve_with, SolveOptions, GAP_FLOOR, GAP_TOL, PRIMAL_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    /// Relaxed sub-carrier indicator `s`.
    Indicator,
    /// Transmit power `p`.
    Power,
    /// Product surrogate `pbar = s * p`.
    Surrogate,
    /// Elastic slack of a feasibility problem; `user` holds the row number.
    Elastic,
}

/// Identifies the physical meaning of a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarKey {
    pub link: Link,
    pub kind: VarKind,
    pub user: usize,
    pub subcarrier: usize,
    pub slot: usize,
}

/// `sum coef * x <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub tag: ConstraintId,
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `sum log2(1 + g * x) - sum coef * x >= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub tag: ConstraintId,
    pub log_terms: Vec<(usize, f64)>,
    pub linear: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// One convex program over box-bounded variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexSubproblem {
    pub vars: Vec<VarKey>,
    pub lower: Vec<f64>,
    /// May be `+inf`.
    pub upper: Vec<f64>,
    /// Typical magnitude of each variable; the solver works on `x / scale`.
    /// The span of a finite box should be a modest multiple of the scale.
    pub scale: Vec<f64>,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub linear_rows: Vec<LinearRow>,
    pub log_rows: Vec<LogRow>,
}

impl Default for ConvexSubproblem {
    fn default() -> Self {
        Self::new()
    }
}

impl ConvexSubproblem {
    pub fn new() -> Self {
        ConvexSubproblem {
            vars: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            scale: Vec::new(),
            objective: Vec::new(),
            objective_constant: 0.0,
            linear_rows: Vec::new(),
            log_rows: Vec::new(),
        }
    }

    /// Adds a variable and returns its index.
    pub fn add_var(&mut self, key: VarKey, lower: f64, upper: f64, scale: f64, cost: f64) -> usize {
        self.vars.push(key);
        self.lower.push(lower);
        self.upper.push(upper);
        self.scale.push(scale);
        self.objective.push(cost);
        self.vars.len() - 1
    }

    pub fn add_linear(&mut self, tag: ConstraintId, terms: Vec<(usize, f64)>, rhs: f64) {
        self.linear_rows.push(LinearRow { tag, terms, rhs });
    }

    pub fn add_log(
        &mut self,
        tag: ConstraintId,
        log_terms: Vec<(usize, f64)>,
        linear: Vec<(usize, f64)>,
        rhs: f64,
    ) {
        self.log_rows.push(LogRow {
            tag,
            log_terms,
            linear,
            rhs,
        });
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.linear_rows.len() + self.log_rows.len()
    }

    /// Objective `c^T x + constant` at `x`.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.objective_constant
    }

    /// Largest constraint or bound violation at `x`, each row in its own units.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.linear_rows {
            let lhs: f64 = row.terms.iter().map(|&(j, a)| a * x[j]).sum();
            worst = worst.max(lhs - row.rhs);
        }
        for row in &self.log_rows {
            worst = worst.max(row.rhs - log_row_value(row, x));
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vars.len();
        if [self.lower.len(), self.upper.len(), self.scale.len(), self.objective.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Shape("variable attribute vectors differ in length".into()));
        }
        let mut seen = HashSet::with_capacity(n);
        for key in &self.vars {
            if !seen.insert(*key) {
                return Err(Error::Shape(format!("duplicate variable {key:?}")));
            }
        }
        for j in 0..n {
            if !(self.lower[j].is_finite() && self.lower[j] < self.upper[j]) {
                return Err(Error::Shape(format!(
                    "variable {j} has empty or unbounded-below box [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
            if !(self.scale[j] > 0.0 && self.scale[j].is_finite()) {
                return Err(Error::Shape(format!("variable {j} has scale {}", self.scale[j])));
            }
            if !self.objective[j].is_finite() {
                return Err(Error::Shape(format!("objective coefficient {j} is not finite")));
            }
        }
        if !self.objective_constant.is_finite() {
            return Err(Error::Shape("objective constant is not finite".into()));
        }
        let check_terms = |terms: &[(usize, f64)]| -> Result<()> {
            for &(j, a) in terms {
                if j >= n || !a.is_finite() {
                    return Err(Error::Shape(format!("row term ({j}, {a}) is invalid")));
                }
            }
            Ok(())
        };
        for row in &self.linear_rows {
            check_terms(&row.terms)?;
            if !row.rhs.is_finite() {
                return Err(Error::Shape("row bound is not finite".into()));
            }
        }
        for row in &self.log_rows {
            check_terms(&row.linear)?;
            check_terms(&row.log_terms)?;
            for &(j, g) in &row.log_terms {
                if !(g > 0.0) {
                    return Err(Error::Domain {
                        what: "log-row gain",
                        value: g,
                    });
                }
                if self.lower[j] * g <= -1.0 {
                    return Err(Error::Shape(format!("log argument of variable {j} can reach zero")));
                }
            }
            if !row.rhs.is_finite() {
                return Err(Error::Shape("row bound is not finite".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("subproblem serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Writes the subproblem as JSON for inspection with external tools.
    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn log_row_value(row: &LogRow, x: &[f64]) -> f64 {
    let logs: f64 = row.log_terms.iter().map(|&(j, g)| (g * x[j]).ln_1p()).sum::<f64>()
        * std::f64::consts::LOG2_E;
    let lin: f64 = row.linear.iter().map(|&(j, a)| a * x[j]).sum();
    logs - lin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub values: Vec<f64>,
    /// Objective including the constant term.
    pub objective: f64,
    pub status: SolveStatus,
    /// Largest row or bound violation in row units.
    pub primal_residual: f64,
    /// Scaled stationarity residual reported by the conic solver.
    pub dual_residual: f64,
    /// Duality gap relative to `max(|objective|, GAP_FLOOR)`.
    pub gap: f64,
    /// Interior-point iterations summed over all attempts.
    pub iterations: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn key(kind: VarKind, user: usize, subcarrier: usize) -> VarKey {
        VarKey {
            link: Link::Up,
            kind,
            user,
            subcarrier,
            slot: 0,
        }
    }

    /// `min sum c x` s.t. `sum log2(1 + g x) >= bits`.
    const CAP: f64 = 10.0;

    /// Rate row over a box scaled by its cap, the convention of the allocation programs.
    fn rate_problem(costs: &[f64], gains: &[f64], bits: f64) -> ConvexSubproblem {
        let mut sub = ConvexSubproblem::new();
        let vars: Vec<usize> = costs
            .iter()
            .enumerate()
            .map(|(i, c)| sub.add_var(key(VarKind::Surrogate, 0, i), 0.0, CAP, CAP, *c))
            .collect();
        sub.add_log(
            ConstraintId::C1,
            vars.iter().zip(gains).map(|(&j, &g)| (j, g)).collect(),
            vec![],
            bits,
        );
        sub
    }

    /// Water-filling for `min sum c x` s.t. `sum log2(1 + g x) >= bits`:
    /// `x_i = max(0, level / c_i - 1 / g_i)` with the level found by bisection.
    fn water_filling(costs: &[f64], gains: &[f64], bits: f64) -> Vec<f64> {
        let alloc = |level: f64| -> Vec<f64> {
            costs.iter().zip(gains).map(|(c, g)| (level / c - 1.0 / g).max(0.0)).collect()
        };
        let rate = |x: &[f64]| -> f64 { x.iter().zip(gains).map(|(x, g)| (1.0 + g * x).log2()).sum() };
        let (mut lo, mut hi) = (0.0, 1.0);
        while rate(&alloc(hi)) < bits {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rate(&alloc(mid)) < bits {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        alloc(hi)
    }

    #[test]
    fn single_resource_closed_form() {
        let sol = solve(&rate_problem(&[1.0], &[1.0], 1.0)).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.values[0], 1.0, max_relative = 1e-6);
        assert_relative_eq!(sol.objective, 1.0, max_relative = 1e-6);
        assert!(sol.primal_residual <= PRIMAL_TOL && sol.gap <= GAP_TOL);
    }

    #[test]
    fn zero_demand_gives_zero_power() {
        let sol = solve(&rate_problem(&[1.0], &[1.0], 0.0)).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.values[0].abs() < 1e-7, "{}", sol.values[0]);
    }

    #[test]
    fn symmetric_two_resources() {
        let sol = solve(&rate_problem(&[1.0, 1.0], &[1.0, 1.0], 2.0)).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.objective, 2.0, max_relative = 1e-6);
        // The objective is flat to second order along the rate surface, so
        // the split is only resolved to about the square root of the gap.
        assert_relative_eq!(sol.values[0], 1.0, max_relative = 1e-4);
        assert_relative_eq!(sol.values[1], 1.0, max_relative = 1e-4);
    }

    #[test]
    fn matches_water_filling() {
        let costs = [1.0, 2.0, 0.5, 1.5];
        let gains = [3.0, 40.0, 0.2, 7.0];
        let want = water_filling(&costs, &gains, 6.0);
        let sol = solve(&rate_problem(&costs, &gains, 6.0)).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let want_obj: f64 = want.iter().zip(&costs).map(|(x, c)| x * c).sum();
        assert_relative_eq!(sol.objective, want_obj, max_relative = 1e-6);
        for (got, want) in sol.values.iter().zip(&want) {
            assert!((got - want).abs() <= 1e-3 * (1.0 + want), "{got} vs {want}");
        }
    }

    #[test]
    fn small_linear_program() {
        let mut sub = ConvexSubproblem::new();
        let a = sub.add_var(key(VarKind::Indicator, 0, 0), 0.0, 10.0, 1.0, -1.0);
        let b = sub.add_var(key(VarKind::Indicator, 0, 1), 0.0, 10.0, 1.0, -1.0);
        sub.add_linear(ConstraintId::C5, vec![(a, 1.0), (b, 2.0)], 4.0);
        sub.add_linear(ConstraintId::C5, vec![(a, 3.0), (b, 1.0)], 6.0);
        let sol = solve(&sub).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.values[0], 1.6, max_relative = 1e-6);
        assert_relative_eq!(sol.values[1], 1.2, max_relative = 1e-6);
        assert_relative_eq!(sol.objective, -2.8, max_relative = 1e-7);
    }

    #[test]
    fn budget_too_small_is_infeasible() {
        let mut sub = rate_problem(&[1.0, 1.0], &[1.0, 2.0], 10.0);
        sub.add_linear(ConstraintId::C7, vec![(0, 1.0), (1, 1.0)], 1.0);
        let sol = solve(&sub).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn empty_row_with_negative_bound_is_infeasible() {
        let mut sub = rate_problem(&[1.0], &[1.0], 1.0);
        sub.add_linear(ConstraintId::C7, vec![(0, 0.0)], -1.0);
        assert_eq!(solve(&sub).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn center_does_not_change_the_answer() {
        let costs = [1.0, 2.0, 0.5];
        let gains = [3.0, 40.0, 0.2];
        let sub = rate_problem(&costs, &gains, 4.0);
        let plain = solve(&sub).unwrap();
        let opts = SolveOptions {
            center: Some(vec![0.5, 0.01, 2.0]),
            ..SolveOptions::default()
        };
        let centered = solve_with(&sub, &opts).unwrap();
        assert_eq!(centered.status, SolveStatus::Optimal);
        assert_relative_eq!(centered.objective, plain.objective, max_relative = 1e-6);
        let bad = SolveOptions {
            center: Some(vec![0.0]),
            ..SolveOptions::default()
        };
        assert!(matches!(solve_with(&sub, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_malformed() {
        let mut sub = rate_problem(&[1.0], &[1.0], 1.0);
        sub.log_rows[0].log_terms[0].1 = 0.0;
        assert!(solve(&sub).is_err());
        let mut sub = rate_problem(&[1.0], &[1.0], 1.0);
        sub.vars.push(sub.vars[0]);
        sub.lower.push(0.0);
        sub.upper.push(1.0);
        sub.scale.push(1.0);
        sub.objective.push(0.0);
        assert!(matches!(sub.validate(), Err(Error::Shape(_))));
    }

    #[test]
    fn json_round_trip() {
        let sub = rate_problem(&[1.0, 2.0], &[3.0, 4.0], 2.0);
        assert_eq!(ConvexSubproblem::from_json(&sub.to_json()).unwrap(), sub);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn water_filling_objective(
                costs in prop::collection::vec(0.1f64..10.0, 1..6),
                log_gains in prop::collection::vec(-2.0f64..6.0, 6),
                bits in 0.5f64..30.0,
            ) {
                let gains: Vec<f64> = log_gains[..costs.len()].iter().map(|e| 10f64.powf(*e)).collect();
                let want = water_filling(&costs, &gains, bits);
                prop_assume!(want.iter().all(|x| *x < 0.9 * CAP));
                let want_obj: f64 = want.iter().zip(&costs).map(|(x, c)| x * c).sum();
                let sol = solve(&rate_problem(&costs, &gains, bits)).unwrap();
                prop_assert_eq!(sol.status, SolveStatus::Optimal, "{:?} {:?} {:?} {}", sol, costs, gains, bits);
                // An accepted exit is within GAP_TOL of its dual bound; the
                // primal residual adds a little on top of that.
                prop_assert!((sol.objective - want_obj).abs() <= 1e-5 * want_obj.max(GAP_FLOOR),
                    "{} vs {}", sol.objective, want_obj);
                prop_assert!(sol.primal_residual <= PRIMAL_TOL && sol.gap <= GAP_TOL);
            }

            #[test]
            fn row_order_does_not_matter(seed in 0u64..1000) {
                use rand::{RngExt, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let n = 6;
                let mut sub = ConvexSubproblem::new();
                for i in 0..n {
                    sub.add_var(key(VarKind::Surrogate, i / 3, i), 0.0, 5.0, 1.0, rng.random_range(0.5..2.0));
                }
                for u in 0..2 {
                    let terms = (3 * u..3 * u + 3).map(|j| (j, 10f64.powf(rng.random_range(-1.0..2.0)))).collect();
                    sub.add_log(ConstraintId::C1, terms, vec![], rng.random_range(1.0..4.0));
                }
                for _ in 0..4 {
                    let terms = (0..n).filter(|_| rng.random_bool(0.5)).map(|j| (j, 1.0)).collect::<Vec<_>>();
                    if !terms.is_empty() {
                        sub.add_linear(ConstraintId::C7, terms, 8.0);
                    }
                }
                let a = solve(&sub).unwrap();
                let mut permuted = sub.clone();
                permuted.linear_rows.reverse();
                permuted.log_rows.reverse();
                let k = permuted.linear_rows.len();
                if k > 1 {
                    permuted.linear_rows.rotate_left(seed as usize % k);
                }
                let b = solve(&permuted).unwrap();
                prop_assert_eq!(a.status, b.status);
                if a.status == SolveStatus::Optimal {
                    prop_assert!((a.objective - b.objective).abs() <= 1e-6 * a.objective.abs().max(GAP_FLOOR));
                }
            }
        }
    }
}
