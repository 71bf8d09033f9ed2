//! Monte Carlo sweeps over task size or packet error probability.
//!
//! Every (sweep value, realization, scheme) task is independent. Realization
//! `r` of master seed `s` draws its channel from [`realization_seed`], so
//! all sweep values and schemes see the same channels. Powers are averaged
//! in watts over the feasible realizations and reported in dBm; infeasible
//! realizations are counted, never dropped silently.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{run_scheme, SchemeId};
use crate::error::{Error, Result};
use crate::problem;
use crate::scasolver::ScaConfig;
use crate::sysmodel::{draw_realization, w_to_dbm, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TaskBits,
    ErrorProb,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TaskBits => "task_bits",
            SweepAxis::ErrorProb => "error_prob",
        }
    }

    /// `cfg` with every user's task size or error probability set to `value`.
    pub fn apply(self, cfg: &SystemConfig, value: f64) -> SystemConfig {
        match self {
            SweepAxis::TaskBits => cfg.clone().with_task_bits(value),
            SweepAxis::ErrorProb => cfg.clone().with_error_prob(value),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "task_bits" => Ok(SweepAxis::TaskBits),
            "error_prob" => Ok(SweepAxis::ErrorProb),
            other => Err(Error::Parse(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// Per-user deadlines under a label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayScenario {
    pub label: String,
    pub deadlines: Vec<usize>,
}

impl DelayScenario {
    /// No delay restriction: every deadline is the end of the downlink frame.
    pub fn unrestricted(cfg: &SystemConfig) -> Self {
        DelayScenario {
            label: "s0".into(),
            deadlines: vec![cfg.tau + cfg.slots_dl; cfg.users],
        }
    }

    /// The first `count` users must finish two slots into the downlink
    /// frame; the others are unrestricted.
    pub fn strict_first(label: &str, cfg: &SystemConfig, count: usize) -> Self {
        let relaxed = cfg.tau + cfg.slots_dl;
        let strict = (cfg.tau + 2).min(relaxed);
        DelayScenario {
            label: label.into(),
            deadlines: (0..cfg.users).map(|k| if k < count { strict } else { relaxed }).collect(),
        }
    }

    /// Named scenarios: `s0` and `s0bar` are unrestricted, `s1` restricts
    /// the first two users and `s1bar` the first three.
    pub fn named(name: &str, cfg: &SystemConfig) -> Result<Self> {
        match name.trim() {
            "s0" => Ok(Self::unrestricted(cfg)),
            "s0bar" => Ok(DelayScenario {
                label: "s0bar".into(),
                ..Self::unrestricted(cfg)
            }),
            "s1" => Ok(Self::strict_first("s1", cfg, 2)),
            "s1bar" => Ok(Self::strict_first("s1bar", cfg, 3)),
            other => Err(Error::Parse(format!("unknown delay scenario {other:?}"))),
        }
    }

    /// The deadlines already in `cfg`.
    pub fn from_config(cfg: &SystemConfig) -> Self {
        DelayScenario {
            label: "config".into(),
            deadlines: cfg.deadlines.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<SchemeId>,
    pub realizations: usize,
    pub scenario: DelayScenario,
    /// Record wall times; without them the table depends only on the inputs.
    pub timing: bool,
    pub sca: ScaConfig,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, values: Vec<f64>, schemes: Vec<SchemeId>, realizations: usize, scenario: DelayScenario) -> Self {
        SweepSpec {
            axis,
            values,
            schemes,
            realizations,
            scenario,
            timing: true,
            sca: ScaConfig::default(),
        }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.values.is_empty() {
            return bad("sweep needs at least one value");
        }
        if self.values.windows(2).any(|w| !(w[0] <= w[1])) {
            return bad("sweep values must be sorted ascending");
        }
        if self.realizations == 0 {
            return bad("sweep needs at least one realization");
        }
        if self.schemes.is_empty() {
            return bad("sweep needs at least one scheme");
        }
        if self.scenario.deadlines.len() != cfg.users {
            return bad("scenario deadlines must cover every user");
        }
        Ok(())
    }
}

/// One scheme on one realization at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scheme: SchemeId,
    pub value: f64,
    pub seed: u64,
    pub objective_w: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub walltime_s: f64,
    /// Whether the allocation respects the causality and delay masks.
    pub masks_respected: bool,
}

/// Averaged results of one (value, scheme) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub scheme: SchemeId,
    /// `10 log10(mean watts) + 30` over feasible realizations; NaN when
    /// none was feasible.
    pub avg_power_dbm: f64,
    pub feasible_count: usize,
    pub infeasible_count: usize,
    /// Over all realizations.
    pub avg_iters: f64,
    pub avg_walltime_s: f64,
}

impl PartialEq for SweepRow {
    /// Exact comparison that treats two NaN averages as equal.
    fn eq(&self, other: &Self) -> bool {
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan());
        self.axis == other.axis
            && same(self.value, other.value)
            && self.scheme == other.scheme
            && same(self.avg_power_dbm, other.avg_power_dbm)
            && self.feasible_count == other.feasible_count
            && self.infeasible_count == other.infeasible_count
            && same(self.avg_iters, other.avg_iters)
            && same(self.avg_walltime_s, other.avg_walltime_s)
    }
}

impl SweepRow {
    /// Whether no realization of the cell was feasible.
    pub fn all_infeasible(&self) -> bool {
        self.feasible_count == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub const CSV_HEADER: &str = "axis,value,scheme,avg_power_dbm,feasible_count,infeasible_count,avg_iters,avg_walltime_s";

impl SweepTable {
    pub fn row(&self, value: f64, scheme: SchemeId) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value && r.scheme == scheme)
    }

    pub fn to_csv(&self) -> Result<String> {
        if self.rows.is_empty() {
            return Err(Error::EmptyTable);
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| Error::Parse(e.to_string()))?;
        if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
            return Err(Error::Parse(format!("unexpected header {header:?}")));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<SweepRow>, _>>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        Ok(SweepTable { rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_csv()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Writes `table` to `path`; an empty table is an error.
pub fn emit_csv(table: &SweepTable, path: impl AsRef<Path>) -> Result<()> {
    table.write_csv(path)
}

/// Channel seed of realization `r`: the first word of ChaCha8 stream `r`
/// keyed by the master seed.
pub fn realization_seed(master: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r as u64);
    rng.next_u64()
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub table: SweepTable,
    /// Every run in (value, realization, scheme) order.
    pub runs: Vec<RunResult>,
}

/// Averages runs into one row per (value, scheme), in sweep order.
pub fn aggregate(spec: &SweepSpec, runs: &[RunResult]) -> SweepTable {
    let mut rows = Vec::new();
    for &value in &spec.values {
        for &scheme in &spec.schemes {
            let cell: Vec<&RunResult> = runs.iter().filter(|r| r.value == value && r.scheme == scheme).collect();
            let feasible: Vec<f64> = cell.iter().filter(|r| r.feasible).map(|r| r.objective_w).collect();
            let n = cell.len().max(1) as f64;
            let avg_power_dbm = if feasible.is_empty() {
                f64::NAN
            } else {
                w_to_dbm(feasible.iter().sum::<f64>() / feasible.len() as f64)
            };
            rows.push(SweepRow {
                axis: spec.axis,
                value,
                scheme,
                avg_power_dbm,
                feasible_count: feasible.len(),
                infeasible_count: cell.len() - feasible.len(),
                avg_iters: cell.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
                avg_walltime_s: cell.iter().map(|r| r.walltime_s).sum::<f64>() / n,
            });
        }
    }
    SweepTable { rows }
}

/// Runs every scheme on every realization at every sweep value.
pub fn run_sweep(spec: &SweepSpec, cfg: &SystemConfig, seed: u64) -> Result<SweepOutput> {
    spec.validate(cfg)?;
    let base = cfg.clone().with_deadlines(spec.scenario.deadlines.clone());
    base.validate()?;
    let mut tasks = Vec::new();
    for (vi, &value) in spec.values.iter().enumerate() {
        for r in 0..spec.realizations {
            for &scheme in &spec.schemes {
                tasks.push((vi, value, r, scheme));
            }
        }
    }
    let runs = tasks
        .par_iter()
        .map(|&(_, value, r, scheme)| -> Result<RunResult> {
            let cfg = spec.axis.apply(&base, value);
            cfg.validate()?;
            let seed = realization_seed(seed, r);
            let real = draw_realization(&cfg, seed)?;
            let start = Instant::now();
            let run = run_scheme(scheme, &cfg, &real, &spec.sca)?;
            let walltime_s = if spec.timing { start.elapsed().as_secs_f64() } else { 0.0 };
            Ok(RunResult {
                scheme,
                value,
                seed,
                objective_w: run.objective_w,
                feasible: run.feasible(),
                iterations: run.iterations,
                walltime_s,
                masks_respected: problem::masks_respected(&run.allocation, &cfg),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepOutput {
        table: aggregate(spec, &runs),
        runs,
    })
}
