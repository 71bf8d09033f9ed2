use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Parser;
use urllc_mec::sweep::{run_sweep, DelayScenario, SweepAxis, SweepSpec};
use urllc_mec::{SchemeId, SystemConfig};

/// Sub-carriers per link and realizations at desk and full scale.
const DESK: (usize, usize) = (8, 20);
const FULL: (usize, usize) = (32, 100);

#[derive(Parser, Debug)]
#[command(name = "urllc-mec", version, about = "Monte Carlo sweeps of the uplink/downlink allocation schemes")]
struct Args {
    /// TOML system configuration; the built-in reference system if omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Users of the built-in reference system.
    #[arg(long, default_value_t = 4, conflicts_with = "config")]
    users: usize,

    /// Swept parameter: task_bits or error_prob.
    #[arg(long, default_value = "task_bits")]
    sweep: SweepAxis,

    /// Comma-separated sweep values, ascending.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,

    /// Comma-separated schemes: proposed, sc, fsa, oracle.
    #[arg(long, value_delimiter = ',', default_value = "proposed,sc,fsa")]
    schemes: Vec<SchemeId>,

    /// Channel realizations per sweep value.
    #[arg(long)]
    realizations: Option<usize>,

    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Delay scenario: s0, s1, s0bar, s1bar, or config for the deadlines in
    /// the configuration file.
    #[arg(long)]
    scenario: Option<String>,

    /// Output CSV; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// 32 sub-carriers per link and 100 realizations instead of 8 and 20.
    /// Ignored for the sub-carrier count when a configuration file is given.
    #[arg(long)]
    full_scale: bool,

    /// Write zero wall times so repeated runs give identical files.
    #[arg(long)]
    no_timing: bool,
}

fn default_values(axis: SweepAxis) -> Vec<f64> {
    match axis {
        SweepAxis::TaskBits => vec![80.0, 160.0, 240.0, 320.0],
        SweepAxis::ErrorProb => vec![1e-7, 1e-6, 1e-4, 1e-2],
    }
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let (per_link, realizations) = if args.full_scale { FULL } else { DESK };
    let cfg = match &args.config {
        Some(path) => SystemConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            if args.users == 0 {
                bail!("--users must be at least 1");
            }
            SystemConfig::reference(args.users).with_subcarriers(per_link)
        }
    };
    let scenario = match args.scenario.as_deref() {
        Some("config") => DelayScenario::from_config(&cfg),
        Some(name) => DelayScenario::named(name, &cfg)?,
        None if args.config.is_some() => DelayScenario::from_config(&cfg),
        None => DelayScenario::unrestricted(&cfg),
    };
    let values = args.values.unwrap_or_else(|| default_values(args.sweep));
    let mut spec = SweepSpec::new(args.sweep, values, args.schemes, args.realizations.unwrap_or(realizations), scenario);
    spec.timing = !args.no_timing;

    let out = run_sweep(&spec, &cfg, args.seed).context("sweep failed")?;
    for row in out.table.rows.iter().filter(|r| r.all_infeasible()) {
        eprintln!("warning: {} at {} = {} infeasible on every realization", row.scheme, row.axis, row.value);
    }
    match &args.out {
        Some(path) => out.table.write_csv(path).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(out.table.to_csv()?.as_bytes())?,
    }
    Ok(())
}
