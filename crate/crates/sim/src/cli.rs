use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dersec_core::engine::{abstract_consensus_mode, run_scenario, sweep_point, Scenario, ScenarioConfig, SimError, SweepPoint};
use dersec_core::metrics::{abstract_report, convergence_report, ConvergenceReport};
use dersec_core::scenarios;

use crate::config::{self, ConfigError};
use crate::io::{self, IoError, Summary};

#[derive(Debug, Parser)]
#[command(name = "dersec", version, about = "Networked DER secondary control under communication attacks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write trace.csv and summary.json.
    Run {
        /// Scenario file or builtin:NAME.
        scenario: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable the compensation layer regardless of the scenario.
        #[arg(long)]
        no_mca: bool,
        /// Also write packets.csv.
        #[arg(long)]
        packets: bool,
        /// Also write mca.csv.
        #[arg(long)]
        mca_trace: bool,
    },
    /// Classify convergence for each injected delay.
    SweepDelay {
        scenario: String,
        /// Comma-separated delays, s.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        taus: Vec<f64>,
        /// Write sweep.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run with and without the compensation layer and print both reports.
    Compare { scenario: String },
    /// Print the built-in scenarios.
    ListScenarios,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Sim(SimError::Diverged { .. }) => 2,
            _ => 1,
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Run { scenario, out: dir, seed, no_mca, packets, mca_trace } => {
            run(&scenario, &dir, seed, no_mca, packets, mca_trace, out)
        }
        Command::SweepDelay { scenario, taus, out: dir } => sweep(&scenario, &taus, dir.as_deref(), out),
        Command::Compare { scenario } => compare(&scenario, out),
        Command::ListScenarios => {
            for (name, desc) in scenarios::LIST {
                writeln!(out, "{name:<22} {desc}").map_err(stdout_err)?;
            }
            Ok(())
        }
    }
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError::Io(IoError::Io { path: "<stdout>".into(), source: e })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(IoError::Io { path: dir.into(), source: e }))
}

fn plant_overrides(c: &mut ScenarioConfig, seed: Option<u64>, no_mca: bool) {
    if let Some(s) = seed {
        c.seed = s;
    }
    if no_mca {
        c.mca.enabled = false;
    }
}

fn run(
    source: &str,
    dir: &Path,
    seed: Option<u64>,
    no_mca: bool,
    packets: bool,
    mca_trace: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let scenario = config::load(source)?;
    create_dir(dir)?;
    let summary_path = dir.join("summary.json");
    match scenario {
        Scenario::Abstract(c) => {
            if packets || mca_trace || no_mca || seed.is_some() {
                return Err(CliError::Usage("abstract scenarios take no --seed, --no-mca, --packets or --mca-trace".into()));
            }
            let tr = abstract_consensus_mode(&c)?;
            let r = abstract_report(&tr, c.tol);
            io::write_abstract_csv(&tr, &dir.join("trace.csv"))?;
            let s = Summary::abstract_mode(&c.name, &r);
            io::write_json(&s, &summary_path)?;
            print_summary(out, &s)
        }
        Scenario::Plant(mut c) => {
            plant_overrides(&mut c, seed, no_mca);
            c.record.packets |= packets;
            let tr = match run_scenario(&c) {
                Ok(tr) => tr,
                Err(SimError::Diverged { step, agent }) => {
                    let s = Summary::diverged(&c.name, c.seed, c.mca.enabled, step, agent);
                    io::write_json(&s, &summary_path)?;
                    return Err(SimError::Diverged { step, agent }.into());
                }
                Err(e) => return Err(e.into()),
            };
            let r = convergence_report(&tr, &c.convergence).map_err(SimError::from)?;
            io::write_trace_csv(&tr, &dir.join("trace.csv"))?;
            if c.record.packets {
                io::write_packets_csv(&tr, &dir.join("packets.csv"))?;
            }
            if mca_trace {
                io::write_mca_csv(&tr, &dir.join("mca.csv"))?;
            }
            let s = Summary::plant(&c.name, c.seed, &tr, &r);
            io::write_json(&s, &summary_path)?;
            print_summary(out, &s)
        }
    }
}

fn fmt_time(t: Option<f64>) -> String {
    t.map_or_else(|| "-".into(), |t| format!("{t:.3}"))
}

fn print_summary(out: &mut dyn Write, s: &Summary) -> Result<(), CliError> {
    writeln!(
        out,
        "{}: converged={} conv_time={} triggers={}",
        s.scenario,
        s.converged,
        fmt_time(s.conv_time),
        s.trigger_count
    )
    .map_err(stdout_err)
}

/// Runs every delay on its own thread.
pub fn sweep_parallel(scenario: &Scenario, taus: &[f64]) -> Result<Vec<SweepPoint>, SimError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = taus.iter().map(|&tau| s.spawn(move || sweep_point(scenario, tau))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    })
}

fn sweep(source: &str, taus: &[f64], dir: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(t) = taus.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(CliError::Usage(format!("--taus: {t} is not a valid delay")));
    }
    let scenario = config::load(source)?;
    let points = sweep_parallel(&scenario, taus)?;
    writeln!(out, "{:>10} {:>9} {:>10}", "tau", "converged", "conv_time").map_err(stdout_err)?;
    for p in &points {
        writeln!(out, "{:>10.4} {:>9} {:>10}", p.tau, p.converged, fmt_time(p.conv_time)).map_err(stdout_err)?;
    }
    if let Some(dir) = dir {
        create_dir(dir)?;
        io::write_sweep_csv(&points, &dir.join("sweep.csv"))?;
    }
    Ok(())
}

/// Outcome of one side of a comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Side {
    Report(ConvergenceReport, u64),
    Diverged { step: u64, agent: usize },
}

pub fn compare_runs(c: &ScenarioConfig) -> Result<[Side; 2], SimError> {
    let side = |enabled: bool| -> Result<Side, SimError> {
        let mut c = c.clone();
        c.mca.enabled = enabled;
        match run_scenario(&c) {
            Ok(tr) => Ok(Side::Report(convergence_report(&tr, &c.convergence)?, tr.trigger_count())),
            Err(SimError::Diverged { step, agent }) => Ok(Side::Diverged { step, agent }),
            Err(e) => Err(e),
        }
    };
    let (a, b) = std::thread::scope(|s| {
        let a = s.spawn(|| side(false));
        let b = side(true);
        (a.join().expect("compare worker panicked"), b)
    });
    Ok([a?, b?])
}

fn compare(source: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let Scenario::Plant(c) = config::load(source)? else {
        return Err(CliError::Usage("compare needs a plant scenario".into()));
    };
    let sides = compare_runs(&c)?;
    writeln!(out, "{}", c.name).map_err(stdout_err)?;
    for (label, side) in ["without mca", "with mca"].iter().zip(&sides) {
        let line = match side {
            Side::Report(r, triggers) => format!(
                "{label:<12} converged={} conv_time={} freq_err={:.3e} p_spread={:.3e} q_spread={:.3e} triggers={triggers}",
                r.converged,
                fmt_time(r.conv_time),
                r.freq_error_final,
                r.p_share_spread_final,
                r.q_share_spread_final
            ),
            Side::Diverged { step, agent } => format!("{label:<12} diverged at step {step} (agent {agent})"),
        };
        writeln!(out, "{line}").map_err(stdout_err)?;
    }
    if let Some(Side::Diverged { step, agent }) = sides.iter().find(|s| matches!(s, Side::Diverged { .. })) {
        return Err(SimError::Diverged { step: *step, agent: *agent }.into());
    }
    Ok(())
}
