use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter};
use serde::Serialize;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use rrqss::sim::{run_batch_traced, validate_against_analytic, TrainConfig, ValidationReport};
use rrqss::{Geometry, ProtocolParams};
use rrqss_cli::check::run_check;
use rrqss_cli::config::{Corruption, Format, Overrides, RunConfig};
use rrqss_cli::output::{emit_records, emit_report};
use rrqss_cli::sweep::{run_sweep, Preset};

#[derive(Parser)]
#[command(name = "rrqss", version, about = "Key-rate sweeps, optimization and validation for round-robin secret sharing")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Total distance in km (single point).
    #[arg(long, global = true)]
    distance: Option<f64>,
    /// Misalignment error rate.
    #[arg(long, global = true)]
    ed: Option<f64>,
    /// Sifted block size for finite-size rates.
    #[arg(long = "N", global = true)]
    n: Option<u64>,
    /// Security exponent, failure probability 2^-s.
    #[arg(long, global = true)]
    s: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
    /// Omit the generation-time line so reruns are byte-identical.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Progress on standard error; repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Optimized rates over the configured distance grid.
    Sweep,
    /// Optimized rates at a single distance.
    Optimize,
    /// Monte-Carlo run compared with the closed-form gain and error rate.
    Simulate {
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long = "L")]
        train_len: Option<u32>,
        #[arg(long)]
        trains: Option<u64>,
        /// Write one JSON line per train to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Limits, simulator agreement and measurement equivalence; exits 1 on failure.
    Check {
        /// Trains per simulator point, 0 to skip the Monte-Carlo checks.
        #[arg(long)]
        trains: Option<u64>,
        /// Simulate with a deliberately wrong parameter.
        #[arg(long, value_enum)]
        corrupt: Option<Corruption>,
    },
    /// Sweep with a preset figure configuration.
    PlotData {
        #[arg(value_enum)]
        preset: Preset,
    },
}

#[derive(Serialize)]
struct SimulateReport {
    config: TrainConfig,
    #[serde(flatten)]
    validation: ValidationReport,
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        distance: common.distance,
        e_d: common.ed,
        n_sifted: common.n,
        s: common.s,
        seed: common.seed,
        out: common.out.clone(),
        format: common.format,
        no_timestamp: common.no_timestamp,
    });
    Ok(cfg)
}

fn report_path(path: Option<PathBuf>) {
    if let Some(p) = path {
        info!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = load(&cli.common)?;
    match cli.cmd {
        Command::Sweep => {
            let recs = run_sweep(&cfg)?;
            report_path(emit_records(&recs, &cfg.output, "sweep")?);
        }
        Command::Optimize => {
            if cfg.sweep.start != cfg.sweep.stop {
                bail!("optimize needs a single distance: pass --distance or set sweep.start = sweep.stop");
            }
            let recs = run_sweep(&cfg)?;
            report_path(emit_records(&recs, &cfg.output, "optimize")?);
        }
        Command::Simulate { mu, train_len, trains, trace } => {
            let sim = &mut cfg.simulate;
            sim.mu = mu.unwrap_or(sim.mu);
            sim.train_len = train_len.unwrap_or(sim.train_len);
            sim.trains = trains.unwrap_or(sim.trains);
            let tc = TrainConfig {
                sys: cfg.system,
                proto: ProtocolParams::new(sim.mu, sim.train_len, 0)?,
                geom: Geometry::new(sim.distance)?,
                trains: sim.trains,
                seed: cfg.seed,
                slotting: sim.slotting,
            };
            if let Some(path) = trace {
                let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                run_batch_traced(&tc, &mut BufWriter::new(f))?;
                info!("wrote trace {}", path.display());
            }
            let validation = validate_against_analytic(&tc)?;
            let pass = validation.pass;
            report_path(emit_report(&SimulateReport { config: tc, validation }, &cfg.output, "simulate")?);
            return Ok(pass);
        }
        Command::Check { trains, corrupt } => {
            if let Some(t) = trains {
                cfg.check.trains = t;
            }
            if corrupt.is_some() {
                cfg.check.corrupt = corrupt;
            }
            let rep = run_check(&cfg)?;
            for c in rep.failed() {
                eprintln!("check failed: {}", c.name);
            }
            report_path(emit_report(&rep, &cfg.output, "check")?);
            return Ok(rep.pass);
        }
        Command::PlotData { preset } => {
            preset.apply(&mut cfg);
            // flags still win over the preset
            let c = &cli.common;
            if c.ed.is_some() || c.n.is_some() || c.distance.is_some() {
                cfg.apply(&Overrides {
                    distance: c.distance,
                    e_d: c.ed,
                    n_sifted: c.n,
                    ..Default::default()
                });
            }
            let recs = run_sweep(&cfg)?;
            report_path(emit_records(&recs, &cfg.output, preset.name())?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
