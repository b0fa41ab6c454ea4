//! `safesim` command line: generate traces, fit latency models, build plan
//! stores, run policies, and compare the resulting reports.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ModeChoice, PolicyChoice};
use config::RunConfig;
use safesim_core::error::Error;

#[derive(Parser)]
#[command(
    name = "safesim",
    version,
    about = "Safety-score driven AV computing-system simulator"
)]
struct Cli {
    /// Run configuration JSON; built-in defaults apply when absent.
    #[arg(long, global = true, env = "SAFESIM_CONFIG")]
    config: Option<PathBuf>,

    /// Suppress provenance headers for byte-stable outputs.
    #[arg(long, global = true, env = "SAFESIM_NO_HEADER")]
    no_header: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic frame trace (and optionally observed samples).
    Gen {
        #[arg(long, env = "SAFESIM_FRAMES")]
        frames: Option<u64>,
        #[arg(long, env = "SAFESIM_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "SAFESIM_OUT")]
        out: PathBuf,
        /// Also write (density, latencies, response) samples here.
        #[arg(long)]
        samples_out: Option<PathBuf>,
    },
    /// Fit baseline-latency and accumulation models from samples.
    Fit {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, env = "SAFESIM_RIDGE")]
        ridge: Option<f64>,
        /// Fraction of trailing samples held out for validation.
        #[arg(long, default_value_t = 0.0)]
        holdout: f64,
        #[arg(long, env = "SAFESIM_OUT")]
        out: PathBuf,
    },
    /// Offline planning: exhaustive plan search and clustering.
    Plan {
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, env = "SAFESIM_H")]
        h: Option<u32>,
        /// Keep every k-th frame as a planning sample.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, env = "SAFESIM_OUT")]
        out: PathBuf,
    },
    /// Simulate the trace under a policy and write the report.
    Run {
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, env = "SAFESIM_POLICY")]
        policy: PolicyChoice,
        /// Cluster store (required for --policy managed).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Monitor threshold override for managed runs.
        #[arg(long, env = "SAFESIM_H")]
        h: Option<u32>,
        #[arg(long)]
        initial_cluster: Option<usize>,
        #[arg(long, env = "SAFESIM_OUT")]
        out: PathBuf,
        /// Also write per-frame rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rank reports per metric and write the normalized table.
    Compare {
        #[arg(long, env = "SAFESIM_OUT")]
        out: PathBuf,
        /// Report JSON files to compare.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Emit (t, score) curve points for plotting.
    Curve {
        /// AV speed in m/s.
        #[arg(long)]
        v: f64,
        /// AV max speed-up acceleration in m/s^2.
        #[arg(long, default_value_t = 2.0)]
        a_accel: f64,
        /// AV min braking acceleration in m/s^2.
        #[arg(long, default_value_t = 4.0)]
        a_brake: f64,
        /// Current distance to the obstacle-of-attention in meters.
        #[arg(long)]
        d: f64,
        #[arg(long, value_enum)]
        mode: Option<ModeChoice>,
        #[arg(long, default_value_t = 8.0)]
        t_max: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, env = "SAFESIM_OUT")]
        out: PathBuf,
    },
}

/// 2 for usage/config problems, 3 for data problems.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidRoi(_)
        | Error::NonPositiveBraking(_)
        | Error::AlreadyUnsafe { .. }
        | Error::EmptySamples
        | Error::EmptyPlanSpace
        | Error::EmptyStore
        | Error::EmptyCriticalSet
        | Error::PrioritySpaceTooLarge { .. }
        | Error::TooFewSamples(_)
        | Error::InsufficientData(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = (|| -> safesim_core::Result<()> {
        let cfg = RunConfig::load(cli.config.as_deref())?;
        match cli.cmd {
            Cmd::Gen {
                frames,
                seed,
                out,
                samples_out,
            } => commands::cmd_gen(
                &cfg,
                frames,
                seed,
                &out,
                samples_out.as_deref(),
                cli.no_header,
            ),
            Cmd::Fit {
                samples,
                ridge,
                holdout,
                out,
            } => commands::cmd_fit(&cfg, samples, ridge, holdout, &out, cli.no_header),
            Cmd::Plan {
                trace,
                model,
                h,
                stride,
                out,
            } => commands::cmd_plan(&cfg, trace, model, h, stride, &out, cli.no_header),
            Cmd::Run {
                trace,
                model,
                policy,
                store,
                h,
                initial_cluster,
                out,
                csv,
            } => commands::cmd_run(
                &cfg,
                trace,
                model,
                policy,
                store,
                h,
                initial_cluster,
                &out,
                csv.as_deref(),
                cli.no_header,
            ),
            Cmd::Compare { out, reports } => commands::cmd_compare(&reports, &out, cli.no_header),
            Cmd::Curve {
                v,
                a_accel,
                a_brake,
                d,
                mode,
                t_max,
                step,
                out,
            } => commands::cmd_curve(
                &cfg,
                v,
                a_accel,
                a_brake,
                d,
                mode,
                t_max,
                step,
                &out,
                cli.no_header,
            ),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
