//! Experiment command line. Subcommands cover the whole pipeline: dataset
//! generation, source pretraining, target adaptation, ablation grids,
//! spectral gap tables, gradient validation, and a blur-pipeline debug dump.
//!
//! Exit codes: 0 success, 2 configuration error, 3 io error, 4 numerical
//! failure. Errors print as one line, `error[<category>]: <message>`.
//! `SM_LOG={error|info|debug}` controls stderr logging.

mod commands;
mod config;
mod container;
mod data;
mod error;
mod gradcheck_cmd;
mod model;
mod report;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use stablemind_core::harness::{Grid, Toggles};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Parser)]
#[command(
    name = "stablemind",
    version,
    about = "Deterministic source-free brain-decoder adaptation experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-subject dataset directory.
    GenData {
        /// Run configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed override (world and training).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain per-source ridge mappers and the shared encoder.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory from gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Training-seed override; the world seed stays with the dataset.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt to the held-out target subject and evaluate retrieval.
    Adapt {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Cross-subject ridge reuse (prior fusion + distillation).
        #[arg(long, value_enum, default_value_t = Switch::On)]
        csrr: Switch,
        /// Frequency-domain feature augmentation.
        #[arg(long, value_enum, default_value_t = Switch::On)]
        fba: Switch,
        /// Difficulty-aware image blur supervision.
        #[arg(long, value_enum, default_value_t = Switch::On)]
        dib: Switch,
        /// Reuse a pretrained model directory instead of pretraining inline.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run one configuration grid across seeds and aggregate.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// One of: tab3, tab5, tab6, blur, fba-pos.
        #[arg(long)]
        grid: String,
        /// Comma-separated training seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Pairwise spectral gap table from per-subject embedding containers.
    SpectralReport {
        /// At least two embedding container files.
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference validation of every analytic gradient path.
    GradCheck {
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report as JSON into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Negative control: corrupt one analytic gradient and expect failure.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Write blur masks and supervision images as PPM for inspection.
    DumpBlur {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Cmd) -> CliResult<()> {
    match cmd {
        Cmd::GenData { config, seed, out } => {
            commands::cmd_gen_data(config.as_deref(), seed, &out)
        }
        Cmd::Pretrain {
            config,
            data,
            seed,
            out,
        } => commands::cmd_pretrain(config.as_deref(), &data, seed, &out),
        Cmd::Adapt {
            config,
            data,
            seed,
            out,
            csrr,
            fba,
            dib,
            model,
        } => commands::cmd_adapt(
            config.as_deref(),
            &data,
            seed,
            &out,
            Toggles {
                csrr: csrr.on(),
                fba: fba.on(),
                dib: dib.on(),
            },
            model.as_deref(),
        ),
        Cmd::Ablate {
            config,
            data,
            seed,
            out,
            grid,
            seeds,
            threads,
        } => {
            let grid = Grid::from_str(&grid).map_err(CliError::from)?;
            commands::cmd_ablate(config.as_deref(), &data, seed, &out, grid, seeds, threads)
        }
        Cmd::SpectralReport { files, out } => commands::cmd_spectral_report(&files, &out),
        Cmd::GradCheck { seed, out, corrupt } => {
            gradcheck_cmd::cmd_grad_check(seed, out.as_deref(), corrupt)
        }
        Cmd::DumpBlur { config, seed, out } => {
            commands::cmd_dump_blur(config.as_deref(), seed, &out)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SM_LOG", "info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error[{}]: {e}", e.category());
        std::process::exit(e.exit_code());
    }
}
