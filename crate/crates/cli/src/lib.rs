//! Command-line front end for the `catseye` marker simulator.

pub mod commands;
pub mod config;
pub mod report;
pub mod svg;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use commands::{Context, Output, Overrides};
use config::SweepAxis;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Physics(#[from] catseye::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Physics(catseye::Error::UnknownPreset(_)) => 2,
            CliError::Physics(_) => 3,
            CliError::Io(_) | CliError::Internal(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sequential,
    Mc,
}

impl From<ModeArg> for catseye::tracer::TraceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sequential => Self::Sequential,
            ModeArg::Mc => Self::NonSequential,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "catseye",
    version,
    about = "Cat's-eye retroreflective marker simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Rays per (entrance angle, distance, source) cell.
    #[arg(long, global = true)]
    pub rays: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Primary output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// SVG plot file.
    #[arg(long, global = true)]
    pub plot: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Paraxial summary and retro mirror radius of one design.
    Paraxial,
    /// Response curves along one design axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: Option<SweepAxis>,
    },
    /// Response curves of two or more designs on a shared bench.
    Compare,
    /// Grid search over mirror distance and aperture.
    Optimize,
    /// Proposed against previous marker on the lab bench.
    Experiment,
    /// Per-ray outcomes of one bundle, tab separated.
    TraceDump {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long)]
        distance: Option<f64>,
        #[arg(long, default_value_t = 0)]
        source: usize,
    },
}

fn write_primary(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            // A closed reader such as `head` is not an error.
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn emit(ctx: &Context, output: Output) -> Result<(), CliError> {
    write_primary(ctx.out_path().as_deref(), &output.primary)?;
    if let (Some(path), Some(svg)) = (ctx.plot_path(), output.plot) {
        std::fs::write(path, svg)?;
    }
    Ok(())
}

fn dispatch(ctx: &Context, command: &Command) -> Result<(), CliError> {
    match command {
        Command::Paraxial => {
            write_primary(ctx.out_path().as_deref(), &commands::cmd_paraxial(ctx)?)
        }
        Command::Sweep { axis } => emit(ctx, commands::cmd_sweep(ctx, *axis)?),
        Command::Compare => emit(ctx, commands::cmd_compare(ctx)?),
        Command::Optimize => {
            write_primary(ctx.out_path().as_deref(), &commands::cmd_optimize(ctx)?)
        }
        Command::Experiment => emit(ctx, commands::cmd_experiment(ctx)?),
        Command::TraceDump {
            theta,
            distance,
            source,
        } => write_primary(
            ctx.out_path().as_deref(),
            &commands::cmd_trace_dump(ctx, *theta, *distance, *source)?,
        ),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => config::load(path)?,
        None => config::RunConfig::default(),
    };
    let overrides = Overrides {
        rays: cli.rays,
        seed: cli.seed,
        mode: cli.mode.map(Into::into),
        out: cli.out.clone(),
        plot: cli.plot.clone(),
        workers: cli.workers,
    };
    let ctx = Context::new(config, overrides);
    match ctx.workers() {
        Some(0) => Err(CliError::Config("workers must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Internal(e.to_string()))?;
            pool.install(|| dispatch(&ctx, &cli.command))
        }
        None => dispatch(&ctx, &cli.command),
    }
}
