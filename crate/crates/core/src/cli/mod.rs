//! Command-line front end: `train`, `eval`, `bench`, `inspect-kernel` and
//! `build-pyramid`.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

pub use config::{BenchConfig, DataConfig, DataSource, FileSpec, OutputConfig, RunConfig};

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for a failure during computation or I/O.
pub const EXIT_RUNTIME: i32 = 1;
/// Exit status for an invalid configuration or command line.
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "SPH3D_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sph3d", version, about = "Spherical-kernel graph convolution on point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Global seed, overriding `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, overriding `run.threads` and SPH3D_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write its checkpoint, metrics and log.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the configured test set or on files.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Point files to evaluate, as `path` or `path:class`.
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<String>,
    },
    /// Time pyramid construction, forward and backward passes.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated cloud sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Timed runs per size.
        #[arg(long)]
        runs: Option<usize>,
        /// Use the parameters of this checkpoint instead of a fresh network.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the bin geometry and learned weights of one convolution layer.
    InspectKernel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layer: String,
    },
    /// Build and dump the graph pyramid of a point file.
    BuildPyramid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated level sizes; the first must equal the point count.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        #[arg(long = "unpool-radii", value_delimiter = ',')]
        unpool_radii: Option<Vec<f64>>,
        #[arg(long)]
        cap: Option<usize>,
        /// Kernel as `n x p x q`, e.g. `8x2x2`.
        #[arg(long)]
        kernel: Option<String>,
        /// Also write one PLY file per level.
        #[arg(long)]
        ply: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common }
            | Command::Eval { common, .. }
            | Command::Bench { common, .. }
            | Command::InspectKernel { common, .. }
            | Command::BuildPyramid { common, .. } => common,
        }
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn configure_threads(flag: Option<usize>, from_config: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config(THREADS_ENV, format!("expected a thread count, got `{v}`")))?,
            ),
            Err(_) => from_config,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        // The global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common().clone();
    let cfg = match &common.config {
        Some(path) => Some(RunConfig::load(path).map_err(|e| match e {
            Error::Io(io) => Error::config("--config", format!("{}: {io}", path.display())),
            other => other,
        })?),
        None => None,
    };
    let cfg = match (cfg, common.seed) {
        (Some(c), Some(s)) => Some(c.with_seed(s)),
        (c, _) => c,
    };
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(Error::config("--threads", "must be at least 1"));
        }
    }
    configure_threads(common.threads, cfg.as_ref().and_then(|c| c.threads))?;
    let need = |what: &str| {
        cfg.clone()
            .ok_or_else(|| Error::config("--config", format!("`{what}` needs a run configuration")))
    };
    match cli.command {
        Command::Train { .. } => commands::train(&need("train")?, &common),
        Command::Eval { checkpoint, inputs, .. } => commands::eval(cfg.as_ref(), &common, &checkpoint, &inputs),
        Command::Bench {
            sizes,
            runs,
            checkpoint,
            ..
        } => {
            let mut c = need("bench")?;
            if let Some(s) = sizes {
                if s.is_empty() || s.iter().any(|&m| m < crate::data::MIN_POINTS) {
                    return Err(Error::config("--sizes", format!("sizes must be at least {}", crate::data::MIN_POINTS)));
                }
                c.bench.sizes = s;
            }
            if let Some(r) = runs {
                if r < 5 {
                    return Err(Error::config("--runs", "at least 5 timed runs are required"));
                }
                c.bench.runs = r;
            }
            commands::bench(&c, &common, checkpoint.as_deref())
        }
        Command::InspectKernel { checkpoint, layer, .. } => commands::inspect_kernel(&common, &checkpoint, &layer),
        Command::BuildPyramid {
            input,
            levels,
            radii,
            unpool_radii,
            cap,
            kernel,
            ply,
            ..
        } => commands::build_pyramid_cmd(
            cfg.as_ref(),
            &common,
            commands::PyramidArgs {
                input,
                levels,
                radii,
                unpool_radii,
                cap,
                kernel,
                ply,
            },
        ),
    }
}
