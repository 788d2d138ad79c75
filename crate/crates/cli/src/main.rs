//! `ltiv`: batch front end for decomposition, kernel and pipeline runs.

mod commands;
mod failure;
mod manifest;
mod plot;

use clap::{Args, Parser, Subcommand, ValueEnum};
use failure::Failure;
use manifest::RunManifest;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "ltiv",
    version,
    about = "Decentralized viability analysis for LTI systems"
)]
struct Cli {
    /// Caps the number of worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the block-triangularizing transformation of a system.
    Decompose(DecomposeArgs),
    /// Viability or invariance kernel of a single subsystem.
    Kernel(KernelArgs),
    /// Decompose, run both subspace kernels and assemble the product.
    Pipeline(PipelineArgs),
    /// Render grid dumps or delta sweeps as SVG and CSV.
    Plot(PlotArgs),
    /// Print the JSON schema of pipeline configurations.
    Schema(PrintArgs),
    /// Print a bundled pipeline configuration (cart, sixd, ex4d).
    Preset(PresetArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for randomized checks; recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Shift parameter: a number or `auto`.
    #[arg(long)]
    pub delta: Option<String>,
    /// Use the classical transformation instead of the shifted one.
    #[arg(long)]
    pub standard: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Viab,
    Inv,
}

#[derive(Args, Debug)]
pub struct KernelArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Overrides the number of steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Also run the full-order kernel and compare.
    #[arg(long)]
    pub compare: bool,
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub standard: bool,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// A `.grid` dump or a delta-sweep `.csv`.
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `X,Y` axes, optionally followed by `:AXIS=VALUE,...` for the fixed axes.
    #[arg(long)]
    pub slice: Option<String>,
}

#[derive(Args, Debug)]
pub struct PrintArgs {
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PresetArgs {
    pub name: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return Failure::usage(e.to_string().trim_end()).report();
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            return Failure::usage(format!("cannot configure thread pool: {e}")).report();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = cli.threads;
    match cli.command {
        Command::Decompose(a) => with_manifest("decompose", &a.run.clone(), threads, |m| {
            commands::decompose(&a, m)
        }),
        Command::Kernel(a) => with_manifest("kernel", &a.run.clone(), threads, |m| {
            commands::kernel(&a, m)
        }),
        Command::Pipeline(a) => with_manifest("pipeline", &a.run.clone(), threads, |m| {
            commands::pipeline(&a, m)
        }),
        Command::Plot(a) => plot::run(&a),
        Command::Schema(a) => {
            commands::print_json(&lti_viab::config::pipeline_schema(), a.out.as_deref())
        }
        Command::Preset(a) => {
            let cfg = lti_viab::config::preset(&a.name).map_err(Failure::from)?;
            let v =
                serde_json::to_value(cfg).map_err(|e| Failure::from(lti_viab::Error::from(e)))?;
            commands::print_json(&v, a.out.as_deref())
        }
    }
}

/// Runs a command and writes exactly one manifest, on success or failure.
fn with_manifest(
    command: &str,
    run: &RunArgs,
    threads: Option<usize>,
    f: impl FnOnce(&mut RunManifest) -> Result<(), Failure>,
) -> Result<(), Failure> {
    let mut m = RunManifest::start(command, run, threads);
    std::fs::create_dir_all(&run.out).map_err(|e| Failure::from(lti_viab::Error::from(e)))?;
    let result = f(&mut m);
    m.finish(result.as_ref().err());
    m.write(&run.out)?;
    result
}
