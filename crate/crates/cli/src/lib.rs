//! Command-line front end: configuration, dataset manifests, PNG I/O, the
//! synthetic fixture writer and the four subcommands.

use std::io::Write;

use clap::{Parser, Subcommand};

pub mod config;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod io;
pub mod manifest;
pub mod synth;

use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "relpose", version, about = "Relative rotation between two views of an object")]
pub struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the rotation from a reference view to a query view.
    Estimate(estimate::EstimateArgs),
    /// Run the estimator over sampled pairs of a manifest and score it.
    Evaluate(evaluate::EvaluateArgs),
    /// Write seeded synthetic scenes and their manifest.
    Synth(synth::SynthArgs),
    /// Write the reference mesh of one view as PLY.
    ExportMesh(estimate::ExportMeshArgs),
}

/// Runs a parsed command, printing results to `out`. Returns the exit code
/// for runs that finish with partial failures.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let w = |r: std::io::Result<()>| r.map_err(|e| CliError::io("<stdout>", e));
    match &cli.command {
        Command::Estimate(args) => {
            let res = estimate::run_estimate(args)?;
            w(estimate::print_estimate(&res, out))?;
            Ok(0)
        }
        Command::Evaluate(args) => {
            let res = evaluate::evaluate(args)?;
            w(out.write_all(evaluate::summary(&res).as_bytes()))?;
            Ok(evaluate::exit_code(&res))
        }
        Command::Synth(args) => {
            let path = synth::synth(args)?;
            w(writeln!(out, "{}", path.display()))?;
            Ok(0)
        }
        Command::ExportMesh(args) => {
            let (v, t) = estimate::export_mesh(args)?;
            w(writeln!(out, "{}: {v} vertices, {t} triangles", args.out.display()))?;
            Ok(0)
        }
    }
}
