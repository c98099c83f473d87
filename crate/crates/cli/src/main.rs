//! `sirep`: streaming repetition counting, cost accounting, training and
//! dataset tooling from the command line.
//!
//! Results are JSON lines on stdout; diagnostics go to stderr. Exit codes:
//! 0 success, 1 invalid input or configuration, 2 I/O or malformed data,
//! 3 numeric failure.

mod commands;
mod input;
mod net;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sirep::Error;

use commands::*;

#[derive(Parser, Debug)]
#[command(name = "sirep", version, about = "Streaming repetition counting with temporally inflated networks")]
struct Cli {
    /// Also print a human-readable table (cost, eval, manifest-validate).
    #[arg(long, global = true)]
    table: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Count repetitions over a frame stream, one output line per network output.
    StreamCount(StreamCountArgs),
    /// Offline class probabilities for a whole clip.
    Infer(InferArgs),
    /// Per-layer multiply-accumulate and parameter counts.
    Cost(CostArgs),
    /// Train a counting network and write a checkpoint.
    Train(TrainArgs),
    /// Count-error of a checkpoint on held-out videos.
    Eval(EvalArgs),
    /// Check a dataset manifest and summarize its splits.
    ManifestValidate(ManifestValidateArgs),
    /// Draw a per-class subset of the training split.
    FewshotSample(FewshotArgs),
    /// Pose layout mapping, adjacency and augmentation.
    #[command(subcommand)]
    Pose(PoseCommand),
    /// Turn an event track into per-step labels.
    Densify(DensifyArgs),
    /// Count repetitions in a label or probability sequence.
    DecodeCount(DecodeArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Contract(_) | Error::Config(_) | Error::Validation(_) => 1,
        Error::Io(_) | Error::Json(_) => 2,
        Error::Numeric { .. } => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::StreamCount(a) => stream_count(a),
        Command::Infer(a) => infer(a),
        Command::Cost(a) => cost(a, cli.table),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a, cli.table),
        Command::ManifestValidate(a) => manifest_validate(a, cli.table),
        Command::FewshotSample(a) => fewshot_sample(a),
        Command::Pose(c) => pose(c),
        Command::Densify(a) => densify_cmd(a),
        Command::DecodeCount(a) => decode_count(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
