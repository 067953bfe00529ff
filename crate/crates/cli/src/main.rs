//! `ctxnet`: train, evaluate and apply the contextual hyperspectral CNN.
//!
//! Exit status is 0 when every output was written, 2 when an input file is
//! missing or unreadable, and 1 for any other failure. A failing command
//! leaves no partial outputs behind.

mod artifacts;
mod commands;
mod config;

use std::io::ErrorKind;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ctxnet", version, about = "Contextual CNN for hyperspectral image classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert an ENVI cube or class raster to the native HSIC / HSIL format.
    Convert(commands::ConvertArgs),
    /// Write a synthetic scene with a matching experiment configuration.
    Synth(commands::SynthArgs),
    /// Train on one random partition and evaluate on its test pixels.
    Train(commands::RunArgs),
    /// Train and evaluate over repeated random partitions.
    Protocol(commands::ProtocolArgs),
    /// Run the partition protocol for each value of one architecture setting.
    Sweep(commands::SweepArgs),
    /// Classify every pixel of a cube with trained weights.
    Classify(commands::ClassifyArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let unreadable = |kind: ErrorKind| matches!(kind, ErrorKind::NotFound | ErrorKind::PermissionDenied);
    for cause in err.chain() {
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if unreadable(io.kind()) {
                return 2;
            }
        }
        match cause.downcast_ref::<ctxnet::Error>() {
            Some(ctxnet::Error::File { source, .. }) | Some(ctxnet::Error::Io(source)) if unreadable(source.kind()) => {
                return 2
            }
            _ => {}
        }
    }
    1
}

/// The cause chain, skipping causes whose text the previous message
/// already includes.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert(a) => commands::convert(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Protocol(a) => commands::protocol(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Classify(a) => commands::classify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", message(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
