//! Command-line interface and HTTP service for the database router.

pub mod cli;
pub mod commands;
pub mod engine;
pub mod server;

use std::fmt;

use dbrouter_core::adapter::TrainError;
use dbrouter_core::embedding::EmbedError;
use dbrouter_core::eval::EvalError;
use dbrouter_core::rerank::RerankError;
use dbrouter_core::retrieval::RetrievalError;
use dbrouter_core::schema::SchemaError;
use dbrouter_core::synth::SynthError;

use cli::{Cli, Command};

/// Bad flags or conflicting configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Synth(c) => commands::synth(c),
        Command::Index(c) => commands::index(c),
        Command::Train(a) => commands::train(a),
        Command::Route(a) => commands::route(a),
        Command::Eval(a) => commands::eval(a),
        Command::Experiment(c) => commands::experiment(c),
        Command::Serve(a) => server::serve(a),
    }
}

/// Short machine-readable category of the first typed error in the chain.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return "usage";
        }
        if cause.is::<SchemaError>() {
            return "schema";
        }
        if cause.is::<SynthError>() {
            return "synth";
        }
        if cause.is::<EmbedError>() {
            return "embedding";
        }
        if cause.is::<TrainError>() {
            return "train";
        }
        if cause.is::<RetrievalError>() {
            return "retrieval";
        }
        if cause.is::<RerankError>() {
            return "rerank";
        }
        if cause.is::<EvalError>() {
            return "eval";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "error"
}

/// `error: <kind>: <message>` on a single line.
pub fn error_line(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    format!("error: {}: {}", error_kind(err), msg.replace(['\n', '\r'], " "))
}
