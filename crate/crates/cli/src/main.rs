use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;

use args::{Cli, Command};
use zerokey::eval::EvalError;
use zerokey::gateway::GatewayError;
use zerokey::pipeline::PipelineError;

/// Exit status for an error chain: pipeline and evaluation errors carry
/// their own code, anything else is 1.
/// Joins the cause chain, skipping causes the previous message already shows.
fn render_chain(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return p.exit_code() as u8;
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::MeshMismatch(_) => 4,
                EvalError::Gateway(_) => 3,
                EvalError::Pipeline(p) => p.exit_code() as u8,
                EvalError::Io(_) => 1,
                _ => 2,
            };
        }
        if let Some(g) = cause.downcast_ref::<GatewayError>() {
            return match g {
                GatewayError::Catalog(_) | GatewayError::MockConfig(_) => 2,
                _ => 3,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(cli.log_level.as_str())).init();
    let result = match cli.command {
        Command::Detect(a) => commands::detect(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Roundtrip(a) => commands::roundtrip(a),
        Command::RenderDebug(a) => commands::render_debug(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
