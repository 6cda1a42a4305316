mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use tinyppg::Error;

use args::{Cli, Command};

/// 1 for bad input, missing files or unusable models; 2 for bad settings.
fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Prune(a) => commands::prune(a),
        Command::Finetune(a) => commands::finetune_cmd(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::ExportEmbeddings(a) => commands::export(a),
        Command::PlanMemory(a) => commands::plan(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
