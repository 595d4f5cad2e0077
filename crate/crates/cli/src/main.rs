//! `matcha` command-line tool.

mod args;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use output::Category;

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Tokenize(a) => commands::tokenize(a),
        Command::Train(a) => commands::train(a),
        Command::Score(a) => commands::score_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Attribute(a) => commands::attribute(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = Category::of(&err);
            eprintln!("error ({}): {err:#}", category.name());
            category.exit_code()
        }
    }
}
