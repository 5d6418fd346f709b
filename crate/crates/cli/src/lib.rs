//! Command-line front end: configuration resolution, run directories and
//! the `train`, `eval`, `ablate`, `synth` and `encode-demo` commands.

pub mod ablate;
pub mod args;
pub mod commands;
pub mod demo;
pub mod failure;
pub mod run;

pub use args::Cli;
pub use failure::{Failure, Outcome, Status};

use args::Command;

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Outcome<()> {
    match cli.command {
        Command::Train(a) => commands::cmd_train(&a).map(drop),
        Command::Eval(a) => commands::cmd_eval(&a).map(drop),
        Command::Ablate(a) => ablate::cmd_ablate(&a).map(drop),
        Command::Synth(a) => commands::cmd_synth(&a).map(drop),
        Command::EncodeDemo(a) => demo::cmd_encode_demo(&a).map(drop),
    }
}
