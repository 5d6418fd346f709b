//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lcn4_core::config::{help_table, parse_override, Profile, RunConfig};
use serde_json::Value;

use crate::failure::{Failure, Outcome};

fn keys_help() -> String {
    format!(
        "Configuration keys (set with --set KEY=VALUE or a JSON --config file):\n\n{}",
        help_table()
    )
}

#[derive(Debug, Parser)]
#[command(
    name = "lcn4",
    version,
    about = "Train, evaluate and ablate location-aware constellation networks",
    after_help = keys_help()
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network, then evaluate it on the novel split.
    #[command(after_help = keys_help())]
    Train(TrainArgs),
    /// Evaluate a checkpoint with episodic few-shot tasks.
    #[command(after_help = keys_help())]
    Eval(EvalArgs),
    /// Train and evaluate a family of ablated configurations.
    #[command(after_help = keys_help())]
    Ablate(AblateArgs),
    /// Write the generated dataset as a class-per-directory image tree.
    #[command(after_help = keys_help())]
    Synth(SynthArgs),
    /// Render positional encodings as one greyscale image per channel.
    EncodeDemo(DemoArgs),
}

/// Flags shared by every command that resolves a run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON object of configuration keys applied over the profile defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in defaults: `desk` (laptop scale) or `paper` (full scale).
    #[arg(long, value_parser = parse_profile)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Classes per episode (evaluation; training too for `train`/`ablate`).
    #[arg(long)]
    pub way: Option<usize>,
    /// Support images per class (evaluation; training too for `train`/`ablate`).
    #[arg(long)]
    pub shot: Option<usize>,
    /// Query images per class at evaluation.
    #[arg(long)]
    pub query: Option<usize>,
    /// Episodes per epoch (training for `train`/`ablate`, evaluation for `eval`).
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Epochs (training for `train`/`ablate`, evaluation for `eval`).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Similarity metric: `cosine` or `bcd` (Bray-Curtis).
    #[arg(long)]
    pub metric: Option<String>,
    /// Any configuration key, as KEY=VALUE with a JSON or bare-string value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Output directory (default: a named directory under the run root).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    pub force: bool,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    match s {
        "desk" => Ok(Profile::Desk),
        "paper" => Ok(Profile::Paper),
        other => Err(format!("unknown profile {other:?} (expected desk or paper)")),
    }
}

/// Which settings the episode and epoch flags address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Eval,
}

impl ConfigArgs {
    /// `--set` pairs followed by the dedicated flags, in resolution order.
    pub fn overrides(&self, role: Role) -> Outcome<Vec<(String, Value)>> {
        let mut out = Vec::new();
        for text in &self.sets {
            out.push(parse_override(text)?);
        }
        let mut push = |key: &str, value: Value| out.push((key.to_string(), value));
        if let Some(seed) = self.seed {
            push("seed", seed.into());
        }
        if let Some(way) = self.way {
            push("way", way.into());
            if role == Role::Train {
                push("train_way", way.into());
            }
        }
        if let Some(shot) = self.shot {
            push("shot", shot.into());
            if role == Role::Train {
                push("train_shot", shot.into());
            }
        }
        if let Some(query) = self.query {
            push("query", query.into());
        }
        let (episodes, epochs) = match role {
            Role::Train => ("episodes_per_epoch", "epochs"),
            Role::Eval => ("eval_episodes", "eval_epochs"),
        };
        if let Some(n) = self.episodes {
            push(episodes, n.into());
        }
        if let Some(n) = self.epochs {
            push(epochs, n.into());
        }
        if let Some(metric) = &self.metric {
            push("metric", Value::String(metric.clone()));
        }
        Ok(out)
    }

    pub fn resolve(&self, role: Role) -> Outcome<RunConfig> {
        let overrides = self.overrides(role)?;
        Ok(RunConfig::resolve(
            self.profile,
            self.config.as_deref(),
            &overrides,
        )?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE", required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Embed each image by its true class instead of a network (harness check).
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    /// Split to sample episodes from: base, val or novel.
    #[arg(long, default_value = "novel")]
    pub split: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Clustering-module toggles: baseline, +grid, +frequency, full.
    Table2,
    /// Module placement: stems and constellation blocks removed (M3–M8).
    Table3,
    /// Similarity branch subsets under both metrics (one trained model).
    Table6,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Row family to run. Without one, the toggles define a single row.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Change applied to every row: nfc, cfc, fdc, stem1_lafcm, stem2_lafcm,
    /// constell1, constell2 (on/off), branches (e.g. 1+2), metric.
    #[arg(long = "toggle", value_name = "KEY=VALUE")]
    pub toggles: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncodingKind {
    /// Grid coordinates added to feature maps.
    Grid,
    /// Fixed two-dimensional sine-cosine encoding.
    Sincos,
    /// Frequency encoding of a distance map.
    Fdc,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[arg(long, value_enum)]
    pub encoding: EncodingKind,
    /// Map shape as H,W,C.
    #[arg(long, default_value = "8,8,4")]
    pub shape: String,
    /// Fourier terms for `fdc` (default: C).
    #[arg(long)]
    pub fourier: Option<usize>,
    /// Phase amplitude for `fdc`.
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Constant distance value fed to `fdc`.
    #[arg(long, default_value_t = 1.0)]
    pub fill: f64,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

impl DemoArgs {
    pub fn dims(&self) -> Outcome<[usize; 3]> {
        let parts: Vec<usize> = self
            .shape
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| Failure::config(format!("shape {:?} is not H,W,C", self.shape)))?;
        match parts[..] {
            [h, w, c] if h > 0 && w > 0 && c > 0 => Ok([h, w, c]),
            _ => Err(Failure::config(format!(
                "shape {:?} must be three positive integers H,W,C",
                self.shape
            ))),
        }
    }
}
