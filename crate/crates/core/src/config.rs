//! Flat run configuration: built-in profiles, file and command-line
//! overrides, and conversion into the typed settings of each module.
//!
//! Resolution order is profile defaults, then the config file, then
//! command-line `key=value` overrides. Unknown keys and ill-typed values are
//! configuration errors that name the offending key.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::backbone::NetworkConfig;
use crate::constell::AttentionScale;
use crate::data::{EpisodeSpec, SynthSpec};
use crate::metrics::{BranchWeights, EvalOptions, Metric};
use crate::train::{LrSchedule, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-scale settings of the original training recipe.
    Paper,
    /// Laptop-scale settings that run on the generated dataset.
    #[default]
    Desk,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected paper or desk)"
            ))),
        }
    }
}

/// Every setting of a run, flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,

    pub channels: [usize; 4],
    pub clusters: usize,
    pub heads: usize,
    pub fourier_count: usize,
    pub amplitude: f64,
    pub resolution: usize,
    pub stem1_lafcm: bool,
    pub stem2_lafcm: bool,
    pub constell1: bool,
    pub constell2: bool,
    pub nfc: bool,
    pub cfc: bool,
    pub fdc: bool,
    pub attention_scale: AttentionScale,
    pub centroid_momentum: f64,
    pub soft_temperature: f64,
    pub temperature_init: f64,

    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub train_way: usize,
    pub train_shot: usize,
    pub train_query: usize,
    pub episodes_per_epoch: usize,
    pub epochs: usize,
    pub cls_ratio: f64,
    pub batch_size: usize,
    pub lr_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub val_episodes: usize,
    pub val_query: usize,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Similarity branches used at evaluation, numbered 1–4.
    pub branches: Vec<usize>,
    pub metric: Metric,
    pub eval_episodes: usize,
    pub eval_epochs: usize,

    pub synthetic: bool,
    pub data_root: Option<PathBuf>,
    pub splits_file: Option<PathBuf>,
    pub synth_base: usize,
    pub synth_val: usize,
    pub synth_novel: usize,
    pub synth_per_class: usize,
    pub run_dir: Option<PathBuf>,
}

/// Key, and where its default comes from.
pub const KEYS: &[(&str, &str)] = &[
    ("profile", "built-in defaults to start from: paper or desk"),
    ("seed", "seeds data generation, initialization, sampling"),
    ("channels", "conv channels per block; paper: 64 each"),
    ("clusters", "centroids k per clustering module; paper: 64"),
    ("heads", "attention heads h; paper: 8"),
    ("fourier_count", "Fourier terms N; paper: 64"),
    ("amplitude", "frequency compensation amplitude A; paper: 1"),
    ("resolution", "input side length; paper: 84"),
    ("stem1_lafcm", "clustering module after block 1"),
    ("stem2_lafcm", "clustering module after block 2"),
    ("constell1", "constellation submodule after block 3"),
    ("constell2", "constellation submodule after block 4"),
    ("nfc", "grid coordinate compensation"),
    ("cfc", "cell feature clustering"),
    ("fdc", "frequency distance compensation (off: sine-cosine)"),
    ("attention_scale", "per_head: sqrt(k/h); full: sqrt(k)"),
    ("centroid_momentum", "EMA momentum of the centroid banks"),
    (
        "soft_temperature",
        "temperature of soft k-means assignments",
    ),
    ("temperature_init", "initial learnable logit temperature"),
    ("way", "evaluation classes per episode K; paper: 5"),
    (
        "shot",
        "evaluation support images per class N; paper: 1 or 5",
    ),
    ("query", "evaluation query images per class Q; paper: 15"),
    ("train_way", "training episode classes"),
    ("train_shot", "training episode support images per class"),
    ("train_query", "training episode query images per class"),
    (
        "episodes_per_epoch",
        "episodic steps per epoch; paper: 1000",
    ),
    ("epochs", "training epochs; paper: 60"),
    ("cls_ratio", "classification steps per episodic step"),
    ("batch_size", "classification batch size; paper: 64"),
    (
        "lr_schedule",
        "[[epoch_bound, lr], ...]; paper: 20/0.1, 40/0.06, 60/0.012",
    ),
    ("momentum", "SGD momentum"),
    (
        "weight_decay",
        "L2 weight decay on conv, linear and attention weights",
    ),
    (
        "val_episodes",
        "validation episodes after each epoch (0 disables)",
    ),
    ("val_query", "validation query images per class"),
    ("alpha", "weight of branch 2; paper: 0.75"),
    ("beta", "weight of branch 3; paper: 0.5"),
    ("gamma", "weight of branch 4; paper: 0.25"),
    (
        "branches",
        "similarity branches fused at evaluation, from 1..4",
    ),
    ("metric", "cosine or bcd (Bray-Curtis)"),
    ("eval_episodes", "evaluation episodes per epoch; paper: 800"),
    ("eval_epochs", "evaluation epochs averaged; paper: 10"),
    ("synthetic", "train on the generated dataset"),
    (
        "data_root",
        "directory with one sub-directory of images per class",
    ),
    (
        "splits_file",
        "class<TAB>split lines; default <data_root>/splits.tsv",
    ),
    ("synth_base", "generated base classes"),
    ("synth_val", "generated validation classes"),
    ("synth_novel", "generated novel classes"),
    ("synth_per_class", "generated images per class"),
    (
        "run_dir",
        "output directory (else $LCN4_RUN_DIR/<name> or runs/<name>)",
    ),
];

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn paper() -> Self {
        let net = NetworkConfig::default();
        let weights = BranchWeights::default();
        RunConfig {
            profile: Profile::Paper,
            seed: 0,
            channels: net.channels,
            clusters: net.clusters,
            heads: net.heads,
            fourier_count: net.fourier_count,
            amplitude: net.amplitude,
            resolution: net.resolution,
            stem1_lafcm: net.stem1_lafcm,
            stem2_lafcm: net.stem2_lafcm,
            constell1: net.constell1,
            constell2: net.constell2,
            nfc: net.nfc,
            cfc: net.cfc,
            fdc: net.fdc,
            attention_scale: net.attention_scale,
            centroid_momentum: net.centroid_momentum,
            soft_temperature: net.soft_temperature,
            temperature_init: net.temperature_init,
            way: 5,
            shot: 1,
            query: 15,
            train_way: 5,
            train_shot: 1,
            train_query: 15,
            episodes_per_epoch: 1000,
            epochs: 60,
            cls_ratio: 1.0,
            batch_size: 64,
            lr_schedule: vec![(20, 0.1), (40, 0.06), (60, 0.012)],
            momentum: 0.9,
            weight_decay: 5e-4,
            val_episodes: 100,
            val_query: 15,
            alpha: weights.alpha,
            beta: weights.beta,
            gamma: weights.gamma,
            branches: vec![1, 2, 3, 4],
            metric: Metric::Cosine,
            eval_episodes: 800,
            eval_epochs: 10,
            synthetic: false,
            data_root: None,
            splits_file: None,
            synth_base: 12,
            synth_val: 4,
            synth_novel: 5,
            synth_per_class: 40,
            run_dir: None,
        }
    }

    pub fn desk() -> Self {
        RunConfig {
            profile: Profile::Desk,
            channels: [8, 8, 16, 16],
            clusters: 16,
            heads: 4,
            fourier_count: 16,
            train_query: 1,
            episodes_per_epoch: 200,
            epochs: 10,
            batch_size: 10,
            lr_schedule: vec![(6, 0.05), (8, 0.015), (10, 0.003)],
            val_episodes: 50,
            val_query: 5,
            eval_episodes: 200,
            eval_epochs: 1,
            synthetic: true,
            ..Self::paper()
        }
    }

    /// Resolves a configuration: profile defaults (from `profile`, else the
    /// file's or the overrides' `profile` key, else desk), then `file`, then
    /// `overrides` in order.
    pub fn resolve(
        profile: Option<Profile>,
        file: Option<&Path>,
        overrides: &[(String, Value)],
    ) -> Result<Self> {
        let mut layers: Vec<(String, Value)> = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config file {}: {e}", path.display()))
            })?;
            let value: Value = serde_json::from_str(&text).map_err(|e| {
                Error::Config(format!(
                    "config file {} is not valid JSON: {e}",
                    path.display()
                ))
            })?;
            let Value::Object(map) = value else {
                return Err(Error::Config(format!(
                    "config file {} must hold a single object",
                    path.display()
                )));
            };
            layers.extend(map);
        }
        layers.extend(overrides.iter().cloned());
        let chosen = match profile {
            Some(p) => p,
            None => match layers.iter().rev().find(|(k, _)| k == "profile") {
                Some((_, v)) => serde_json::from_value(v.clone())
                    .map_err(|e| Error::Config(format!("key `profile`: {e}")))?,
                None => Profile::default(),
            },
        };
        let base = RunConfig::profile(chosen);
        let mut map = match serde_json::to_value(&base).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        };
        for (key, value) in layers {
            if !map.contains_key(&key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            check_key(&map, &key, &value)?;
            map.insert(key, value);
        }
        map.insert(
            "profile".into(),
            serde_json::to_value(chosen).expect("profile"),
        );
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        self.network().validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.way < 2 || self.train_way < 2 {
            return bad("way and train_way must be at least 2".into());
        }
        if self.shot == 0 || self.query == 0 || self.train_shot == 0 || self.train_query == 0 {
            return bad("shot, query, train_shot and train_query must be positive".into());
        }
        if self.branches.is_empty() || self.branches.iter().any(|b| !(1..=4).contains(b)) {
            return bad(format!(
                "branches must be a non-empty subset of 1..4, got {:?}",
                self.branches
            ));
        }
        if self.lr_schedule.is_empty() {
            return bad("lr_schedule must not be empty".into());
        }
        if !(self.cls_ratio >= 0.0 && self.cls_ratio.is_finite()) {
            return bad(format!(
                "cls_ratio must be non-negative, got {}",
                self.cls_ratio
            ));
        }
        if !self.synthetic && self.data_root.is_none() {
            return bad("data_root is required unless synthetic is true".into());
        }
        Ok(())
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            channels: self.channels,
            clusters: self.clusters,
            heads: self.heads,
            fourier_count: self.fourier_count,
            amplitude: self.amplitude,
            resolution: self.resolution,
            stem1_lafcm: self.stem1_lafcm,
            stem2_lafcm: self.stem2_lafcm,
            constell1: self.constell1,
            constell2: self.constell2,
            nfc: self.nfc,
            cfc: self.cfc,
            fdc: self.fdc,
            attention_scale: self.attention_scale,
            centroid_momentum: self.centroid_momentum,
            soft_temperature: self.soft_temperature,
            temperature_init: self.temperature_init,
        }
    }

    pub fn weights(&self) -> BranchWeights {
        BranchWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episode: EpisodeSpec {
                way: self.train_way,
                shot: self.train_shot,
                query: self.train_query,
            },
            episodes_per_epoch: self.episodes_per_epoch,
            epochs: self.epochs,
            cls_ratio: self.cls_ratio,
            batch_size: self.batch_size,
            lr_schedule: LrSchedule(self.lr_schedule.clone()),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            weights: self.weights(),
            val_episodes: self.val_episodes,
            val_query: self.val_query,
            seed: self.seed,
        }
    }

    pub fn eval_spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            way: self.way,
            shot: self.shot,
            query: self.query,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        let mut active = [false; 4];
        for &b in &self.branches {
            active[b - 1] = true;
        }
        EvalOptions {
            metric: self.metric,
            weights: self.weights(),
            active,
            seed: self.seed ^ 0x5eed_e7a1,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            base: self.synth_base,
            val: self.synth_val,
            novel: self.synth_novel,
            per_class: self.synth_per_class,
            resolution: self.resolution,
            seed: self.seed,
        }
    }

    /// Pretty JSON, as echoed into run directories and accepted back as a
    /// config file.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Deserializes the defaults with `key` replaced, so a type error is
/// reported against that key alone.
fn check_key(defaults: &Map<String, Value>, key: &str, value: &Value) -> Result<()> {
    let mut probe = defaults.clone();
    probe.insert(key.to_string(), value.clone());
    serde_json::from_value::<RunConfig>(Value::Object(probe))
        .map(|_| ())
        .map_err(|e| Error::Config(format!("key `{key}`: {e}")))
}

/// Parses a command-line `key=value` override. The value is read as JSON
/// when possible and as a plain string otherwise.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {text:?} is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key, value))
}

/// Key table with desk and paper defaults, for `--help`.
pub fn help_table() -> String {
    let to_map = |c: RunConfig| match serde_json::to_value(c).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("config is a struct"),
    };
    let (desk, paper) = (to_map(RunConfig::desk()), to_map(RunConfig::paper()));
    let show = |v: &Value| match v {
        Value::Null => "-".to_string(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let mut out = format!("{:<20} {:<28} {:<28} {}\n", "KEY", "DESK", "PAPER", "NOTE");
    for (key, note) in KEYS {
        out.push_str(&format!(
            "{:<20} {:<28} {:<28} {}\n",
            key,
            show(&desk[*key]),
            show(&paper[*key]),
            note
        ));
    }
    out
}
