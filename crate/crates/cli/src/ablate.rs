//! Ablation runs: families of configurations trained and evaluated under one
//! seed, one CSV row each.

use std::fmt::Write as _;
use std::path::PathBuf;

use lcn4_core::backbone::{NetState, Network};
use lcn4_core::config::RunConfig;
use lcn4_core::data::{DatasetSplits, EpisodeSpec, Split};
use lcn4_core::metrics::{evaluate_table, EmbeddingTable, EvalReport, NetworkEncoder};
use lcn4_core::train::train;
use serde_json::Value;

use crate::args::{AblateArgs, Preset, Role};
use crate::failure::{Failure, Outcome};
use crate::run::{echo_config, load_data, prepare_dir, run_dir, write, ABLATION_FILE};

/// Keys a toggle may change.
pub const TOGGLE_KEYS: &[&str] = &[
    "nfc",
    "cfc",
    "fdc",
    "stem1_lafcm",
    "stem2_lafcm",
    "constell1",
    "constell2",
    "branches",
    "metric",
];

pub const CSV_HEADER: &str = "row,nfc,cfc,fdc,stem1_lafcm,stem2_lafcm,constell1,constell2,\
branches,metric,acc_1shot,ci_1shot,acc_5shot,ci_5shot,status";

/// One configuration of an ablation family.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub changes: Vec<(String, Value)>,
}

fn row(name: &str, changes: &[(&str, Value)]) -> AblationRow {
    AblationRow {
        name: name.to_string(),
        changes: changes
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
    }
}

/// Rows of a preset, each relative to the full default configuration.
pub fn preset_rows(preset: Preset) -> Vec<AblationRow> {
    let off = Value::Bool(false);
    let on = Value::Bool(true);
    match preset {
        Preset::Table2 => vec![
            row("BL", &[("nfc", off.clone()), ("cfc", on.clone()), ("fdc", off.clone())]),
            row("M1", &[("nfc", on.clone()), ("cfc", on.clone()), ("fdc", off.clone())]),
            row("M2", &[("nfc", off.clone()), ("cfc", on.clone()), ("fdc", on.clone())]),
            row("LCN-4", &[("nfc", on.clone()), ("cfc", on.clone()), ("fdc", on)]),
        ],
        Preset::Table3 => vec![
            row("M3", &[("stem1_lafcm", off.clone()), ("stem2_lafcm", off.clone())]),
            row("M4", &[("stem1_lafcm", off.clone())]),
            row("M5", &[("stem2_lafcm", off.clone())]),
            row("M6", &[("constell1", off.clone()), ("constell2", off.clone())]),
            row("M7", &[("constell1", off.clone())]),
            row("M8", &[("constell2", off)]),
            row("LCN-4", &[]),
        ],
        Preset::Table6 => {
            let subsets: [&[u64]; 4] = [&[1], &[1, 2], &[1, 2, 3], &[1, 2, 3, 4]];
            let mut rows = Vec::new();
            for metric in ["bcd", "cosine"] {
                for subset in subsets {
                    let name = subset
                        .iter()
                        .map(|b| format!("Z{b}"))
                        .collect::<Vec<_>>()
                        .join("+");
                    rows.push(row(
                        &format!("{metric}:{name}"),
                        &[
                            ("metric", Value::String(metric.into())),
                            ("branches", Value::from(subset.to_vec())),
                        ],
                    ));
                }
            }
            rows
        }
    }
}

/// Parses `key=value` toggles: booleans accept on/off/true/false,
/// `branches` a `+`- or `,`-separated list, `metric` a metric name.
pub fn parse_toggle(text: &str) -> Outcome<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Failure::config(format!("toggle {text:?} is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    if !TOGGLE_KEYS.contains(&key) {
        return Err(Failure::config(format!(
            "unknown toggle `{key}` (expected one of {})",
            TOGGLE_KEYS.join(", ")
        )));
    }
    let value = match key {
        "branches" => {
            let list = raw
                .split(['+', ','])
                .map(|b| b.trim().trim_start_matches(['Z', 'z']).parse::<u64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Failure::config(format!("toggle `branches`: bad list {raw:?}")))?;
            Value::from(list)
        }
        "metric" => Value::String(raw.to_string()),
        _ => match raw {
            "on" | "true" | "1" => Value::Bool(true),
            "off" | "false" | "0" => Value::Bool(false),
            other => {
                return Err(Failure::config(format!(
                    "toggle `{key}`: expected on or off, got {other:?}"
                )))
            }
        },
    };
    Ok((key.to_string(), value))
}

/// Result of one ablation row.
#[derive(Debug, Clone)]
pub struct RowResult {
    pub name: String,
    /// `None` when the combination is invalid and was skipped.
    pub config: Option<RunConfig>,
    pub one_shot: Option<EvalReport>,
    pub five_shot: Option<EvalReport>,
    pub status: String,
}

impl RowResult {
    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{}", self.name);
        match &self.config {
            Some(c) => {
                for flag in [
                    c.nfc,
                    c.cfc,
                    c.fdc,
                    c.stem1_lafcm,
                    c.stem2_lafcm,
                    c.constell1,
                    c.constell2,
                ] {
                    let _ = write!(s, ",{}", u8::from(flag));
                }
                let branches: Vec<String> = c.branches.iter().map(|b| b.to_string()).collect();
                let _ = write!(s, ",{},{}", branches.join("+"), c.metric);
            }
            None => s.push_str(",,,,,,,,,"),
        }
        for report in [&self.one_shot, &self.five_shot] {
            match report {
                Some(r) => {
                    let _ = write!(s, ",{:.2},{:.2}", r.mean, r.ci);
                }
                None => s.push_str(",,"),
            }
        }
        let _ = write!(s, ",{}", self.status.replace(',', ";"));
        s
    }
}

#[derive(Debug)]
pub struct AblationOutcome {
    pub dir: PathBuf,
    pub rows: Vec<RowResult>,
    pub csv: String,
}

/// Serialized configuration with the evaluation-only keys blanked, so rows
/// that differ only in how they are evaluated share one trained model.
fn training_key(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.branches = Vec::new();
    c.metric = Default::default();
    c.way = 0;
    c.shot = 0;
    c.query = 0;
    c.eval_episodes = 0;
    c.eval_epochs = 0;
    c.to_json()
}

struct Trained {
    key: String,
    table: EmbeddingTable,
}

fn train_and_embed(cfg: &RunConfig, data: &DatasetSplits) -> Outcome<EmbeddingTable> {
    let base = data.classes_in(Split::Base).len();
    let (mut net, mut state): (Network, NetState) = Network::new(cfg.network(), base, cfg.seed)?;
    train(&mut net, &mut state, data, &cfg.train_config(), |_, _, _| Ok(()))?;
    let encoder = NetworkEncoder {
        net: &net,
        state: &state,
    };
    Ok(EmbeddingTable::build(&encoder, data, Split::Novel, 50)?)
}

pub fn cmd_ablate(args: &AblateArgs) -> Outcome<AblationOutcome> {
    let base = args.common.resolve(Role::Train)?;
    let mut shared = args.common.overrides(Role::Train)?;
    for t in &args.toggles {
        shared.push(parse_toggle(t)?);
    }
    let rows = match args.preset {
        Some(p) => preset_rows(p),
        None => vec![row("custom", &[])],
    };
    let dir = run_dir(args.common.out.as_deref(), &base, "ablate");
    prepare_dir(&dir, args.common.force)?;
    echo_config(&dir, &base)?;
    let data = load_data(&base)?;

    let mut trained: Vec<Trained> = Vec::new();
    let mut results = Vec::with_capacity(rows.len());
    for r in rows {
        // Row changes first, toggles last: a toggle applies to every row.
        let mut layers = r.changes.clone();
        layers.extend(shared.iter().cloned());
        let cfg = match RunConfig::resolve(args.common.profile, args.common.config.as_deref(), &layers) {
            Ok(cfg) => cfg,
            Err(lcn4_core::Error::Config(reason)) => {
                eprintln!("{}: skipped ({reason})", r.name);
                results.push(RowResult {
                    name: r.name,
                    config: None,
                    one_shot: None,
                    five_shot: None,
                    status: format!("skipped: {reason}"),
                });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let key = training_key(&cfg);
        let idx = match trained.iter().position(|t| t.key == key) {
            Some(i) => i,
            None => {
                eprintln!("{}: training", r.name);
                let table = train_and_embed(&cfg, &data)?;
                trained.push(Trained { key, table });
                trained.len() - 1
            }
        };
        let opts = cfg.eval_options();
        let episodes = cfg.eval_episodes * cfg.eval_epochs;
        let mut reports = [1, 5].into_iter().map(|shot| {
            let spec = EpisodeSpec {
                way: cfg.way,
                shot,
                query: cfg.query,
            };
            evaluate_table(&trained[idx].table, &data, Split::Novel, spec, episodes, &opts)
        });
        let one_shot = reports.next().expect("two shots")?;
        let five_shot = reports.next().expect("two shots")?;
        eprintln!(
            "{}: 1-shot {}  5-shot {}",
            r.name,
            one_shot.summary(),
            five_shot.summary()
        );
        results.push(RowResult {
            name: r.name,
            config: Some(cfg),
            one_shot: Some(one_shot),
            five_shot: Some(five_shot),
            status: "ok".into(),
        });
    }
    let mut csv = format!("{CSV_HEADER}\n");
    for r in &results {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    write(&dir.join(ABLATION_FILE), csv.as_bytes())?;
    print!("{csv}");
    Ok(AblationOutcome {
        dir,
        rows: results,
        csv,
    })
}
