//! `train`, `eval` and `synth`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use lcn4_core::backbone::Network;
use lcn4_core::checkpoint;
use lcn4_core::config::RunConfig;
use lcn4_core::data::{synth_raw, write_dataset, Split};
use lcn4_core::metrics::{evaluate, EvalReport, NetworkEncoder};
use lcn4_core::train::{train, EpochMetrics};

use crate::args::{EvalArgs, Role, SynthArgs, TrainArgs};
use crate::failure::{Failure, Outcome};
use crate::run::{
    echo_config, load_data, prepare_dir, run_dir, write_report, ClassOracle, CHECKPOINT_FILE,
    METRICS_FILE,
};

/// Files and results of a finished training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub history: Vec<EpochMetrics>,
    pub report: EvalReport,
    pub seconds: f64,
}

pub fn cmd_train(args: &TrainArgs) -> Outcome<TrainOutcome> {
    let cfg = args.common.resolve(Role::Train)?;
    let dir = run_dir(args.common.out.as_deref(), &cfg, "train");
    prepare_dir(&dir, args.common.force)?;
    echo_config(&dir, &cfg)?;
    let start = Instant::now();

    let data = load_data(&cfg)?;
    let base = data.classes_in(Split::Base).len();
    let (mut net, mut state) = Network::new(cfg.network(), base, cfg.seed)?;
    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics, "{}", EpochMetrics::CSV_HEADER)?;
    metrics.flush()?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let history = train(
        &mut net,
        &mut state,
        &data,
        &cfg.train_config(),
        |m, net, state| {
            writeln!(metrics, "{}", m.csv_line())?;
            metrics.flush()?;
            checkpoint::save(&ckpt, net, state)?;
            eprintln!(
                "epoch {:>3}  cls {:.4}  meta {:.4}  val {:.2}%  lr {}  [{:.0}s]",
                m.epoch,
                m.cls_loss,
                m.meta_loss,
                m.val_acc,
                m.lr,
                start.elapsed().as_secs_f64()
            );
            Ok(())
        },
    )?;
    if history.is_empty() {
        checkpoint::save(&ckpt, &net, &state)?;
    }

    let encoder = NetworkEncoder {
        net: &net,
        state: &state,
    };
    let report = evaluate(
        &encoder,
        &data,
        Split::Novel,
        cfg.eval_spec(),
        cfg.eval_episodes,
        cfg.eval_epochs,
        &cfg.eval_options(),
    )?;
    write_report(&dir, &report)?;
    let seconds = start.elapsed().as_secs_f64();
    println!(
        "novel {}-way {}-shot: {}  ({} episodes, {:.1}s)",
        report.spec.way,
        report.spec.shot,
        report.summary(),
        report.accuracies.len(),
        seconds
    );
    Ok(TrainOutcome {
        dir,
        config: cfg,
        history,
        report,
        seconds,
    })
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub report: EvalReport,
}

pub fn cmd_eval(args: &EvalArgs) -> Outcome<EvalOutcome> {
    let cfg = args.common.resolve(Role::Eval)?;
    let split: Split = args.split.parse()?;
    let loaded = match (&args.checkpoint, args.oracle) {
        (Some(path), false) => Some(checkpoint::load(path)?),
        (None, true) => None,
        _ => {
            return Err(Failure::config(
                "pass exactly one of --checkpoint and --oracle",
            ))
        }
    };
    let dir = run_dir(args.common.out.as_deref(), &cfg, "eval");
    prepare_dir(&dir, args.common.force)?;
    echo_config(&dir, &cfg)?;

    let data = load_data(&cfg)?;
    let spec = cfg.eval_spec();
    let opts = cfg.eval_options();
    let report = match &loaded {
        Some((net, state)) => {
            if net.config().resolution != data.resolution {
                return Err(Failure::config(format!(
                    "checkpoint expects {}×{} images, data is {}×{}",
                    net.config().resolution,
                    net.config().resolution,
                    data.resolution,
                    data.resolution
                )));
            }
            let encoder = NetworkEncoder { net, state };
            evaluate(&encoder, &data, split, spec, cfg.eval_episodes, cfg.eval_epochs, &opts)?
        }
        None => evaluate(
            &ClassOracle::new(&data),
            &data,
            split,
            spec,
            cfg.eval_episodes,
            cfg.eval_epochs,
            &opts,
        )?,
    };
    write_report(&dir, &report)?;
    println!("{}", report.summary());
    Ok(EvalOutcome {
        dir,
        config: cfg,
        report,
    })
}

/// Writes the generated dataset as PNG files plus `splits.tsv`, returning
/// the splits file.
pub fn cmd_synth(args: &SynthArgs) -> Outcome<PathBuf> {
    let cfg = args.common.resolve(Role::Train)?;
    let dir = run_dir(args.common.out.as_deref(), &cfg, "synth");
    prepare_dir(&dir, args.common.force)?;
    echo_config(&dir, &cfg)?;
    let spec = cfg.synth_spec();
    let splits = write_dataset(&synth_raw(&spec), spec.resolution, &dir.join("images"))?;
    println!("{}", splits.display());
    Ok(splits)
}
