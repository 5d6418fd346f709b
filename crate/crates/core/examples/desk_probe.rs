//! Trains and evaluates on a generated dataset with settings taken from
//! the environment, printing timings:
//! `WIDTH=16 EPISODES=200 EPOCHS=10 cargo run --release --example desk_probe`.

use std::time::Instant;

use lcn4_core::backbone::{Network, NetworkConfig};
use lcn4_core::data::{synth_generate, EpisodeSpec, Split, SynthSpec};
use lcn4_core::metrics::{evaluate, BranchWeights, EvalOptions, NetworkEncoder};
use lcn4_core::train::{train, LrSchedule, TrainConfig};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() {
    let t0 = Instant::now();
    let data = synth_generate(&SynthSpec {
        base: 12,
        val: 4,
        novel: 5,
        per_class: 40,
        resolution: 84,
        seed: env("SEED", 0),
    })
    .unwrap();
    println!("data {:.1}s", t0.elapsed().as_secs_f64());
    let width = env("WIDTH", 16usize);
    let cfg = NetworkConfig {
        channels: std::env::var("WIDTHS")
            .map(|w| {
                let v: Vec<usize> = w.split(',').map(|x| x.parse().unwrap()).collect();
                [v[0], v[1], v[2], v[3]]
            })
            .unwrap_or([width; 4]),
        clusters: 16,
        heads: 4,
        fourier_count: 16,
        ..NetworkConfig::default()
    };
    let (mut net, mut state) = Network::new(cfg, 12, env("SEED", 0)).unwrap();
    let lr = env("LR", 0.05f64);
    let tc = TrainConfig {
        episode: EpisodeSpec {
            way: env("WAY", 5),
            shot: 1,
            query: env("QUERY", 2),
        },
        episodes_per_epoch: env("EPISODES", 200),
        epochs: env("EPOCHS", 10),
        cls_ratio: env("CLS_RATIO", 1.0),
        batch_size: env("BATCH", 16),
        lr_schedule: LrSchedule(vec![
            (env("DROP1", 6), lr),
            (env("DROP2", 8), lr * 0.3),
            (usize::MAX, lr * 0.06),
        ]),
        momentum: 0.9,
        weight_decay: 5e-4,
        weights: BranchWeights::default(),
        val_episodes: env("VAL", 0),
        val_query: 5,
        seed: env("SEED", 0),
    };
    let t1 = Instant::now();
    train(&mut net, &mut state, &data, &tc, |m, _, _| {
        println!("{} [{:.0}s]", m.csv_line(), t1.elapsed().as_secs_f64());
        Ok(())
    })
    .unwrap();
    let t2 = Instant::now();
    let encoder = NetworkEncoder {
        net: &net,
        state: &state,
    };
    let report = evaluate(
        &encoder,
        &data,
        Split::Novel,
        EpisodeSpec {
            way: 5,
            shot: 1,
            query: 15,
        },
        200,
        1,
        &EvalOptions::default(),
    )
    .unwrap();
    println!(
        "novel {} eval {:.1}s total {:.1}s",
        report.summary(),
        t2.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64()
    );
}
