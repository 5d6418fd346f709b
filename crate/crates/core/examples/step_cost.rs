//! Times one training forward/backward pass of the network at a given
//! width and batch size: `cargo run --release --example step_cost -- 16 20`.

use std::time::Instant;

use lcn4_core::backbone::{Network, NetworkConfig, StateRef};
use lcn4_core::tensor::{Graph, Tensor};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().unwrap())
        .collect();
    let width = args.first().copied().unwrap_or(16);
    let batch = args.get(1).copied().unwrap_or(20);
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
    let (mut net, mut state) = Network::new(cfg, 12, 0).unwrap();
    let x = Tensor::from_fn([batch, 3, 84, 84], |i| {
        ((i * 7919) % 101) as f64 / 50.0 - 1.0
    });
    for round in 0..std::env::var("ROUNDS")
        .map(|r| r.parse().unwrap())
        .unwrap_or(3)
    {
        let t = Instant::now();
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let taps = net
            .forward(&mut g, xv, StateRef::Train(&mut state))
            .unwrap();
        let fwd = t.elapsed();
        let parts: Vec<_> = taps.branches().iter().map(|&v| g.sum(v)).collect();
        let l = g.concat(&parts, 0).unwrap();
        let l = g.sum(l);
        g.backward(l).unwrap();
        net.params_mut().collect_grads(&g);
        println!(
            "round {round}: forward {:.1} ms, total {:.1} ms, per image {:.2} ms",
            fwd.as_secs_f64() * 1e3,
            t.elapsed().as_secs_f64() * 1e3,
            t.elapsed().as_secs_f64() * 1e3 / batch as f64
        );
    }
}
