//! Wall-clock breakdown of the main network stages at desk width.

use std::time::Instant;

use lcn4_core::cluster::{cluster_train, CentroidBank};
use lcn4_core::tensor::{BatchNormMode, Graph, RunningStats, Tensor};

fn time<T>(label: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let r = f();
    println!("{label:>24}: {:8.2} ms", t.elapsed().as_secs_f64() * 1e3);
    r
}

fn main() {
    let b = 20;
    let x = Tensor::from_fn([b, 3, 84, 84], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
    let k1 = Tensor::from_fn([16, 3, 3, 3], |i| (i as f64).sin() * 0.3).with_requires_grad(true);
    let k2 = Tensor::from_fn([16, 32, 3, 3], |i| (i as f64).sin() * 0.1).with_requires_grad(true);
    let mut g = Graph::new();
    let xv = g.constant(&x);
    let k1v = g.leaf(&k1);
    let k2v = g.leaf(&k2);
    let gamma = g.leaf(&Tensor::full([16], 1.0).with_requires_grad(true));
    let beta = g.leaf(&Tensor::zeros([16]).with_requires_grad(true));
    let mut stats = RunningStats::new(16);
    let y = time("conv1", || g.conv2d(xv, k1v).unwrap());
    let y = time("bn1", || {
        g.batchnorm2d(y, gamma, beta, BatchNormMode::Train(&mut stats))
            .unwrap()
    });
    let y = time("relu1", || g.relu(y));
    let y = time("pool1", || g.maxpool2d(y).unwrap());
    let nhwc = time("permute", || g.permute(y, &[0, 2, 3, 1]).unwrap());
    let mut bank = CentroidBank::new(16, 16, 0);
    let d = time("cluster_train", || {
        cluster_train(&mut g, nhwc, &mut bank).unwrap()
    });
    let cat = time("concat", || g.concat(&[nhwc, d], 3).unwrap());
    let back = time("permute back", || g.permute(cat, &[0, 3, 1, 2]).unwrap());
    let y2 = time("conv2", || g.conv2d(back, k2v).unwrap());
    let l = g.sum(y2);
    time("backward", || g.backward(l).unwrap());
}
