//! Finite-difference checks of every differentiable operation on random
//! float64 inputs of at most 256 elements.

use std::time::Instant;

use lcn4_core::cluster::{cluster_distances, CentroidBank};
use lcn4_core::constell::{multihead_attention, AttentionScale, AttentionWeights};
use lcn4_core::encoding::fdc_encode;
use lcn4_core::tensor::{
    finite_diff_check, BatchNormMode, Graph, Result, RunningStats, Tensor, Var,
};
use lcn4_core::train::meta_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-3;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(0.5..2.0))
}

/// Weighted sum with fixed random weights, so every output coordinate
/// contributes a distinct slope to the scalar.
fn project(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let w = random(g.shape(v), seed ^ 0xfeed);
    let w = g.constant(&w);
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn check(name: &str, x: &Tensor, f: impl Fn(&mut Graph, Var) -> Result<Var>) {
    assert!(x.numel() <= 256, "{name}: input too large");
    let report = finite_diff_check(f, x, STEP).unwrap();
    println!(
        "{name:<32} max rel error {:.2e} ({} checked, {} excluded)",
        report.max_rel_error, report.checked, report.excluded
    );
    assert!(report.checked > 0, "{name}: nothing checked");
    assert!(
        report.max_rel_error < TOLERANCE,
        "{name}: max relative error {}",
        report.max_rel_error
    );
}

fn elementwise() {
    let x = random(&[3, 4], 1);
    let other = positive(&[3, 4], 2);
    check("add", &x, |g, v| {
        let o = g.constant(&other);
        let y = g.add(v, o)?;
        project(g, y, 3)
    });
    check("sub (rhs)", &x, |g, v| {
        let o = g.constant(&other);
        let y = g.sub(o, v)?;
        project(g, y, 4)
    });
    check("mul", &x, |g, v| {
        let o = g.constant(&other);
        let y = g.mul(v, o)?;
        project(g, y, 5)
    });
    check("div (numerator)", &x, |g, v| {
        let o = g.constant(&other);
        let y = g.div(v, o)?;
        project(g, y, 6)
    });
    check("div (denominator)", &other, |g, v| {
        let o = g.constant(&x);
        let y = g.div(o, v)?;
        project(g, y, 7)
    });
    check("mul by broadcast scalar", &Tensor::scalar(0.7), |g, v| {
        let o = g.constant(&x);
        let y = g.mul(o, v)?;
        project(g, y, 8)
    });
    check("relu", &x, |g, v| {
        let y = g.relu(v);
        project(g, y, 9)
    });
    check("sin", &x, |g, v| {
        let y = g.sin(v);
        project(g, y, 10)
    });
    check("cos", &x, |g, v| {
        let y = g.cos(v);
        project(g, y, 11)
    });
    check("exp", &x, |g, v| {
        let y = g.exp(v);
        project(g, y, 12)
    });
    check("log", &other, |g, v| {
        let y = g.log(v);
        project(g, y, 13)
    });
    check("scale and shift", &x, |g, v| {
        let y = g.scale(v, -1.7);
        let y = g.add_scalar(y, 0.3);
        project(g, y, 14)
    });
}

fn linear_algebra() {
    let a = random(&[3, 5], 20);
    let b = random(&[5, 4], 21);
    check("matmul (lhs)", &a, |g, v| {
        let c = g.constant(&b);
        let y = g.matmul(v, c)?;
        project(g, y, 22)
    });
    check("matmul (rhs)", &b, |g, v| {
        let c = g.constant(&a);
        let y = g.matmul(c, v)?;
        project(g, y, 23)
    });
    let p = random(&[2, 3, 4], 24);
    let q = random(&[2, 4, 3], 25);
    check("bmm (lhs)", &p, |g, v| {
        let c = g.constant(&q);
        let y = g.bmm(v, c)?;
        project(g, y, 26)
    });
    check("bmm (rhs)", &q, |g, v| {
        let c = g.constant(&p);
        let y = g.bmm(c, v)?;
        project(g, y, 27)
    });
}

fn shape_ops() {
    let x = random(&[2, 3, 4], 30);
    check("permute", &x, |g, v| {
        let y = g.permute(v, &[2, 0, 1])?;
        project(g, y, 31)
    });
    check("narrow", &x, |g, v| {
        let y = g.narrow(v, 2, 1, 2)?;
        project(g, y, 32)
    });
    check("concat", &x, |g, v| {
        let y = g.concat(&[v, v], 1)?;
        project(g, y, 33)
    });
    check("reshape and transpose", &x, |g, v| {
        let y = g.reshape(v, vec![6, 4])?;
        let y = g.transpose(y)?;
        project(g, y, 34)
    });
    check("mean over axis", &x, |g, v| {
        let y = g.mean_axis(v, 1)?;
        project(g, y, 35)
    });
    check("softmax", &x, |g, v| {
        let y = g.softmax(v, 2)?;
        project(g, y, 36)
    });
    check("cumulative_sum", &x, |g, v| {
        let y = g.cumulative_sum(v, 1)?;
        project(g, y, 37)
    });
    check("l2_normalize_rows", &random(&[4, 5], 38), |g, v| {
        let y = g.l2_normalize_rows(v, 1e-12)?;
        project(g, y, 39)
    });
}

fn convolutional() {
    let x = random(&[2, 2, 4, 5], 40);
    let k = random(&[3, 2, 3, 3], 41);
    check("conv2d (input)", &x, |g, v| {
        let kk = g.constant(&k);
        let y = g.conv2d(v, kk)?;
        project(g, y, 42)
    });
    check("conv2d (kernel)", &k, |g, v| {
        let xx = g.constant(&x);
        let y = g.conv2d(xx, v)?;
        project(g, y, 43)
    });
    check(
        "conv2d (single column)",
        &random(&[1, 2, 5, 1], 44),
        |g, v| {
            let kk = g.constant(&random(&[2, 2, 3, 3], 45));
            let y = g.conv2d(v, kk)?;
            project(g, y, 46)
        },
    );
    check("maxpool2d", &random(&[2, 3, 4, 4], 47), |g, v| {
        let y = g.maxpool2d(v)?;
        project(g, y, 48)
    });
    let gamma = positive(&[3], 49);
    let beta = random(&[3], 50);
    let input = random(&[3, 3, 3, 3], 51);
    check("batchnorm (input)", &input, |g, v| {
        let (ga, be) = (g.constant(&gamma), g.constant(&beta));
        let mut stats = RunningStats::new(3);
        let y = g.batchnorm2d(v, ga, be, BatchNormMode::Train(&mut stats))?;
        project(g, y, 52)
    });
    check("batchnorm (gamma)", &gamma, |g, v| {
        let (x, be) = (g.constant(&input), g.constant(&beta));
        let mut stats = RunningStats::new(3);
        let y = g.batchnorm2d(x, v, be, BatchNormMode::Train(&mut stats))?;
        project(g, y, 53)
    });
    check("batchnorm (beta)", &beta, |g, v| {
        let (x, ga) = (g.constant(&input), g.constant(&gamma));
        let mut stats = RunningStats::new(3);
        let y = g.batchnorm2d(x, ga, v, BatchNormMode::Train(&mut stats))?;
        project(g, y, 54)
    });
    let stats = RunningStats {
        mean: vec![0.1, -0.2, 0.3],
        var: vec![0.5, 1.5, 2.0],
    };
    check("batchnorm eval (input)", &input, |g, v| {
        let (ga, be) = (g.constant(&gamma), g.constant(&beta));
        let y = g.batchnorm2d(v, ga, be, BatchNormMode::Eval(&stats))?;
        project(g, y, 55)
    });
}

fn constellation() {
    let bank = CentroidBank::from_centroids(random(&[4, 3], 60)).unwrap();
    check("cluster_distances", &random(&[2, 3, 3, 3], 61), |g, v| {
        let y = cluster_distances(g, v, &bank).map_err(|e| match e {
            lcn4_core::cluster::ClusterError::Tensor(t) => t,
            other => panic!("{other}"),
        })?;
        project(g, y, 62)
    });
    let dist = positive(&[2, 3, 4, 8], 63);
    check("fdc_encode", &dist, |g, v| {
        let e = fdc_encode(g, v, 8, 1.0)?;
        project(g, e.encoding, 64)
    });

    let (t, k) = (4, 8);
    let m = random(&[2, t, k], 65);
    let d = random(&[2, t, k], 66);
    let ws: Vec<Tensor> = (0..5).map(|i| random(&[k, k], 67 + i)).collect();
    let attend = |g: &mut Graph, m: Var, d: Var, w: [Var; 5], scale| -> Result<Var> {
        let weights = AttentionWeights {
            query: w[0],
            key: w[1],
            value: w[2],
            out1: w[3],
            out2: w[4],
        };
        let out = multihead_attention(g, m, d, &weights, 2, scale).map_err(|e| match e {
            lcn4_core::Error::Tensor(t) => t,
            other => panic!("{other}"),
        })?;
        project(g, out.output, 72)
    };
    let consts = |g: &mut Graph| -> [Var; 5] { std::array::from_fn(|i| g.constant(&ws[i])) };
    check("attention (queries and keys)", &m, |g, v| {
        let (dd, w) = (g.constant(&d), consts(g));
        attend(g, v, dd, w, AttentionScale::PerHead)
    });
    check("attention (values)", &d, |g, v| {
        let (mm, w) = (g.constant(&m), consts(g));
        attend(g, mm, v, w, AttentionScale::Full)
    });
    for (i, name) in ["w_q", "w_k", "w_v", "w_1", "w_2"].iter().enumerate() {
        check(&format!("attention ({name})"), &ws[i], |g, v| {
            let (mm, dd) = (g.constant(&m), g.constant(&d));
            let mut w = consts(g);
            w[i] = v;
            attend(g, mm, dd, w, AttentionScale::PerHead)
        });
    }
}

fn losses() {
    let labels = [2, 0, 1, 1, 3];
    check("classification loss", &random(&[5, 4], 80), |g, v| {
        g.cross_entropy(v, &labels)
    });
    let support = random(&[6, 5], 81);
    let query = random(&[6, 5], 82);
    let s_labels = [0, 1, 2, 0, 1, 2];
    let q_labels = [1, 2, 0, 0, 2, 1];
    let loss = |g: &mut Graph, s: Var, q: Var, t: Var| -> Result<Var> {
        meta_loss(g, s, &s_labels, q, &q_labels, 3, t).map_err(|e| match e {
            lcn4_core::Error::Tensor(t) => t,
            other => panic!("{other}"),
        })
    };
    check("meta loss (support)", &support, |g, v| {
        let (q, t) = (g.constant(&query), g.constant(&Tensor::scalar(10.0)));
        loss(g, v, q, t)
    });
    check("meta loss (query)", &query, |g, v| {
        let (s, t) = (g.constant(&support), g.constant(&Tensor::scalar(10.0)));
        loss(g, s, v, t)
    });
    check("meta loss (temperature)", &Tensor::scalar(3.0), |g, v| {
        let (s, q) = (g.constant(&support), g.constant(&query));
        loss(g, s, q, v)
    });
}

/// Checks every operation; panics on the first failure and returns a
/// one-line summary.
pub fn run() -> String {
    let start = Instant::now();
    elementwise();
    linear_algebra();
    shape_ops();
    convolutional();
    constellation();
    losses();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 60.0, "gradient suite took {elapsed:.1} s");
    format!("all operations within {TOLERANCE:e} relative error, {elapsed:.2} s")
}
