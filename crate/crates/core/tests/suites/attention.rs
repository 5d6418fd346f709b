//! Invariants of the multi-head cross attention.

use lcn4_core::constell::{multihead_attention, AttentionScale, AttentionWeights};
use lcn4_core::tensor::{Graph, Tensor};
use lcn4_oracles::SplitMix;

struct Inputs {
    m: Tensor,
    d: Tensor,
    w: [Tensor; 5],
}

fn random(rng: &mut SplitMix, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform())
}

fn inputs(seed: u64, b: usize, t: usize, k: usize) -> Inputs {
    let mut rng = SplitMix::new(seed);
    Inputs {
        m: random(&mut rng, &[b, t, k]),
        d: random(&mut rng, &[b, t, k]),
        w: std::array::from_fn(|_| random(&mut rng, &[k, k])),
    }
}

/// Output and per-head softmax weights.
fn attend(x: &Inputs, heads: usize, scale: AttentionScale) -> (Tensor, Vec<Tensor>) {
    let mut g = Graph::new();
    let m = g.constant(&x.m);
    let d = g.constant(&x.d);
    let w: Vec<_> = x.w.iter().map(|t| g.constant(t)).collect();
    let weights = AttentionWeights {
        query: w[0],
        key: w[1],
        value: w[2],
        out1: w[3],
        out2: w[4],
    };
    let out = multihead_attention(&mut g, m, d, &weights, heads, scale).unwrap();
    let probs = out.weights.iter().map(|&a| g.tensor(a)).collect();
    (g.tensor(out.output), probs)
}

/// Row-major `rows×cols` times `cols×n`.
fn mul(a: &[f64], b: &[f64], rows: usize, cols: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * n];
    for i in 0..rows {
        for j in 0..n {
            out[i * n + j] = (0..cols).map(|p| a[i * cols + p] * b[p * n + j]).sum();
        }
    }
    out
}

/// One head, written out: `softmax(M·Wq·(M·Wk)ᵀ/√k)·D·Wv·W₁·W₂`.
fn single_head(x: &Inputs, b: usize, t: usize, k: usize) -> Vec<f64> {
    let w: Vec<&[f64]> = x.w.iter().map(|w| w.data()).collect();
    let mut out = Vec::with_capacity(b * t * k);
    for i in 0..b {
        let m = &x.m.data()[i * t * k..(i + 1) * t * k];
        let d = &x.d.data()[i * t * k..(i + 1) * t * k];
        let q = mul(m, w[0], t, k, k);
        let key = mul(m, w[1], t, k, k);
        let v = mul(d, w[2], t, k, k);
        let mut mixed = vec![0.0; t * k];
        for r in 0..t {
            let logits: Vec<f64> = (0..t)
                .map(|s| (0..k).map(|c| q[r * k + c] * key[s * k + c]).sum::<f64>() / (k as f64).sqrt())
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for s in 0..t {
                for c in 0..k {
                    mixed[r * k + c] += e[s] / z * v[s * k + c];
                }
            }
        }
        let once = mul(&mixed, w[3], t, k, k);
        out.extend(mul(&once, w[4], t, k, k));
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run() -> String {
    // Softmax rows sum to one for every head and scaling choice.
    let mut row_err: f64 = 0.0;
    for (seed, heads) in [(1, 1), (2, 2), (3, 4)] {
        for scale in [AttentionScale::PerHead, AttentionScale::Full] {
            let x = inputs(seed, 2, 6, 8);
            let (_, probs) = attend(&x, heads, scale);
            assert_eq!(probs.len(), heads);
            for p in &probs {
                assert_eq!(p.shape(), &[2, 6, 6]);
                for row in p.data().chunks(6) {
                    assert!(row.iter().all(|&v| v >= 0.0));
                    row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
    }
    assert!(row_err <= 1e-10, "softmax rows off by {row_err:e}");

    // Identical positions give uniform attention, so every output row is
    // the projected mean of the values.
    let (b, t, k) = (2, 5, 8);
    let mut x = inputs(11, b, t, k);
    let mut m = x.m.data().to_vec();
    for i in 0..b {
        let first = m[i * t * k..i * t * k + k].to_vec();
        for r in 1..t {
            m[(i * t + r) * k..(i * t + r + 1) * k].copy_from_slice(&first);
        }
    }
    x.m = Tensor::new([b, t, k], m).unwrap();
    let (out, probs) = attend(&x, 4, AttentionScale::PerHead);
    for p in &probs {
        assert!(p.data().iter().all(|&v| (v - 1.0 / t as f64).abs() < 1e-12));
    }
    let w: Vec<&[f64]> = x.w.iter().map(|w| w.data()).collect();
    let mut mean_err: f64 = 0.0;
    for i in 0..b {
        let d = &x.d.data()[i * t * k..(i + 1) * t * k];
        let mean: Vec<f64> = (0..k)
            .map(|c| (0..t).map(|r| d[r * k + c]).sum::<f64>() / t as f64)
            .collect();
        let expect = mul(&mul(&mul(&mean, w[2], 1, k, k), w[3], 1, k, k), w[4], 1, k, k);
        for r in 0..t {
            let row = &out.data()[(i * t + r) * k..(i * t + r + 1) * k];
            mean_err = mean_err.max(max_diff(row, &expect));
        }
    }
    assert!(mean_err <= 1e-12, "uniform-key output off the value mean by {mean_err:e}");

    // A single head matches the written-out formula under either scaling.
    let mut head_err: f64 = 0.0;
    for seed in 20..24 {
        let x = inputs(seed, 2, 4, 6);
        let direct = single_head(&x, 2, 4, 6);
        for scale in [AttentionScale::PerHead, AttentionScale::Full] {
            let (out, _) = attend(&x, 1, scale);
            head_err = head_err.max(max_diff(out.data(), &direct));
        }
    }
    assert!(head_err <= 1e-12, "single head off the direct formula by {head_err:e}");

    format!(
        "softmax rows within {row_err:.1e} of 1, uniform keys → value mean ({mean_err:.1e}), h=1 matches the direct formula ({head_err:.1e})"
    )
}
