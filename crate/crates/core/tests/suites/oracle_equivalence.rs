//! Production kernels against scalar-loop oracles on random small inputs.

use std::time::Instant;

use lcn4_core::cluster::{cluster_distances, CentroidBank};
use lcn4_core::constell::{multihead_attention, AttentionScale, AttentionWeights};
use lcn4_core::encoding::fdc_encode;
use lcn4_core::tensor::{Graph, Tensor, Var};
use lcn4_core::train::meta_loss;
use lcn4_oracles::{oracle_run, Array, OracleCase, OracleOp, SplitMix};

pub const CASES_PER_OP: usize = 24;
pub const TOLERANCE: f64 = 1e-10;

fn tensor(a: &Array) -> Tensor {
    Tensor::new(a.shape.clone(), a.data.clone()).unwrap()
}

fn array(g: &Graph, v: Var) -> Array {
    Array::new(g.shape(v), g.value(v).to_vec())
}

fn labels(rng: &mut SplitMix, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(classes)).collect()
}

fn as_floats(labels: &[usize]) -> Array {
    Array::new(&[labels.len()], labels.iter().map(|&l| l as f64).collect())
}

fn as_labels(a: &Array) -> Vec<usize> {
    a.data.iter().map(|&v| v as usize).collect()
}

/// Candidate implementation of each oracle operation, built on the
/// production graph.
pub fn candidate(op: &OracleOp, inputs: &[Array]) -> Array {
    let mut g = Graph::new();
    match op {
        OracleOp::Matmul => {
            let (a, b) = (g.constant(&tensor(&inputs[0])), g.constant(&tensor(&inputs[1])));
            let y = g.matmul(a, b).unwrap();
            array(&g, y)
        }
        OracleOp::Conv2d => {
            let (x, k) = (g.constant(&tensor(&inputs[0])), g.constant(&tensor(&inputs[1])));
            let y = g.conv2d(x, k).unwrap();
            array(&g, y)
        }
        OracleOp::MaxPool2d => {
            let x = g.constant(&tensor(&inputs[0]));
            let y = g.maxpool2d(x).unwrap();
            array(&g, y)
        }
        OracleOp::ClusterDistances => {
            let (n, c) = (inputs[0].shape[0], inputs[0].shape[1]);
            let cells = Tensor::new([1, 1, n, c], inputs[0].data.clone()).unwrap();
            let bank = CentroidBank::from_centroids(tensor(&inputs[1])).unwrap();
            let x = g.constant(&cells);
            let y = cluster_distances(&mut g, x, &bank).unwrap();
            let k = bank.k();
            Array::new(&[n, k], g.value(y).to_vec())
        }
        OracleOp::Attention {
            heads,
            full_width_scale,
        } => {
            let m = g.constant(&tensor(&inputs[0]));
            let d = g.constant(&tensor(&inputs[1]));
            let w: Vec<Var> = inputs[2..7].iter().map(|a| g.constant(&tensor(a))).collect();
            let weights = AttentionWeights {
                query: w[0],
                key: w[1],
                value: w[2],
                out1: w[3],
                out2: w[4],
            };
            let scale = if *full_width_scale {
                AttentionScale::Full
            } else {
                AttentionScale::PerHead
            };
            let out = multihead_attention(&mut g, m, d, &weights, *heads, scale).unwrap();
            array(&g, out.output)
        }
        OracleOp::CrossEntropy => {
            let logits = g.constant(&tensor(&inputs[0]));
            let y = g.cross_entropy(logits, &as_labels(&inputs[1])).unwrap();
            Array::new(&[1], g.value(y).to_vec())
        }
        OracleOp::MetaLoss { way, temperature } => {
            let s = g.constant(&tensor(&inputs[0]));
            let q = g.constant(&tensor(&inputs[2]));
            let t = g.constant(&Tensor::scalar(*temperature));
            let y = meta_loss(
                &mut g,
                s,
                &as_labels(&inputs[1]),
                q,
                &as_labels(&inputs[3]),
                *way,
                t,
            )
            .unwrap();
            Array::new(&[1], g.value(y).to_vec())
        }
        OracleOp::Fdc { fourier, amplitude } => {
            let d = g.constant(&tensor(&inputs[0]));
            let e = fdc_encode(&mut g, d, *fourier, *amplitude).unwrap();
            array(&g, e.encoding)
        }
    }
}

fn dim(rng: &mut SplitMix, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// `CASES_PER_OP` random cases for `name`, with shapes drawn per case.
pub fn cases(name: &str, seed: u64) -> Vec<OracleCase> {
    let mut rng = SplitMix::new(seed);
    (0..CASES_PER_OP)
        .map(|i| {
            let (op, inputs) = match name {
                "matmul" => {
                    let (m, p, q) = (dim(&mut rng, 1, 6), dim(&mut rng, 1, 6), dim(&mut rng, 1, 6));
                    (OracleOp::Matmul, vec![rng.array(&[m, p]), rng.array(&[p, q])])
                }
                "conv2d" => {
                    let (b, ci, co) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
                    let (h, w) = (dim(&mut rng, 1, 6), dim(&mut rng, 1, 6));
                    (
                        OracleOp::Conv2d,
                        vec![rng.array(&[b, ci, h, w]), rng.array(&[co, ci, 3, 3])],
                    )
                }
                "maxpool2d" => {
                    let (b, c) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 3));
                    let (h, w) = (dim(&mut rng, 2, 7), dim(&mut rng, 2, 7));
                    (OracleOp::MaxPool2d, vec![rng.array(&[b, c, h, w])])
                }
                "cluster_distances" => {
                    let (n, c, k) = (dim(&mut rng, 1, 12), dim(&mut rng, 1, 5), dim(&mut rng, 1, 6));
                    (
                        OracleOp::ClusterDistances,
                        vec![rng.array(&[n, c]), rng.array(&[k, c])],
                    )
                }
                "multihead_attention" => {
                    let heads = [1, 2, 4][rng.below(3)];
                    let k = heads * dim(&mut rng, 1, 3);
                    let (b, t) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 6));
                    let mut inputs = vec![rng.array(&[b, t, k]), rng.array(&[b, t, k])];
                    for _ in 0..5 {
                        inputs.push(rng.array(&[k, k]));
                    }
                    (
                        OracleOp::Attention {
                            heads,
                            full_width_scale: i % 2 == 1,
                        },
                        inputs,
                    )
                }
                "classification_loss" => {
                    let (n, c) = (dim(&mut rng, 1, 8), dim(&mut rng, 2, 6));
                    let logits = rng.array(&[n, c]);
                    let y = labels(&mut rng, n, c);
                    (OracleOp::CrossEntropy, vec![logits, as_floats(&y)])
                }
                "meta_loss" => {
                    let (way, shot, query, d) = (
                        dim(&mut rng, 2, 5),
                        dim(&mut rng, 1, 3),
                        dim(&mut rng, 1, 3),
                        dim(&mut rng, 2, 6),
                    );
                    let s_labels: Vec<usize> = (0..way).flat_map(|c| vec![c; shot]).collect();
                    let q_labels: Vec<usize> = (0..way).flat_map(|c| vec![c; query]).collect();
                    let temperature = 0.5 + 10.0 * (rng.uniform() + 1.0);
                    (
                        OracleOp::MetaLoss { way, temperature },
                        vec![
                            rng.array(&[way * shot, d]),
                            as_floats(&s_labels),
                            rng.array(&[way * query, d]),
                            as_floats(&q_labels),
                        ],
                    )
                }
                "fdc_encode" => {
                    let k = 4 * dim(&mut rng, 1, 3);
                    let (b, h, w) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
                    let fourier = (k / 4).max(2) + rng.below(4);
                    let mut d = rng.array(&[b, h, w, k]);
                    d.data.iter_mut().for_each(|v| *v = v.abs() * 2.0);
                    (
                        OracleOp::Fdc {
                            fourier,
                            amplitude: 0.5 + rng.uniform().abs(),
                        },
                        vec![d],
                    )
                }
                other => panic!("no case generator for {other}"),
            };
            OracleCase::computed(format!("{name}#{i}"), op, inputs, TOLERANCE).unwrap()
        })
        .collect()
}

pub const OPERATIONS: [&str; 8] = [
    "conv2d",
    "matmul",
    "maxpool2d",
    "cluster_distances",
    "multihead_attention",
    "classification_loss",
    "meta_loss",
    "fdc_encode",
];

/// Runs every case of every operation plus a negative control. Panics on
/// the first mismatch; returns a one-line summary.
pub fn run() -> String {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut total = 0;
    for (i, name) in OPERATIONS.iter().enumerate() {
        let cases = cases(name, 0x0a11_ce00 + i as u64);
        assert!(cases.len() >= 20);
        for case in &cases {
            let outcome = oracle_run(case, |inputs| candidate(&case.op, inputs));
            assert!(
                outcome.passed,
                "{}: deviation {:e} exceeds {:e}",
                case.name, outcome.max_deviation, case.tolerance
            );
            worst = worst.max(outcome.max_deviation);
            total += 1;
        }
    }

    // A deliberately corrupted candidate must be caught and its deviation
    // reported.
    let case = &cases("conv2d", 7)[0];
    let corrupted = oracle_run(case, |inputs| {
        let mut out = candidate(&case.op, inputs);
        out.data[0] += 1e-6;
        out
    });
    assert!(!corrupted.passed, "corrupted candidate was accepted");
    assert!((corrupted.max_deviation - 1e-6).abs() < 1e-9);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 30.0, "oracle suite took {elapsed:.1} s");
    format!(
        "{total} cases over {} operations, max deviation {worst:.1e}, negative control caught ({:.1e}), {elapsed:.2} s",
        OPERATIONS.len(),
        corrupted.max_deviation
    )
}
