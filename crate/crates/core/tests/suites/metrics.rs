//! Bray–Curtis properties and evaluation over branch subsets.

use lcn4_core::data::{synth_generate, EpisodeSpec, Split, SynthSpec};
use lcn4_core::metrics::{bray_curtis, evaluate, Encoder, EvalOptions, EvalReport, Metric};
use lcn4_core::tensor::Tensor;
use lcn4_oracles::SplitMix;

/// Direct `Σ|a−b| / Σ|a+b|`.
fn bray_curtis_direct(a: &[f64], b: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..a.len() {
        num += (a[i] - b[i]).abs();
        den += (a[i] + b[i]).abs();
    }
    num / den
}

fn bray_curtis_checks() -> usize {
    let mut rng = SplitMix::new(0xbcd);
    let mut cases = 0;
    for _ in 0..500 {
        let n = 1 + rng.below(16);
        let a: Vec<f64> = (0..n).map(|_| rng.uniform().abs() + 1e-3).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.uniform().abs() * 3.0).collect();
        assert_eq!(bray_curtis(&a, &a), 0.0, "identity");
        let (ab, ba) = (bray_curtis(&a, &b), bray_curtis(&b, &a));
        assert_eq!(ab, ba, "symmetry");
        assert!((0.0..=1.0).contains(&ab), "range: {ab}");
        assert!((ab - bray_curtis_direct(&a, &b)).abs() < 1e-14);
        cases += 1;
    }
    // Disjoint supports are maximally far apart.
    assert_eq!(bray_curtis(&[1.0, 0.0], &[0.0, 2.0]), 1.0);
    assert_eq!(bray_curtis(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    cases
}

/// Four different fixed views of an image: mean colour per quadrant, per
/// row band, per column band, and a coarse intensity histogram.
struct Handcrafted {
    side: usize,
}

impl Encoder for Handcrafted {
    fn embed(&self, images: &Tensor) -> lcn4_core::Result<[Tensor; 4]> {
        let s = self.side;
        let n = images.shape()[0];
        let mut views: [Vec<f64>; 4] = Default::default();
        for im in images.data().chunks_exact(3 * s * s) {
            let px = |c: usize, y: usize, x: usize| im[(c * s + y) * s + x];
            for c in 0..3 {
                for (qy, qx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let mut sum = 0.0;
                    for y in qy * s / 2..(qy + 1) * s / 2 {
                        for x in qx * s / 2..(qx + 1) * s / 2 {
                            sum += px(c, y, x);
                        }
                    }
                    views[0].push(sum);
                }
                for band in 0..4 {
                    let rows = band * s / 4..(band + 1) * s / 4;
                    views[1].push(rows.clone().flat_map(|y| (0..s).map(move |x| (y, x))).map(|(y, x)| px(c, y, x)).sum());
                    views[2].push(rows.flat_map(|x| (0..s).map(move |y| (y, x))).map(|(y, x)| px(c, y, x)).sum());
                }
            }
            let mut hist = [1e-3; 8];
            for v in im {
                hist[((v.clamp(0.0, 0.999)) * 8.0) as usize] += 1.0;
            }
            views[3].extend_from_slice(&hist);
        }
        Ok([
            Tensor::new([n, 12], std::mem::take(&mut views[0]))?,
            Tensor::new([n, 12], std::mem::take(&mut views[1]))?,
            Tensor::new([n, 12], std::mem::take(&mut views[2]))?,
            Tensor::new([n, 8], std::mem::take(&mut views[3]))?,
        ])
    }
}

pub fn assert_valid_report(r: &EvalReport, episodes: usize) {
    assert_eq!(r.accuracies.len(), episodes);
    assert!(r.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
    assert!((0.0..=100.0).contains(&r.mean) && r.ci.is_finite() && r.ci >= 0.0);
    assert_eq!(r.confusion.len(), r.spec.way);
    for row in &r.confusion {
        assert_eq!(row.len(), r.spec.way);
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

/// Branch subsets of the fusion ablation.
pub const SUBSETS: [[bool; 4]; 4] = [
    [true, false, false, false],
    [true, true, false, false],
    [true, true, true, false],
    [true, true, true, true],
];

pub fn run() -> String {
    let cases = bray_curtis_checks();

    let data = synth_generate(&SynthSpec {
        base: 4,
        val: 2,
        novel: 5,
        per_class: 20,
        resolution: 16,
        seed: 5,
    })
    .unwrap();
    let encoder = Handcrafted { side: 16 };
    let spec = EpisodeSpec {
        way: 5,
        shot: 1,
        query: 15,
    };
    let mut summaries = Vec::new();
    for metric in [Metric::BrayCurtis, Metric::Cosine] {
        for active in SUBSETS {
            let opts = EvalOptions {
                metric,
                active,
                ..EvalOptions::default()
            };
            let r = evaluate(&encoder, &data, Split::Novel, spec, 25, 2, &opts).unwrap();
            assert_valid_report(&r, 50);
            assert_eq!(r.metric, metric);
            summaries.push(r.summary());
        }
    }
    format!(
        "{cases} Bray–Curtis cases (identity, symmetry, [0,1]); 8 subset×metric reports valid: {}",
        summaries.join(" ")
    )
}
