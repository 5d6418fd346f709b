//! Confidence intervals and confusion matrices.

use lcn4_core::data::EpisodeSpec;
use lcn4_core::metrics::{confidence_interval, EvalReport, Metric};
use lcn4_oracles::SplitMix;

/// `1.96·σ/√n` with the population standard deviation, evaluated directly.
fn half_width(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    1.96 * var.sqrt() / n.sqrt()
}

pub fn run() -> String {
    let fixed: [&[f64]; 4] = [
        &[0.8, 1.0, 0.9, 0.9],
        &[0.2, 0.2, 0.2],
        &[1.0, 0.0],
        &[0.4, 0.6, 0.733, 0.52, 0.98, 0.1, 0.25],
    ];
    let mut worst: f64 = 0.0;
    for values in fixed {
        let (mean, ci) = confidence_interval(values);
        let expect_mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!((mean - expect_mean).abs() <= 1e-12);
        worst = worst.max((ci - half_width(values)).abs());
    }
    // Worked by hand: mean 0.9, σ² = 0.02 / 4.
    let (_, ci) = confidence_interval(fixed[0]);
    worst = worst.max((ci - 1.96 * 0.005f64.sqrt() / 2.0).abs());
    assert!(confidence_interval(fixed[1]).1 <= 1e-12);
    assert!(worst <= 1e-12, "half-width off the closed form by {worst:e}");

    let mut rng = SplitMix::new(0xc0f);
    let mut row_err: f64 = 0.0;
    for _ in 0..100 {
        let way = 2 + rng.below(6);
        let counts: Vec<Vec<usize>> = (0..way)
            .map(|_| (0..way).map(|_| rng.below(40)).collect())
            .collect();
        let counts: Vec<Vec<usize>> = counts
            .into_iter()
            .map(|mut row| {
                if row.iter().all(|&c| c == 0) {
                    row[0] = 1;
                }
                row
            })
            .collect();
        let accuracies: Vec<f64> = (0..10).map(|_| rng.uniform().abs()).collect();
        let spec = EpisodeSpec {
            way,
            shot: 1,
            query: 15,
        };
        let r = EvalReport::from_episodes(accuracies.clone(), &counts, spec, Metric::Cosine);
        for row in &r.confusion {
            row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        assert!((r.ci - 100.0 * half_width(&accuracies)).abs() <= 1e-10);
    }
    assert!(row_err <= 1e-9, "confusion row off 1 by {row_err:e}");

    format!("CI half-width within {worst:.1e} of 1.96·σ/√n, confusion rows within {row_err:.1e} of 1")
}
