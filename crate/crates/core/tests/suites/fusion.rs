//! Weighted fusion of branch similarities and prediction.

use lcn4_core::metrics::{argmax_rows, fuse_and_predict, BranchWeights, SimilarityBundle};
use lcn4_core::tensor::Tensor;
use lcn4_oracles::SplitMix;

fn branches(rng: &mut SplitMix, rows: usize, way: usize) -> [Tensor; 4] {
    std::array::from_fn(|_| Tensor::from_fn([rows, way], |_| rng.uniform()))
}

fn scaled(z: &Tensor, c: f64) -> Tensor {
    Tensor::new(z.shape().to_vec(), z.data().iter().map(|v| v * c).collect()).unwrap()
}

pub fn run() -> String {
    let mut rng = SplitMix::new(0xf05e);
    let mut checked = 0;
    for _ in 0..50 {
        let (rows, way) = (1 + rng.below(20), 2 + rng.below(5));
        let z = branches(&mut rng, rows, way);
        let weights = BranchWeights {
            alpha: rng.uniform().abs(),
            beta: rng.uniform().abs(),
            gamma: rng.uniform().abs(),
        };
        let bundle = SimilarityBundle::new(z.clone(), weights);
        let base = fuse_and_predict(&bundle).unwrap();
        assert_eq!(base.len(), rows);

        // Positive scaling of the fused scores, or of every branch, keeps
        // the prediction.
        for c in [1e-3, 0.5, 3.0, 1e4] {
            assert_eq!(argmax_rows(&scaled(&bundle.fuse().unwrap(), c)), base);
            let bundle_c = SimilarityBundle::new(
                std::array::from_fn(|i| scaled(&z[i], c)),
                weights,
            );
            assert_eq!(fuse_and_predict(&bundle_c).unwrap(), base);
        }

        // Zero weights on branches 2–4 leave branch 1 alone.
        let only_first = SimilarityBundle::new(
            z.clone(),
            BranchWeights {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
            },
        );
        assert_eq!(fuse_and_predict(&only_first).unwrap(), argmax_rows(&z[0]));
        checked += 1;
    }

    // Default weights over four identical branches sum to 2.5·Z₁.
    let z1 = Tensor::from_fn([7, 5], |_| rng.uniform() * 10.0);
    let bundle = SimilarityBundle::new(std::array::from_fn(|_| z1.clone()), BranchWeights::default());
    let fused = bundle.fuse().unwrap();
    let err = fused
        .data()
        .iter()
        .zip(z1.data())
        .map(|(f, z)| (f - 2.5 * z).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-12, "Z − 2.5·Z₁ = {err:e}");

    format!("{checked} random bundles scale-invariant and reduce to Z₁ at zero weights; |Z − 2.5·Z₁| = {err:.1e}")
}
