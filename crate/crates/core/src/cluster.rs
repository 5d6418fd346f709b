//! Cell-wise feature clustering: persistent centroids maintained by a soft
//! k-means EMA during training, and per-cell Euclidean distance maps.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{gemm_view, GradFn, Graph, Tensor, TensorError, Var, View};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("centroid bank is not initialized")]
    Uninitialized,
    #[error("cannot seed {k} centroids from {cells} cells")]
    TooFewCells { k: usize, cells: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, ClusterError>;

pub const DEFAULT_EMA_MOMENTUM: f64 = 0.999;
pub const DEFAULT_SOFT_TEMPERATURE: f64 = 1.0;
const EMPTY_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidBank {
    /// `k×C`
    centroids: Tensor,
    pub momentum: f64,
    pub temperature: f64,
    initialized: bool,
    seed: u64,
}

impl CentroidBank {
    pub fn new(k: usize, channels: usize, seed: u64) -> Self {
        CentroidBank {
            centroids: Tensor::zeros([k, channels]),
            momentum: DEFAULT_EMA_MOMENTUM,
            temperature: DEFAULT_SOFT_TEMPERATURE,
            initialized: false,
            seed,
        }
    }

    /// A bank with explicit centroids, already initialized.
    pub fn from_centroids(centroids: Tensor) -> std::result::Result<Self, TensorError> {
        if centroids.shape().len() != 2 {
            return Err(TensorError::pre("centroid_bank", "centroids must be k×C"));
        }
        Ok(CentroidBank {
            centroids,
            momentum: DEFAULT_EMA_MOMENTUM,
            temperature: DEFAULT_SOFT_TEMPERATURE,
            initialized: true,
            seed: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.centroids.shape()[1]
    }

    pub fn centroids(&self) -> &Tensor {
        &self.centroids
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub(crate) fn restore(
        &mut self,
        centroids: Vec<f64>,
        initialized: bool,
    ) -> std::result::Result<(), TensorError> {
        self.centroids = Tensor::new(self.centroids.shape().to_vec(), centroids)?;
        self.initialized = initialized;
        Ok(())
    }

    /// Seeds the centroids with `k` distinct cells drawn uniformly without
    /// replacement from `cells` (`n×C`, row-major).
    pub fn initialize(&mut self, cells: &[f64]) -> Result<()> {
        let (k, c) = (self.k(), self.channels());
        let n = cells.len() / c;
        if n < k {
            return Err(ClusterError::TooFewCells { k, cells: n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let picks = sample(&mut rng, n, k);
        let data = self.centroids.data_mut();
        for (j, i) in picks.into_iter().enumerate() {
            data[j * c..(j + 1) * c].copy_from_slice(&cells[i * c..(i + 1) * c]);
        }
        self.initialized = true;
        Ok(())
    }

    /// One soft k-means EMA step: soft assignments `softmax(−d/τ)` over
    /// centroids, assignment-weighted means, then
    /// `c ← momentum·c + (1−momentum)·mean`. Centroids whose total weight is
    /// below 1e-8 stay put. Seeds the bank instead on first use.
    pub fn update(&mut self, cells: &[f64]) -> Result<()> {
        if !self.initialized {
            return self.initialize(cells);
        }
        let dist = pairwise_distances(cells, self.centroids.data(), self.channels());
        self.update_from_distances(cells, &dist);
        Ok(())
    }

    /// EMA step given the `n×k` distances of `cells` to the current centroids.
    fn update_from_distances(&mut self, cells: &[f64], dist: &[f64]) {
        let (k, c) = (self.k(), self.channels());
        let n = cells.len() / c;
        let mut soft = vec![0.0; n * k];
        let mut weight = vec![0.0; k];
        for (row, out) in dist.chunks_exact(k).zip(soft.chunks_exact_mut(k)) {
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let mut total = 0.0;
            for (s, d) in out.iter_mut().zip(row) {
                *s = (-(d - min) / self.temperature).exp();
                total += *s;
            }
            for (s, w) in out.iter_mut().zip(weight.iter_mut()) {
                *s /= total;
                *w += *s;
            }
        }
        // sums = softᵀ · cells
        let mut sums = vec![0.0; k * c];
        gemm_view(
            k,
            n,
            c,
            &soft,
            View::new(0, 1, k),
            cells,
            View::new(0, c, 1),
            0.0,
            &mut sums,
            View::new(0, c, 1),
        );
        let m = self.momentum;
        let cents = self.centroids.data_mut();
        for j in 0..k {
            if weight[j] < EMPTY_WEIGHT {
                continue;
            }
            for t in 0..c {
                let mean = sums[j * c + t] / weight[j];
                cents[j * c + t] = m * cents[j * c + t] + (1.0 - m) * mean;
            }
        }
    }

    /// Sum over cells of the squared distance to the nearest centroid.
    pub fn inertia(&self, cells: &[f64]) -> Result<f64> {
        if !self.initialized {
            return Err(ClusterError::Uninitialized);
        }
        let k = self.k();
        let dist = pairwise_distances(cells, self.centroids.data(), self.channels());
        Ok(dist
            .chunks(k)
            .map(|row| {
                let best = row.iter().copied().fold(f64::INFINITY, f64::min);
                best * best
            })
            .sum())
    }
}

fn pairwise_distances(cells: &[f64], centroids: &[f64], c: usize) -> Vec<f64> {
    let n = cells.len() / c;
    let k = centroids.len() / c;
    let mut out = Vec::with_capacity(n * k);
    for cell in cells.chunks_exact(c) {
        for cent in centroids.chunks_exact(c) {
            let sq: f64 = cell.iter().zip(cent).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(sq.sqrt());
        }
    }
    debug_assert_eq!(out.len(), n * k);
    out
}

/// Centroids are captured by value; no gradient ever reaches them.
struct Distances {
    centroids: Vec<f64>,
    channels: usize,
}

impl GradFn for Distances {
    fn name(&self) -> &'static str {
        "cluster_distances"
    }

    fn backward(
        &self,
        x: &[&[f64]],
        out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let c = self.channels;
        let k = self.centroids.len() / c;
        let cells = x[0];
        let mut gx = vec![0.0; cells.len()];
        for (i, cell) in cells.chunks_exact(c).enumerate() {
            let gi = &mut gx[i * c..(i + 1) * c];
            for j in 0..k {
                let d = out[i * k + j];
                if d == 0.0 {
                    continue;
                }
                let coef = g[i * k + j] / d;
                let cent = &self.centroids[j * c..(j + 1) * c];
                for t in 0..c {
                    gi[t] += coef * (cell[t] - cent[t]);
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Euclidean distances from every cell of a `B×H×W×C` map to every centroid,
/// giving a `B×H×W×k` distance map. Differentiable in the features only.
pub fn cluster_distances(g: &mut Graph, features: Var, bank: &CentroidBank) -> Result<Var> {
    if !bank.initialized {
        return Err(ClusterError::Uninitialized);
    }
    let shape = g.shape(features).to_vec();
    if shape.len() != 4 || shape[3] != bank.channels() {
        return Err(TensorError::dim("cluster_distances", &shape, bank.centroids.shape()).into());
    }
    let c = bank.channels();
    let data = pairwise_distances(g.value(features), bank.centroids.data(), c);
    let out_shape = vec![shape[0], shape[1], shape[2], bank.k()];
    Ok(g.custom(
        out_shape,
        data,
        &[features],
        Distances {
            centroids: bank.centroids.data().to_vec(),
            channels: c,
        },
    )?)
}

/// Training-time clustering step: seeds the bank from this batch if needed,
/// measures distances against the current centroids, then folds the batch
/// into the EMA.
pub fn cluster_train(g: &mut Graph, features: Var, bank: &mut CentroidBank) -> Result<Var> {
    if !bank.initialized {
        bank.initialize(g.value(features))?;
    }
    let out = cluster_distances(g, features, bank)?;
    bank.update_from_distances(g.value(features), g.value(out));
    Ok(out)
}
