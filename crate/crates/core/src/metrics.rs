//! Prototype similarities, four-branch fusion, prediction and episodic
//! evaluation statistics.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{NetState, Network, StateRef};
use crate::data::{sample_episode, DatasetSplits, EpisodeSpec, Split};
use crate::pgm::write_pgm;
use crate::tensor::{Graph, Tensor, TensorError};
use crate::{Error, Result};

/// Lower bound on vector norms in cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;
/// Normal quantile of a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Metric {
    #[default]
    #[serde(rename = "cosine")]
    Cosine,
    #[serde(rename = "bcd")]
    BrayCurtis,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::BrayCurtis => "bcd",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "bcd" | "bray-curtis" => Ok(Metric::BrayCurtis),
            other => Err(Error::Config(format!(
                "unknown metric {other:?} (expected cosine or bcd)"
            ))),
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(COSINE_EPS);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(COSINE_EPS);
    dot / (na * nb)
}

/// `Σ|aᵢ−bᵢ| / Σ|aᵢ+bᵢ|`, defined as 0 when the denominator vanishes.
pub fn bray_curtis(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    let den: f64 = a.iter().zip(b).map(|(x, y)| (x + y).abs()).sum();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Larger-is-better similarity under `metric`.
pub fn similarity(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Cosine => cosine(a, b),
        Metric::BrayCurtis => 1.0 - bray_curtis(a, b),
    }
}

/// Class means of support rows grouped by `labels ∈ 0..way`.
pub fn prototypes(support: &[&[f64]], labels: &[usize], way: usize) -> Result<Vec<Vec<f64>>> {
    let dim = support.first().map_or(0, |r| r.len());
    let mut sums = vec![vec![0.0; dim]; way];
    let mut counts = vec![0usize; way];
    for (row, &l) in support.iter().zip(labels) {
        if l >= way || row.len() != dim {
            return Err(Error::Tensor(TensorError::Precondition {
                op: "prototypes",
                msg: format!("label {l} or width {} out of range", row.len()),
            }));
        }
        counts[l] += 1;
        sums[l].iter_mut().zip(*row).for_each(|(s, v)| *s += v);
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n == 0 {
            return Err(Error::Sampling("a class has no support examples".into()));
        }
        s.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(sums)
}

/// `[nq × way]` similarities between query rows and class prototypes.
pub fn branch_similarity(
    support: &[&[f64]],
    labels: &[usize],
    queries: &[&[f64]],
    way: usize,
    metric: Metric,
) -> Result<Tensor> {
    let protos = prototypes(support, labels, way)?;
    let mut out = Vec::with_capacity(queries.len() * way);
    for q in queries {
        for p in &protos {
            out.push(similarity(metric, q, p));
        }
    }
    Ok(Tensor::new([queries.len(), way], out)?)
}

/// Fusion weights of branches 2–4 (branch 1 has unit weight).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for BranchWeights {
    fn default() -> Self {
        BranchWeights {
            alpha: 0.75,
            beta: 0.5,
            gamma: 0.25,
        }
    }
}

impl BranchWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [1.0, self.alpha, self.beta, self.gamma]
    }
}

/// Four similarity matrices and how to combine them.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBundle {
    pub z: [Tensor; 4],
    pub weights: BranchWeights,
    /// Which branches take part; disabled branches are left out of the sum.
    pub active: [bool; 4],
}

impl SimilarityBundle {
    pub fn new(z: [Tensor; 4], weights: BranchWeights) -> Self {
        SimilarityBundle {
            z,
            weights,
            active: [true; 4],
        }
    }

    /// `Z = Z₁ + αZ₂ + βZ₃ + γZ₄`, summed left to right over the active
    /// branches.
    pub fn fuse(&self) -> Result<Tensor> {
        let shape = self.z[0].shape().to_vec();
        if let Some(bad) = self.z.iter().find(|z| z.shape() != shape.as_slice()) {
            return Err(TensorError::dim("fuse", &shape, bad.shape()).into());
        }
        let w = self.weights.as_array();
        let mut out = vec![0.0; self.z[0].numel()];
        for i in (0..4).filter(|&i| self.active[i]) {
            out.iter_mut()
                .zip(self.z[i].data())
                .for_each(|(o, v)| *o += w[i] * v);
        }
        Ok(Tensor::new(shape, out)?)
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(z: &Tensor) -> Vec<usize> {
    let cols = z.shape().last().copied().unwrap_or(1).max(1);
    z.data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn fuse_and_predict(bundle: &SimilarityBundle) -> Result<Vec<usize>> {
    Ok(argmax_rows(&bundle.fuse()?))
}

/// Mean and 95% half-width `1.96·σ/√n` (population σ) of `values`.
pub fn confidence_interval(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, Z_95 * var.sqrt() / n.sqrt())
}

/// Aggregated evaluation over many episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean accuracy in percent.
    pub mean: f64,
    /// 95% half-width in percent.
    pub ci: f64,
    /// Per-episode accuracies in `[0, 1]`.
    pub accuracies: Vec<f64>,
    /// Row-normalized `way×way` confusion (rows: true label).
    pub confusion: Vec<Vec<f64>>,
    pub spec: EpisodeSpec,
    pub metric: Metric,
}

impl EvalReport {
    pub fn from_episodes(
        accuracies: Vec<f64>,
        counts: &[Vec<usize>],
        spec: EpisodeSpec,
        metric: Metric,
    ) -> Self {
        let (mean, ci) = confidence_interval(&accuracies);
        let confusion = counts
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect();
        EvalReport {
            mean: mean * 100.0,
            ci: ci * 100.0,
            accuracies,
            confusion,
            spec,
            metric,
        }
    }

    /// `"mean±ci"` with two decimals, in percent.
    pub fn summary(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.ci)
    }

    /// `metric,value` rows followed by the confusion matrix block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        s.push_str(&format!("mean_accuracy,{:.6}\n", self.mean));
        s.push_str(&format!("ci95,{:.6}\n", self.ci));
        s.push_str(&format!("episodes,{}\n", self.accuracies.len()));
        s.push_str(&format!("way,{}\n", self.spec.way));
        s.push_str(&format!("shot,{}\n", self.spec.shot));
        s.push_str(&format!("query,{}\n", self.spec.query));
        s.push_str(&format!("similarity,{}\n", self.metric));
        s.push_str("\nconfusion");
        for j in 0..self.confusion.len() {
            s.push_str(&format!(",pred{j}"));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&format!("true{i}"));
            for v in row {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push('\n');
        }
        s
    }

    /// Greyscale heatmap of the confusion matrix, `cell` pixels per entry.
    pub fn write_heatmap(&self, path: &Path, cell: usize) -> Result<()> {
        let k = self.confusion.len();
        let side = k * cell;
        let mut pixels = vec![0u8; side * side];
        for y in 0..side {
            for x in 0..side {
                let v = self.confusion[y / cell][x / cell];
                pixels[y * side + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        write_pgm(path, side, side, &pixels)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Produces the four branch embeddings for a batch of `B×3×R×R` images,
/// each `B×Dᵢ`.
pub trait Encoder {
    fn embed(&self, images: &Tensor) -> Result<[Tensor; 4]>;
}

/// A trained network in evaluation mode.
#[derive(Debug, Clone, Copy)]
pub struct NetworkEncoder<'a> {
    pub net: &'a Network,
    pub state: &'a NetState,
}

impl Encoder for NetworkEncoder<'_> {
    fn embed(&self, images: &Tensor) -> Result<[Tensor; 4]> {
        let mut g = Graph::inference();
        let x = g.constant(images);
        let taps = self.net.forward(&mut g, x, StateRef::Eval(self.state))?;
        Ok(taps.branches().map(|v| g.tensor(v)))
    }
}

/// Branch embeddings of every image of a split, computed once.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    rows: HashMap<(usize, usize), [Vec<f64>; 4]>,
}

impl EmbeddingTable {
    pub fn build(
        encoder: &impl Encoder,
        data: &DatasetSplits,
        split: Split,
        batch_size: usize,
    ) -> Result<Self> {
        let items: Vec<(usize, usize)> = data
            .classes_in(split)
            .into_iter()
            .flat_map(|c| (0..data.classes[c].images.len()).map(move |i| (c, i)))
            .collect();
        let mut rows = HashMap::with_capacity(items.len());
        for chunk in items.chunks(batch_size.max(1)) {
            let branches = encoder.embed(&data.batch(chunk))?;
            for (r, &item) in chunk.iter().enumerate() {
                let row = std::array::from_fn(|b| {
                    let d = branches[b].shape()[1];
                    branches[b].data()[r * d..(r + 1) * d].to_vec()
                });
                rows.insert(item, row);
            }
        }
        Ok(EmbeddingTable { rows })
    }

    pub fn get(&self, item: (usize, usize), branch: usize) -> &[f64] {
        &self.rows[&item][branch]
    }
}

/// Evaluation settings shared by validation and the final protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub metric: Metric,
    pub weights: BranchWeights,
    pub active: [bool; 4],
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metric: Metric::Cosine,
            weights: BranchWeights::default(),
            active: [true; 4],
            seed: 0,
        }
    }
}

/// Runs `episodes` episodes of `spec` on `split` against precomputed
/// embeddings.
pub fn evaluate_table(
    table: &EmbeddingTable,
    data: &DatasetSplits,
    split: Split,
    spec: EpisodeSpec,
    episodes: usize,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut accuracies = Vec::with_capacity(episodes);
    let mut counts = vec![vec![0usize; spec.way]; spec.way];
    for _ in 0..episodes {
        let ep = sample_episode(data, split, spec, &mut rng)?;
        let z = std::array::from_fn(|b| {
            let support: Vec<&[f64]> = ep.support.iter().map(|&i| table.get(i, b)).collect();
            let query: Vec<&[f64]> = ep.query.iter().map(|&i| table.get(i, b)).collect();
            branch_similarity(&support, &ep.support_labels, &query, spec.way, opts.metric)
        });
        let [z1, z2, z3, z4] = z;
        let bundle = SimilarityBundle {
            z: [z1?, z2?, z3?, z4?],
            weights: opts.weights,
            active: opts.active,
        };
        let pred = fuse_and_predict(&bundle)?;
        let mut correct = 0;
        for (&p, &t) in pred.iter().zip(&ep.query_labels) {
            counts[t][p] += 1;
            correct += usize::from(p == t);
        }
        accuracies.push(correct as f64 / pred.len() as f64);
    }
    Ok(EvalReport::from_episodes(
        accuracies,
        &counts,
        spec,
        opts.metric,
    ))
}

/// Embeds `split` once and evaluates `episodes_per_epoch × epochs`
/// episodes.
pub fn evaluate(
    encoder: &impl Encoder,
    data: &DatasetSplits,
    split: Split,
    spec: EpisodeSpec,
    episodes_per_epoch: usize,
    epochs: usize,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let table = EmbeddingTable::build(encoder, data, split, 50)?;
    evaluate_table(&table, data, split, spec, episodes_per_epoch * epochs, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bray_curtis_hand_values() {
        assert_eq!(bray_curtis(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(bray_curtis(&[2.0, 0.0], &[0.0, 2.0]), 1.0);
        assert_eq!(bray_curtis(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(
            similarity(Metric::BrayCurtis, &[1.0, 0.0], &[0.0, 1.0]),
            0.0
        );
    }

    #[test]
    fn cosine_clamps_zero_norm() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_go_low() {
        let z = Tensor::new([2, 3], vec![1.0, 3.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&z), vec![1, 0]);
    }

    #[test]
    fn fusion_of_identical_branches() {
        let z1 = Tensor::from_fn([3, 4], |i| (i as f64 * 0.7).sin());
        let bundle = SimilarityBundle::new(
            [z1.clone(), z1.clone(), z1.clone(), z1.clone()],
            BranchWeights::default(),
        );
        let fused = bundle.fuse().unwrap();
        for (f, z) in fused.data().iter().zip(z1.data()) {
            assert!((f - 2.5 * z).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_and_summary_format() {
        let report = EvalReport::from_episodes(
            vec![1.0, 1.0],
            &[vec![2, 0], vec![0, 2]],
            EpisodeSpec {
                way: 2,
                shot: 1,
                query: 1,
            },
            Metric::Cosine,
        );
        assert_eq!(report.summary(), "100.00±0.00");
        let csv = report.to_csv();
        assert!(csv.starts_with("metric,value\n"));
        assert!(csv.contains("true1,0.000000,1.000000"));
    }
}
