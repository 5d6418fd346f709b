//! Classification and episodic losses, SGD with momentum, the segmented
//! learning-rate schedule and the alternating training loop.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{NetState, Network, StateRef, Taps};
use crate::data::{sample_episode, DatasetSplits, Episode, EpisodeSpec, Split};
use crate::metrics::{evaluate, BranchWeights, EvalOptions, NetworkEncoder};
use crate::params::ParamStore;
use crate::tensor::{Graph, TensorError, Var};
use crate::{Error, Result};

/// Clamp on row norms before cosine logits.
pub const NORM_EPS: f64 = 1e-12;

/// Mean cross-entropy of `feat·W` against base-class labels.
pub fn classification_loss(
    g: &mut Graph,
    net: &Network,
    feat: Var,
    labels: &[usize],
) -> Result<Var> {
    let logits = net.classify(g, feat)?;
    Ok(g.cross_entropy(logits, labels)?)
}

/// Prototype loss: class means of the support rows, cosine logits scaled by
/// `temperature` (a one-element var), mean cross-entropy over queries.
pub fn meta_loss(
    g: &mut Graph,
    support: Var,
    support_labels: &[usize],
    query: Var,
    query_labels: &[usize],
    way: usize,
    temperature: Var,
) -> Result<Var> {
    let s = g.shape(support).to_vec();
    if s.len() != 2 || s[0] != support_labels.len() {
        return Err(TensorError::dim("meta_loss", &s, &[support_labels.len()]).into());
    }
    let mut counts = vec![0usize; way];
    for &l in support_labels {
        if l >= way {
            return Err(TensorError::pre("meta_loss", format!("label {l} ≥ way {way}")).into());
        }
        counts[l] += 1;
    }
    if counts.contains(&0) {
        return Err(TensorError::pre("meta_loss", "every class needs a support example").into());
    }
    let mut avg = vec![0.0; way * s[0]];
    for (i, &l) in support_labels.iter().enumerate() {
        avg[l * s[0] + i] = 1.0 / counts[l] as f64;
    }
    let avg = g.constant_from(vec![way, s[0]], avg)?;
    let protos = g.matmul(avg, support)?;
    let protos = g.l2_normalize_rows(protos, NORM_EPS)?;
    let queries = g.l2_normalize_rows(query, NORM_EPS)?;
    let protos_t = g.transpose(protos)?;
    let cos = g.matmul(queries, protos_t)?;
    let logits = g.mul(cos, temperature)?;
    Ok(g.cross_entropy(logits, query_labels)?)
}

/// Segmented learning rate: the lr of the first `(bound, lr)` pair whose
/// bound exceeds the epoch, else the last lr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule(pub Vec<(usize, f64)>);

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.0
            .iter()
            .find(|(bound, _)| *bound > epoch)
            .or(self.0.last())
            .map_or(0.0, |&(_, lr)| lr)
    }
}

/// SGD with momentum and L2 weight decay on selected parameters:
/// `v ← μv + (∇ + λw)`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Applies one update from the gradients stored on the parameters.
    /// `decay[i]` selects which parameters receive weight decay.
    pub fn step(&mut self, params: &mut ParamStore, decay: &[bool], lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|(_, p)| vec![0.0; p.value.numel()])
                .collect();
        }
        for ((p, v), &d) in params.iter_mut().zip(&mut self.velocity).zip(decay) {
            let Some(grad) = p.value.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let wd = if d { self.weight_decay } else { 0.0 };
            let w = p.value.data_mut();
            for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(&grad) {
                *vi = self.momentum * *vi + gi + wd * *wi;
                *wi -= lr * *vi;
            }
        }
    }
}

/// Everything the training loop needs besides the network and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episode: EpisodeSpec,
    pub episodes_per_epoch: usize,
    pub epochs: usize,
    /// Classification steps per episodic step (1 = strict alternation).
    pub cls_ratio: f64,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub weights: BranchWeights,
    pub val_episodes: usize,
    /// Query images per class used when monitoring the validation split.
    pub val_query: usize,
    pub seed: u64,
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub cls_loss: f64,
    pub meta_loss: f64,
    /// Validation accuracy in percent (NaN without a usable val split).
    pub val_acc: f64,
    pub lr: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,cls_loss,meta_loss,val_acc,lr";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.4},{}",
            self.epoch, self.cls_loss, self.meta_loss, self.val_acc, self.lr
        )
    }
}

fn check_finite(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { epoch, step, loss })
    }
}

/// Sum of the prototype losses of all four taps, weighted `(1, α, β, γ)`.
pub fn episodic_loss(
    g: &mut Graph,
    net: &Network,
    taps: &Taps,
    episode: &Episode,
    way: usize,
    weights: &BranchWeights,
) -> Result<Var> {
    let ns = episode.support.len();
    let nq = episode.query.len();
    let temperature = net.params().bind(g, net.temperature());
    let mut total: Option<Var> = None;
    for (tap, w) in taps.branches().into_iter().zip(weights.as_array()) {
        if w == 0.0 {
            continue;
        }
        let support = g.narrow(tap, 0, 0, ns)?;
        let query = g.narrow(tap, 0, ns, nq)?;
        let l = meta_loss(
            g,
            support,
            &episode.support_labels,
            query,
            &episode.query_labels,
            way,
            temperature,
        )?;
        let l = g.scale(l, w);
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::Config("all episodic loss weights are zero".into()))
}

fn apply_step(net: &mut Network, g: &mut Graph, loss: Var, sgd: &mut Sgd, lr: f64) -> Result<()> {
    g.backward(loss)?;
    let params = net.params_mut();
    params.zero_grads();
    params.collect_grads(g);
    let decay = net.decay_mask().to_vec();
    sgd.step(net.params_mut(), &decay, lr);
    Ok(())
}

/// Random classification batch from the base split: distinct images, labels
/// are positions in the base class list.
fn sample_batch(
    base: &[usize],
    offsets: &[usize],
    size: usize,
    rng: &mut impl Rng,
) -> (Vec<(usize, usize)>, Vec<usize>) {
    let total = *offsets.last().expect("non-empty base split");
    let picks = sample(rng, total, size.min(total));
    let mut items = Vec::with_capacity(size);
    let mut labels = Vec::with_capacity(size);
    for p in picks {
        let label = offsets.partition_point(|&o| o <= p) - 1;
        items.push((base[label], p - offsets[label]));
        labels.push(label);
    }
    (items, labels)
}

/// Trains `net` with alternating classification and episodic steps.
/// `on_epoch` runs after every epoch (logging, checkpoints).
pub fn train(
    net: &mut Network,
    state: &mut NetState,
    data: &DatasetSplits,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &Network, &NetState) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let base = data.classes_in(Split::Base);
    if base.len() != net.base_classes() {
        return Err(Error::Config(format!(
            "network classifies {} base classes, data has {}",
            net.base_classes(),
            base.len()
        )));
    }
    let mut offsets = vec![0];
    for &c in &base {
        offsets.push(offsets.last().unwrap() + data.classes[c].images.len());
    }
    if cfg.batch_size < 2 && cfg.cls_ratio > 0.0 {
        return Err(Error::Config("batch_size must be at least 2".into()));
    }
    let val_classes = data.classes_in(Split::Val).len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let way = cfg.episode.way;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.lr_at(epoch);
        let (mut cls_sum, mut cls_n, mut meta_sum, mut meta_n) = (0.0, 0usize, 0.0, 0usize);
        let mut credit = 0.0;
        for step in 0..cfg.episodes_per_epoch {
            credit += cfg.cls_ratio;
            while credit >= 1.0 - 1e-9 {
                credit -= 1.0;
                let (items, labels) = sample_batch(&base, &offsets, cfg.batch_size, &mut rng);
                let mut g = Graph::new();
                let x = g.constant(&data.batch(&items));
                let taps = net.forward(&mut g, x, StateRef::Train(state))?;
                let loss = classification_loss(&mut g, net, taps.feat2, &labels)?;
                let value = g.value(loss)[0];
                check_finite(value, epoch, step)?;
                apply_step(net, &mut g, loss, &mut sgd, lr)?;
                cls_sum += value;
                cls_n += 1;
            }
            let ep = sample_episode(data, Split::Base, cfg.episode, &mut rng)?;
            let items: Vec<(usize, usize)> = ep.support.iter().chain(&ep.query).copied().collect();
            let mut g = Graph::new();
            let x = g.constant(&data.batch(&items));
            let taps = net.forward(&mut g, x, StateRef::Train(state))?;
            let loss = episodic_loss(&mut g, net, &taps, &ep, way, &cfg.weights)?;
            let value = g.value(loss)[0];
            check_finite(value, epoch, step)?;
            apply_step(net, &mut g, loss, &mut sgd, lr)?;
            meta_sum += value;
            meta_n += 1;
        }
        let val_acc = if val_classes >= 2 && cfg.val_episodes > 0 {
            let spec = EpisodeSpec {
                way: way.min(val_classes),
                shot: cfg.episode.shot,
                query: cfg.val_query,
            };
            let opts = EvalOptions {
                weights: cfg.weights,
                seed: cfg.seed ^ 0x7a1,
                ..EvalOptions::default()
            };
            let encoder = NetworkEncoder { net, state };
            evaluate(&encoder, data, Split::Val, spec, cfg.val_episodes, 1, &opts)?.mean
        } else {
            f64::NAN
        };
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        let m = EpochMetrics {
            epoch,
            cls_loss: mean(cls_sum, cls_n),
            meta_loss: mean(meta_sum, meta_n),
            val_acc,
            lr,
        };
        on_epoch(&m, net, state)?;
        history.push(m);
    }
    Ok(history)
}
