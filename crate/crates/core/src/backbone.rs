//! ConvNet-4 style backbone with optional location-aware clustering after
//! the two stem blocks and constellation submodules after the last two
//! blocks. Exposes the four embedding taps used for metric fusion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{CentroidBank, DEFAULT_EMA_MOMENTUM, DEFAULT_SOFT_TEMPERATURE};
use crate::constell::{
    constell_forward, lafcm_forward, AttentionScale, AttentionWeights, BankAccess, FusionWeights,
    LafcmFlags,
};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{BatchNormMode, Graph, RunningStats, Tensor, TensorError, Var};
use crate::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub channels: [usize; 4],
    pub clusters: usize,
    pub heads: usize,
    pub fourier_count: usize,
    pub amplitude: f64,
    pub resolution: usize,
    pub stem1_lafcm: bool,
    pub stem2_lafcm: bool,
    pub constell1: bool,
    pub constell2: bool,
    pub nfc: bool,
    pub cfc: bool,
    pub fdc: bool,
    pub attention_scale: AttentionScale,
    pub centroid_momentum: f64,
    pub soft_temperature: f64,
    pub temperature_init: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            channels: [64; 4],
            clusters: 64,
            heads: 8,
            fourier_count: 64,
            amplitude: 1.0,
            resolution: 84,
            stem1_lafcm: true,
            stem2_lafcm: true,
            constell1: true,
            constell2: true,
            nfc: true,
            cfc: true,
            fdc: true,
            attention_scale: AttentionScale::PerHead,
            centroid_momentum: DEFAULT_EMA_MOMENTUM,
            soft_temperature: DEFAULT_SOFT_TEMPERATURE,
            temperature_init: 10.0,
        }
    }
}

impl NetworkConfig {
    /// Flags of the clustering module inside the stems, which never use
    /// frequency compensation.
    pub fn stem_flags(&self) -> LafcmFlags {
        LafcmFlags {
            nfc: self.nfc,
            cfc: self.cfc,
            fdc: false,
        }
    }

    pub fn constell_flags(&self) -> LafcmFlags {
        LafcmFlags {
            nfc: self.nfc,
            cfc: self.cfc,
            fdc: self.fdc,
        }
    }

    /// Whether a constellation submodule actually runs after block 3 (`0`)
    /// or block 4 (`1`). Without clustering there are no distance maps to
    /// attend over, so the block reduces to its convolution.
    pub fn constell_active(&self, which: usize) -> bool {
        let on = [self.constell1, self.constell2][which];
        on && self.cfc
    }

    /// Whether the stem after block `which` (0 or 1) contributes distance
    /// maps to the conv stream.
    fn stem_lafcm(&self, which: usize) -> bool {
        [self.stem1_lafcm, self.stem2_lafcm][which]
    }

    /// Spatial size after each of the four blocks.
    pub fn spatial_sizes(&self) -> [usize; 4] {
        let mut s = self.resolution;
        let mut out = [0; 4];
        for o in &mut out {
            s /= 2;
            *o = s;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.channels.iter().any(|&c| c == 0 || c % 2 != 0) {
            return bad(format!(
                "channels must be positive and even, got {:?}",
                self.channels
            ));
        }
        if self.clusters == 0 || !self.clusters.is_multiple_of(4) {
            return bad(format!(
                "clusters must be a positive multiple of 4, got {}",
                self.clusters
            ));
        }
        if self.heads == 0 || !self.clusters.is_multiple_of(self.heads) {
            return bad(format!(
                "clusters ({}) must be divisible by heads ({})",
                self.clusters, self.heads
            ));
        }
        if self.fourier_count < 2 {
            return bad(format!(
                "fourier_count must be at least 2, got {}",
                self.fourier_count
            ));
        }
        if self.fdc && self.fourier_count < self.clusters / 4 {
            return bad(format!(
                "fourier_count ({}) must be at least clusters/4 ({})",
                self.fourier_count,
                self.clusters / 4
            ));
        }
        self.constell_flags().validate()?;
        if self.resolution < 16 || !self.resolution.is_multiple_of(4) {
            return bad(format!(
                "resolution must be a multiple of 4 and at least 16, got {}",
                self.resolution
            ));
        }
        if !(0.0..=1.0).contains(&self.centroid_momentum) {
            return bad(format!(
                "centroid_momentum must lie in [0, 1], got {}",
                self.centroid_momentum
            ));
        }
        // Written so that NaN is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.soft_temperature > 0.0) {
            return bad(format!(
                "soft_temperature must be positive, got {}",
                self.soft_temperature
            ));
        }
        if !self.amplitude.is_finite() || !self.temperature_init.is_finite() {
            return bad("amplitude and temperature_init must be finite".into());
        }
        Ok(())
    }

    /// Input channels of each conv block, accounting for distance maps
    /// concatenated by the stems.
    pub fn block_inputs(&self) -> [usize; 4] {
        let extra = |i: usize| {
            if self.stem_lafcm(i) && self.cfc {
                self.clusters
            } else {
                0
            }
        };
        [
            3,
            self.channels[0] + extra(0),
            self.channels[1] + extra(1),
            self.channels[2],
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    kernel: ParamId,
    gamma: ParamId,
    beta: ParamId,
    bn: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConstellBlock {
    attn: [ParamId; 5],
    kernel: ParamId,
    gamma: ParamId,
    beta: ParamId,
    bn: usize,
    bank: usize,
}

/// Mutable statistics of a network: batch-norm running estimates and
/// centroid banks. Kept apart from the parameters so that evaluation only
/// needs shared references.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub bn: Vec<RunningStats>,
    pub banks: Vec<CentroidBank>,
}

/// Training mode updates `NetState`; evaluation only reads it.
#[derive(Debug)]
pub enum StateRef<'a> {
    Train(&'a mut NetState),
    Eval(&'a NetState),
}

impl StateRef<'_> {
    fn bn(&mut self, i: usize) -> BatchNormMode<'_> {
        match self {
            StateRef::Train(s) => BatchNormMode::Train(&mut s.bn[i]),
            StateRef::Eval(s) => BatchNormMode::Eval(&s.bn[i]),
        }
    }

    fn bank(&mut self, i: usize) -> BankAccess<'_> {
        match self {
            StateRef::Train(s) => BankAccess::Train(&mut s.banks[i]),
            StateRef::Eval(s) => BankAccess::Eval(&s.banks[i]),
        }
    }
}

/// The four embedding taps of one forward pass, each `B×D`.
#[derive(Debug, Clone, Copy)]
pub struct Taps {
    /// Pooled output of the third block.
    pub feat1: Var,
    /// Pooled output of the fourth block.
    pub feat2: Var,
    /// `feat2` after a learned square projection.
    pub logit_embed1: Var,
    /// Pooled last-block distance maps (zeros when absent) concatenated
    /// with `feat2`.
    pub logit_embed2: Var,
}

impl Taps {
    /// Branch order used by similarity fusion: `Z₁..Z₄`.
    pub fn branches(&self) -> [Var; 4] {
        [self.logit_embed1, self.logit_embed2, self.feat1, self.feat2]
    }
}

/// Trainable network: parameters plus the static wiring.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    base_classes: usize,
    seed: u64,
    params: ParamStore,
    blocks: [ConvBlock; 4],
    stem_banks: [Option<usize>; 2],
    constell: [Option<ConstellBlock>; 2],
    projection: ParamId,
    classifier: ParamId,
    temperature: ParamId,
    decay: Vec<bool>,
}

impl Network {
    /// Builds a freshly initialized network and its state.
    pub fn new(config: NetworkConfig, base_classes: usize, seed: u64) -> Result<(Self, NetState)> {
        config.validate()?;
        if base_classes == 0 {
            return Err(Error::Config(
                "classifier needs at least one base class".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut decay = Vec::new();
        let mut state = NetState {
            bn: Vec::new(),
            banks: Vec::new(),
        };
        let k = config.clusters;
        let inputs = config.block_inputs();

        let add_bn = |params: &mut ParamStore, decay: &mut Vec<bool>, name: &str, c: usize| {
            let gamma = params.add(format!("{name}.bn.gamma"), Tensor::full([c], 1.0));
            let beta = params.add(format!("{name}.bn.beta"), Tensor::zeros([c]));
            decay.extend([false, false]);
            (gamma, beta)
        };

        let mut blocks = Vec::with_capacity(4);
        for (i, (&cin, &cout)) in inputs.iter().zip(&config.channels).enumerate() {
            let name = format!("block{}", i + 1);
            let kernel = params.add_normal(
                format!("{name}.conv"),
                &[cout, cin, 3, 3],
                cin * 9,
                2.0,
                &mut rng,
            );
            decay.push(true);
            let (gamma, beta) = add_bn(&mut params, &mut decay, &name, cout);
            state.bn.push(RunningStats::new(cout));
            blocks.push(ConvBlock {
                kernel,
                gamma,
                beta,
                bn: state.bn.len() - 1,
            });
        }

        let new_bank = |state: &mut NetState, c: usize, salt: u64| {
            let mut bank = CentroidBank::new(
                k,
                c,
                seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(salt + 1)),
            );
            bank.momentum = config.centroid_momentum;
            bank.temperature = config.soft_temperature;
            state.banks.push(bank);
            state.banks.len() - 1
        };

        let mut stem_banks = [None; 2];
        for (i, slot) in stem_banks.iter_mut().enumerate() {
            if config.stem_lafcm(i) && config.cfc {
                *slot = Some(new_bank(&mut state, config.channels[i], i as u64));
            }
        }

        let mut constell = [None; 2];
        for (i, slot) in constell.iter_mut().enumerate() {
            if !config.constell_active(i) {
                continue;
            }
            let c = config.channels[2 + i];
            let name = format!("constell{}", i + 1);
            let attn = ["query", "key", "value", "out1", "out2"].map(|w| {
                decay.push(true);
                params.add_normal(format!("{name}.attn.{w}"), &[k, k], k, 1.0, &mut rng)
            });
            let kernel = params.add_normal(
                format!("{name}.fusion"),
                &[c, c + k, 1, 1],
                c + k,
                2.0,
                &mut rng,
            );
            decay.push(true);
            let (gamma, beta) = add_bn(&mut params, &mut decay, &name, c);
            state.bn.push(RunningStats::new(c));
            let bn = state.bn.len() - 1;
            let bank = new_bank(&mut state, c, 2 + i as u64);
            *slot = Some(ConstellBlock {
                attn,
                kernel,
                gamma,
                beta,
                bn,
                bank,
            });
        }

        let c4 = config.channels[3];
        let projection = params.add_normal("head.projection", &[c4, c4], c4, 1.0, &mut rng);
        let classifier =
            params.add_normal("head.classifier", &[c4, base_classes], c4, 1.0, &mut rng);
        let temperature = params.add(
            "head.temperature",
            Tensor::full([1], config.temperature_init),
        );
        decay.extend([true, true, false]);

        let net = Network {
            config,
            base_classes,
            seed,
            params,
            blocks: [blocks[0], blocks[1], blocks[2], blocks[3]],
            stem_banks,
            constell,
            projection,
            classifier,
            temperature,
            decay,
        };
        Ok((net, state))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// The seed the network was initialized from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn base_classes(&self) -> usize {
        self.base_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Whether weight decay applies to each parameter, in store order.
    pub fn decay_mask(&self) -> &[bool] {
        &self.decay
    }

    pub fn classifier(&self) -> ParamId {
        self.classifier
    }

    pub fn temperature(&self) -> ParamId {
        self.temperature
    }

    /// Dimension of each tap in branch order `Z₁..Z₄`.
    pub fn tap_dims(&self) -> [usize; 4] {
        let c3 = self.config.channels[2];
        let c4 = self.config.channels[3];
        [c4, self.config.clusters + c4, c3, c4]
    }

    fn conv_block(
        &self,
        g: &mut Graph,
        x: Var,
        block: &ConvBlock,
        state: &mut StateRef<'_>,
    ) -> Result<Var> {
        let kernel = self.params.bind(g, block.kernel);
        let gamma = self.params.bind(g, block.gamma);
        let beta = self.params.bind(g, block.beta);
        let y = g.conv2d(x, kernel)?;
        let y = g.batchnorm2d(y, gamma, beta, state.bn(block.bn))?;
        Ok(g.relu(y))
    }

    /// Stem block `which` (0 or 1) on an NCHW input: conv → bn → relu → pool,
    /// then the clustering module when configured, with distance maps
    /// concatenated to the features.
    pub fn stem_forward(
        &self,
        g: &mut Graph,
        x: Var,
        which: usize,
        state: &mut StateRef<'_>,
    ) -> Result<Var> {
        let y = self.conv_block(g, x, &self.blocks[which], state)?;
        let y = g.maxpool2d(y)?;
        if !self.config.stem_lafcm(which) {
            return Ok(y);
        }
        let nhwc = g.permute(y, &[0, 2, 3, 1])?;
        let bank = self.stem_banks[which].map(|i| state.bank(i));
        let out = lafcm_forward(
            g,
            nhwc,
            self.config.stem_flags(),
            bank,
            self.config.fourier_count,
            self.config.amplitude,
        )?;
        let merged = match out.distances {
            Some(d) => g.concat(&[out.features, d], 3)?,
            None => out.features,
        };
        Ok(g.permute(merged, &[0, 3, 1, 2])?)
    }

    /// Constellation block `which` (0 or 1) on an NCHW input. Returns the
    /// NHWC output map and the distance maps when the submodule ran.
    fn constell_block(
        &self,
        g: &mut Graph,
        x: Var,
        which: usize,
        state: &mut StateRef<'_>,
    ) -> Result<(Var, Option<Var>)> {
        let y = self.conv_block(g, x, &self.blocks[2 + which], state)?;
        let y = crop_even(g, y)?;
        let y = g.maxpool2d(y)?;
        let nhwc = g.permute(y, &[0, 2, 3, 1])?;
        let Some(block) = &self.constell[which] else {
            return Ok((nhwc, None));
        };
        let [query, key, value, out1, out2] = block.attn.map(|id| self.params.bind(g, id));
        let attn = AttentionWeights {
            query,
            key,
            value,
            out1,
            out2,
        };
        let fusion = FusionWeights {
            kernel: self.params.bind(g, block.kernel),
            gamma: self.params.bind(g, block.gamma),
            beta: self.params.bind(g, block.beta),
        };
        let (bank, bn) = match state {
            StateRef::Train(s) => {
                let s = &mut **s;
                (
                    BankAccess::Train(&mut s.banks[block.bank]),
                    BatchNormMode::Train(&mut s.bn[block.bn]),
                )
            }
            StateRef::Eval(s) => (
                BankAccess::Eval(&s.banks[block.bank]),
                BatchNormMode::Eval(&s.bn[block.bn]),
            ),
        };
        let out = constell_forward(
            g,
            nhwc,
            self.config.constell_flags(),
            bank,
            &attn,
            self.config.heads,
            self.config.attention_scale,
            &fusion,
            bn,
            self.config.fourier_count,
            self.config.amplitude,
        )?;
        Ok((out.features, Some(out.distances)))
    }

    /// Full forward pass on a `B×3×R×R` batch.
    pub fn forward(&self, g: &mut Graph, x: Var, mut state: StateRef<'_>) -> Result<Taps> {
        let r = self.config.resolution;
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] != r || s[3] != r {
            return Err(TensorError::dim(
                "network_forward",
                &s,
                &[s.first().copied().unwrap_or(0), 3, r, r],
            )
            .into());
        }
        let batch = s[0];
        let y = self.stem_forward(g, x, 0, &mut state)?;
        let y = self.stem_forward(g, y, 1, &mut state)?;
        let (u1, _) = self.constell_block(g, y, 0, &mut state)?;
        let feat1 = global_average(g, u1)?;
        let y = g.permute(u1, &[0, 3, 1, 2])?;
        let (u2, d2) = self.constell_block(g, y, 1, &mut state)?;
        let feat2 = global_average(g, u2)?;

        let projection = self.params.bind(g, self.projection);
        let logit_embed1 = g.matmul(feat2, projection)?;
        let pooled = match d2 {
            Some(d) => global_average(g, d)?,
            None => g.constant(&Tensor::zeros([batch, self.config.clusters])),
        };
        let logit_embed2 = g.concat(&[pooled, feat2], 1)?;
        Ok(Taps {
            feat1,
            feat2,
            logit_embed1,
            logit_embed2,
        })
    }

    /// Base-class logits from the final pooled embedding.
    pub fn classify(&self, g: &mut Graph, feat2: Var) -> Result<Var> {
        let w = self.params.bind(g, self.classifier);
        Ok(g.matmul(feat2, w)?)
    }

    /// Reassembles a network from stored parameter values.
    pub(crate) fn restore_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, stored {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v.with_requires_grad(true);
        }
        Ok(())
    }
}

/// Drops the last row/column of an NCHW map when its size is odd.
fn crop_even(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let mut y = x;
    if s[2] % 2 == 1 {
        y = g.narrow(y, 2, 0, s[2] - 1)?;
    }
    if s[3] % 2 == 1 {
        y = g.narrow(y, 3, 0, s[3] - 1)?;
    }
    Ok(y)
}

/// Mean over the spatial axes of a `B×H×W×C` map → `B×C`.
pub fn global_average(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(
            TensorError::pre("global_average", format!("expected B×H×W×C, got {s:?}")).into(),
        );
    }
    let flat = g.reshape(x, vec![s[0], s[1] * s[2], s[3]])?;
    Ok(g.mean_axis(flat, 1)?)
}
