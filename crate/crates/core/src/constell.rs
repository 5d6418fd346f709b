//! Location-aware feature clustering (grid compensation + clustering +
//! frequency compensation), cross-attention positional embedding and the
//! channel-level fusion block that together form a constellation block.

use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_distances, cluster_train, CentroidBank};
use crate::encoding::{fdc_encode, nfc_apply, sincos_encode};
use crate::tensor::{BatchNormMode, Graph, TensorError, Var};
use crate::{Error, Result};

/// Denominator used inside the attention softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `sqrt(k / h)`, the per-head width.
    #[default]
    PerHead,
    /// `sqrt(k)`.
    Full,
}

/// Graph leaves of one attention block. Each matrix is `k×k`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub out1: Var,
    pub out2: Var,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `B×T×k`
    pub output: Var,
    /// Per head, `B×T×T` softmax weights (rows index queries).
    pub weights: Vec<Var>,
}

/// `M = pe + D̂`, flattened to `B×HW×k`.
pub fn positional_embed(g: &mut Graph, distances: Var, positional: Var) -> Result<Var> {
    if g.shape(distances) != g.shape(positional) {
        return Err(
            TensorError::dim("positional_embed", g.shape(distances), g.shape(positional)).into(),
        );
    }
    let [b, h, w, k] = four(g, distances)?;
    let m = g.add(positional, distances)?;
    Ok(g.reshape(m, vec![b, h * w, k])?)
}

fn four(g: &Graph, v: Var) -> Result<[usize; 4]> {
    match *g.shape(v) {
        [b, h, w, c] => Ok([b, h, w, c]),
        ref s => {
            Err(TensorError::pre("constell", format!("expected a rank-4 map, got {s:?}")).into())
        }
    }
}

fn project(g: &mut Graph, x: Var, w: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, vec![s[0] * s[1], s[2]])?;
    let y = g.matmul(flat, w)?;
    let cols = g.shape(y)[1];
    Ok(g.reshape(y, vec![s[0], s[1], cols])?)
}

/// Multi-head cross attention with queries and keys from `m` (`B×T×k`) and
/// values from `d` (`B×T×k`). Heads are concatenated and passed through two
/// output projections.
pub fn multihead_attention(
    g: &mut Graph,
    m: Var,
    d: Var,
    w: &AttentionWeights,
    heads: usize,
    scale: AttentionScale,
) -> Result<AttentionOutput> {
    let s = g.shape(m).to_vec();
    if s.len() != 3 || g.shape(d) != s.as_slice() {
        return Err(TensorError::dim("multihead_attention", &s, g.shape(d)).into());
    }
    let k = s[2];
    if heads == 0 || !k.is_multiple_of(heads) {
        return Err(TensorError::pre(
            "multihead_attention",
            format!("width {k} is not divisible by {heads} heads"),
        )
        .into());
    }
    let head_width = k / heads;
    let denom = match scale {
        AttentionScale::PerHead => (head_width as f64).sqrt(),
        AttentionScale::Full => (k as f64).sqrt(),
    };
    let fq = project(g, m, w.query)?;
    let fk = project(g, m, w.key)?;
    let fv = project(g, d, w.value)?;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for i in 0..heads {
        let q = g.narrow(fq, 2, i * head_width, head_width)?;
        let kk = g.narrow(fk, 2, i * head_width, head_width)?;
        let v = g.narrow(fv, 2, i * head_width, head_width)?;
        let kt = g.transpose(kk)?;
        let logits = g.bmm(q, kt)?;
        let logits = g.scale(logits, 1.0 / denom);
        let a = g.softmax(logits, 2)?;
        outs.push(g.bmm(a, v)?);
        weights.push(a);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        g.concat(&outs, 2)?
    };
    let once = project(g, cat, w.out1)?;
    let output = project(g, once, w.out2)?;
    Ok(AttentionOutput { output, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LafcmFlags {
    pub nfc: bool,
    pub cfc: bool,
    pub fdc: bool,
}

impl LafcmFlags {
    pub const ALL: LafcmFlags = LafcmFlags {
        nfc: true,
        cfc: true,
        fdc: true,
    };

    pub fn validate(&self) -> Result<()> {
        if self.fdc && !self.cfc {
            return Err(Error::Config(
                "frequency distance compensation needs cell feature clustering (fdc=on, cfc=off)"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Mutable access to a centroid bank in training, read-only in evaluation.
#[derive(Debug)]
pub enum BankAccess<'a> {
    Train(&'a mut CentroidBank),
    Eval(&'a CentroidBank),
}

#[derive(Debug, Clone, Copy)]
pub struct LafcmOutput {
    /// `B×H×W×C`, grid-compensated when NFC is on.
    pub features: Var,
    /// `B×H×W×k`
    pub distances: Option<Var>,
    /// `B×H×W×k`: frequency encoding when FDC is on, sine-cosine otherwise.
    pub positional: Option<Var>,
}

/// Runs the enabled parts of the location-aware clustering module on a
/// `B×H×W×C` map.
pub fn lafcm_forward(
    g: &mut Graph,
    features: Var,
    flags: LafcmFlags,
    bank: Option<BankAccess<'_>>,
    fourier: usize,
    amplitude: f64,
) -> Result<LafcmOutput> {
    flags.validate()?;
    let features = if flags.nfc {
        nfc_apply(g, features)?
    } else {
        features
    };
    if !flags.cfc {
        return Ok(LafcmOutput {
            features,
            distances: None,
            positional: None,
        });
    }
    let distances = match bank {
        Some(BankAccess::Train(b)) => cluster_train(g, features, b)?,
        Some(BankAccess::Eval(b)) => cluster_distances(g, features, b)?,
        None => {
            return Err(Error::Config(
                "clustering enabled without a centroid bank".into(),
            ))
        }
    };
    let [b, h, w, k] = four(g, distances)?;
    let positional = if flags.fdc {
        fdc_encode(g, distances, fourier, amplitude)?.encoding
    } else {
        let pe = sincos_encode(b, h, w, k)?;
        g.constant(&pe)
    };
    Ok(LafcmOutput {
        features,
        distances: Some(distances),
        positional: Some(positional),
    })
}

/// Graph leaves of the fusion block: a `C×(C+k)×1×1` kernel and batch-norm
/// affine parameters of length `C`.
#[derive(Debug, Clone, Copy)]
pub struct FusionWeights {
    pub kernel: Var,
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ConstellOutput {
    /// `B×H×W×C`
    pub features: Var,
    /// `B×H×W×k`
    pub distances: Var,
}

/// Full constellation submodule on a `B×H×W×C` map: clustering with
/// positional compensation, cross-attention over the distance maps, then
/// `concat(U, F_SA)` → 1×1 conv → batch norm → relu back to `C` channels.
#[allow(clippy::too_many_arguments)]
pub fn constell_forward(
    g: &mut Graph,
    features: Var,
    flags: LafcmFlags,
    bank: BankAccess<'_>,
    attn: &AttentionWeights,
    heads: usize,
    scale: AttentionScale,
    fusion: &FusionWeights,
    bn: BatchNormMode<'_>,
    fourier: usize,
    amplitude: f64,
) -> Result<ConstellOutput> {
    if !flags.cfc {
        return Err(Error::Config(
            "a constellation block needs cell feature clustering".into(),
        ));
    }
    let [b, h, w, c] = four(g, features)?;
    let lafcm = lafcm_forward(g, features, flags, Some(bank), fourier, amplitude)?;
    let (distances, positional) = match (lafcm.distances, lafcm.positional) {
        (Some(d), Some(p)) => (d, p),
        _ => unreachable!("clustering is on"),
    };
    let k = g.shape(distances)[3];
    let kernel_shape = g.shape(fusion.kernel).to_vec();
    if kernel_shape != [c, c + k, 1, 1] {
        return Err(TensorError::dim("constell_forward", &kernel_shape, &[c, c + k, 1, 1]).into());
    }
    let m = positional_embed(g, distances, positional)?;
    let d_flat = g.reshape(distances, vec![b, h * w, k])?;
    let att = multihead_attention(g, m, d_flat, attn, heads, scale)?;
    let f_sa = g.reshape(att.output, vec![b, h, w, k])?;
    let cat = g.concat(&[lafcm.features, f_sa], 3)?;
    let cat = g.reshape(cat, vec![b * h * w, c + k])?;
    let kernel = g.reshape(fusion.kernel, vec![c, c + k])?;
    let kernel_t = g.transpose(kernel)?;
    let fused = g.matmul(cat, kernel_t)?;
    let fused = g.reshape(fused, vec![b, h, w, c])?;
    let nchw = g.permute(fused, &[0, 3, 1, 2])?;
    let normed = g.batchnorm2d(nchw, fusion.gamma, fusion.beta, bn)?;
    let act = g.relu(normed);
    let out = g.permute(act, &[0, 2, 3, 1])?;
    Ok(ConstellOutput {
        features: out,
        distances,
    })
}
