//! Neural-network kernels: convolution, pooling, batch normalization and the
//! fused loss/normalization ops used by the metric heads.

use super::gemm::{gemm_view, View};
use super::graph::{GradFn, Graph, Var};
use super::{Result, TensorError};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

const KSIZE: usize = 3;

/// Geometry of a 3×3, padding-1 convolution evaluated on a zero-padded copy
/// of each input plane. Outputs are computed in "padded-width" coordinates
/// `j = y·(W+2) + x`, which turns every kernel tap into a contiguous shift of
/// the padded plane; the two trailing columns of each row are discarded.
struct ConvGeometry {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
}

impl ConvGeometry {
    fn padded_width(&self) -> usize {
        self.w + 2
    }

    fn plane(&self) -> usize {
        (self.h + 2) * self.padded_width()
    }

    /// Number of padded-width output positions actually evaluated.
    fn span(&self) -> usize {
        self.h * self.padded_width() - 2
    }

    fn tap_offset(&self, tap: usize) -> usize {
        (tap / KSIZE) * self.padded_width() + tap % KSIZE
    }

    /// Copies `src` (`C×H×W`) into the interior of `dst` (`C×(H+2)×(W+2)`).
    /// The border of `dst` must already be zero.
    fn pad(&self, src: &[f64], dst: &mut [f64]) {
        let (h, w, pw, plane) = (self.h, self.w, self.padded_width(), self.plane());
        for c in 0..src.len() / (h * w) {
            for y in 0..h {
                let from = &src[(c * h + y) * w..][..w];
                dst[c * plane + (y + 1) * pw + 1..][..w].copy_from_slice(from);
            }
        }
    }

    /// Kernel tap `tap` as a `C_out×C_in` view of the `[C_out×C_in×3×3]` kernel.
    fn kernel_view(&self, tap: usize) -> View {
        View::new(tap, self.c_in * KSIZE * KSIZE, KSIZE * KSIZE)
    }

    fn forward_image(&self, kernel: &[f64], padded: &[f64], out_pw: &mut [f64], out: &mut [f64]) {
        let (n, pw, plane) = (self.span(), self.padded_width(), self.plane());
        for tap in 0..KSIZE * KSIZE {
            gemm_view(
                self.c_out,
                self.c_in,
                n,
                kernel,
                self.kernel_view(tap),
                padded,
                View::new(self.tap_offset(tap), plane, 1),
                if tap == 0 { 0.0 } else { 1.0 },
                out_pw,
                View::new(0, n, 1),
            );
        }
        let (h, w) = (self.h, self.w);
        for o in 0..self.c_out {
            for y in 0..h {
                out[(o * h + y) * w..][..w].copy_from_slice(&out_pw[o * n + y * pw..][..w]);
            }
        }
    }
}

struct Conv2d {
    batch: usize,
    geom: ConvGeometry,
}

impl GradFn for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(
        &self,
        x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let (input, kernel) = (x[0], x[1]);
        let geom = &self.geom;
        let (c_in, c_out, h, w) = (geom.c_in, geom.c_out, geom.h, geom.w);
        let (hw, n, pw, plane) = (h * w, geom.span(), geom.padded_width(), geom.plane());
        let mut padded = vec![0.0; c_in * plane];
        let mut g_pw = vec![0.0; c_out * n];
        let mut g_padded = vec![0.0; c_in * plane];
        let mut gi = needs[0].then(|| vec![0.0; input.len()]);
        let mut gk = needs[1].then(|| vec![0.0; kernel.len()]);
        for b in 0..self.batch {
            let gb = &g[b * c_out * hw..(b + 1) * c_out * hw];
            for o in 0..c_out {
                for y in 0..h {
                    g_pw[o * n + y * pw..][..w].copy_from_slice(&gb[(o * h + y) * w..][..w]);
                }
            }
            if let Some(gk) = gk.as_mut() {
                geom.pad(&input[b * c_in * hw..(b + 1) * c_in * hw], &mut padded);
                for tap in 0..KSIZE * KSIZE {
                    gemm_view(
                        c_out,
                        n,
                        c_in,
                        &g_pw,
                        View::new(0, n, 1),
                        &padded,
                        View::new(geom.tap_offset(tap), 1, plane),
                        1.0,
                        gk,
                        geom.kernel_view(tap),
                    );
                }
            }
            if let Some(gi) = gi.as_mut() {
                g_padded.fill(0.0);
                for tap in 0..KSIZE * KSIZE {
                    let kv = geom.kernel_view(tap);
                    gemm_view(
                        c_in,
                        c_out,
                        n,
                        kernel,
                        View::new(kv.offset, kv.col_stride, kv.row_stride),
                        &g_pw,
                        View::new(0, n, 1),
                        1.0,
                        &mut g_padded,
                        View::new(geom.tap_offset(tap), plane, 1),
                    );
                }
                let gi_b = &mut gi[b * c_in * hw..(b + 1) * c_in * hw];
                for c in 0..c_in {
                    for y in 0..h {
                        gi_b[(c * h + y) * w..][..w]
                            .copy_from_slice(&g_padded[c * plane + (y + 1) * pw + 1..][..w]);
                    }
                }
            }
        }
        vec![gi, gk]
    }
}

struct MaxPool {
    argmax: Vec<usize>,
    input_len: usize,
}

impl GradFn for MaxPool {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; self.input_len];
        for (&src, gv) in self.argmax.iter().zip(g) {
            gx[src] += gv;
        }
        vec![Some(gx)]
    }
}

/// Train mode folds batch statistics into the running estimate; eval mode
/// only reads it.
#[derive(Debug)]
pub enum BatchNormMode<'a> {
    Train(&'a mut RunningStats),
    Eval(&'a RunningStats),
}

/// Per-channel running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

struct BatchNorm {
    batch: usize,
    channels: usize,
    spatial: usize,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl GradFn for BatchNorm {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }

    fn backward(
        &self,
        x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let (input, gamma) = (x[0], x[1]);
        let (c_n, s) = (self.channels, self.spatial);
        let count = (self.batch * s) as f64;
        let mut sum_g = vec![0.0; c_n];
        let mut sum_gx = vec![0.0; c_n];
        for b in 0..self.batch {
            for c in 0..c_n {
                let base = (b * c_n + c) * s;
                let (mean, inv_std) = (self.mean[c], self.inv_std[c]);
                let (mut sg, mut sgx) = (0.0, 0.0);
                for (gv, xv) in g[base..base + s].iter().zip(&input[base..base + s]) {
                    sg += gv;
                    sgx += gv * (xv - mean) * inv_std;
                }
                sum_g[c] += sg;
                sum_gx[c] += sgx;
            }
        }
        let gi = needs[0].then(|| {
            let mut gi = vec![0.0; g.len()];
            for b in 0..self.batch {
                for c in 0..c_n {
                    let base = (b * c_n + c) * s;
                    let (mean, inv_std) = (self.mean[c], self.inv_std[c]);
                    let k = gamma[c] * inv_std;
                    let dst = &mut gi[base..base + s];
                    let (gs, xs) = (&g[base..base + s], &input[base..base + s]);
                    if self.train {
                        let (mg, mgx) = (sum_g[c] / count, sum_gx[c] / count);
                        for ((d, gv), xv) in dst.iter_mut().zip(gs).zip(xs) {
                            *d = k * (gv - mg - (xv - mean) * inv_std * mgx);
                        }
                    } else {
                        for (d, gv) in dst.iter_mut().zip(gs) {
                            *d = k * gv;
                        }
                    }
                }
            }
            gi
        });
        vec![gi, needs[1].then_some(sum_gx), needs[2].then_some(sum_g)]
    }
}

struct CrossEntropy {
    labels: Vec<usize>,
    classes: usize,
    probs: Vec<f64>,
}

impl GradFn for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let n = self.labels.len();
        let scale = g[0] / n as f64;
        let mut gx: Vec<f64> = self.probs.iter().map(|p| p * scale).collect();
        for (i, &y) in self.labels.iter().enumerate() {
            gx[i * self.classes + y] -= scale;
        }
        vec![Some(gx)]
    }
}

struct RowNormalize {
    cols: usize,
    norms: Vec<f64>,
    eps: f64,
}

impl GradFn for RowNormalize {
    fn name(&self) -> &'static str {
        "l2_normalize_rows"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        y: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let d = self.cols;
        let mut gx = vec![0.0; g.len()];
        for (r, &norm) in self.norms.iter().enumerate() {
            let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
            if norm > self.eps {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    gx[r * d + j] = (gr[j] - yr[j] * dot) / norm;
                }
            } else {
                for j in 0..d {
                    gx[r * d + j] = gr[j] / self.eps;
                }
            }
        }
        vec![Some(gx)]
    }
}

impl Graph {
    /// 3×3 cross-correlation with zero padding 1 over `[B×C_in×H×W]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 4 || sk.len() != 4 || sk[2] != KSIZE || sk[3] != KSIZE {
            return Err(TensorError::dim("conv2d", &si, &sk));
        }
        if si[1] != sk[1] {
            return Err(TensorError::dim("conv2d", &si, &sk));
        }
        let (batch, c_in, h, w, c_out) = (si[0], si[1], si[2], si[3], sk[0]);
        let geom = ConvGeometry { c_in, c_out, h, w };
        let hw = h * w;
        let mut padded = vec![0.0; c_in * geom.plane()];
        let mut out_pw = vec![0.0; c_out * geom.span()];
        let mut out = vec![0.0; batch * c_out * hw];
        let (x, k) = (self.value(input), self.value(kernel));
        for b in 0..batch {
            geom.pad(&x[b * c_in * hw..(b + 1) * c_in * hw], &mut padded);
            geom.forward_image(
                k,
                &padded,
                &mut out_pw,
                &mut out[b * c_out * hw..(b + 1) * c_out * hw],
            );
        }
        Ok(self.push(
            vec![batch, c_out, h, w],
            out,
            &[input, kernel],
            Conv2d { batch, geom },
        ))
    }

    /// 2×2 max pooling with stride 2. Ties go to the first cell in row-major
    /// order. An odd last row or column is dropped.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(TensorError::pre(
                "maxpool2d",
                format!("expected B×C×H×W with H, W ≥ 2, got {s:?}"),
            ));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input);
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let at = base + (2 * y + dy) * w + 2 * xo + dx;
                        if x[at] > x[best] {
                            best = at;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let input_len = x.len();
        Ok(self.push(
            vec![s[0], s[1], oh, ow],
            out,
            &[input],
            MaxPool { argmax, input_len },
        ))
    }

    /// Per-channel batch normalization over `[B×C×H×W]`.
    ///
    /// Train mode normalizes with batch statistics and folds them into
    /// `stats` (biased variance for normalization, unbiased for the running
    /// estimate). Eval mode reads `stats` only.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return Err(TensorError::dim("batchnorm2d", &s, self.shape(gamma)));
        }
        let (batch, channels, spatial) = (s[0], s[1], s[2] * s[3]);
        let stats_len = match &mode {
            BatchNormMode::Train(s) => s.mean.len(),
            BatchNormMode::Eval(s) => s.mean.len(),
        };
        if self.shape(gamma) != [channels]
            || self.shape(beta) != [channels]
            || stats_len != channels
        {
            return Err(TensorError::dim("batchnorm2d", &s, self.shape(gamma)));
        }
        let count = batch * spatial;
        let train = matches!(mode, BatchNormMode::Train(_));
        if train && count < 2 {
            return Err(TensorError::pre(
                "batchnorm2d",
                "train mode needs at least two values per channel",
            ));
        }
        let x = self.value(input);
        let (mean, var) = match mode {
            BatchNormMode::Train(stats) => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for b in 0..batch {
                    for (c, m) in mean.iter_mut().enumerate() {
                        let base = (b * channels + c) * spatial;
                        *m += x[base..base + spatial].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * spatial;
                        var[c] += x[base..base + spatial]
                            .iter()
                            .map(|v| (v - mean[c]).powi(2))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                for c in 0..channels {
                    let unbiased = var[c] * count as f64 / (count - 1) as f64;
                    stats.mean[c] = (1.0 - BN_MOMENTUM) * stats.mean[c] + BN_MOMENTUM * mean[c];
                    stats.var[c] = (1.0 - BN_MOMENTUM) * stats.var[c] + BN_MOMENTUM * unbiased;
                }
                (mean, var)
            }
            BatchNormMode::Eval(stats) => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gm, bt) = (self.value(gamma), self.value(beta));
        let mut out = vec![0.0; x.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * spatial;
                let (scale, shift) = (gm[c] * inv_std[c], bt[c] - gm[c] * inv_std[c] * mean[c]);
                for (o, v) in out[base..base + spatial].iter_mut().zip(&x[base..base + spatial]) {
                    *o = scale * v + shift;
                }
            }
        }
        Ok(self.push(
            s,
            out,
            &[input, gamma, beta],
            BatchNorm {
                batch,
                channels,
                spatial,
                mean,
                inv_std,
                train,
            },
        ))
    }

    /// Mean over rows of `−log softmax(logits)[label]` for `[n×C]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(TensorError::dim("cross_entropy", &s, &[labels.len()]));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(TensorError::pre(
                "cross_entropy",
                format!("label {bad} out of range for {classes} classes"),
            ));
        }
        let x = self.value(logits);
        let mut probs = vec![0.0; x.len()];
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &x[i * classes..(i + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_total = total.ln() + max;
            loss += log_total - row[y];
            for j in 0..classes {
                probs[i * classes + j] = (row[j] - log_total).exp();
            }
        }
        loss /= labels.len().max(1) as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            &[logits],
            CrossEntropy {
                labels: labels.to_vec(),
                classes,
                probs,
            },
        ))
    }

    /// Scales each row of `[n×d]` to unit L2 norm, clamping the norm at `eps`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(TensorError::pre(
                "l2_normalize_rows",
                format!("expected rank 2, got {s:?}"),
            ));
        }
        let d = s[1];
        let x = self.value(a);
        let mut norms = Vec::with_capacity(s[0]);
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks(d.max(1)).take(s[0]) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = norm.max(eps);
            out.extend(row.iter().map(|v| v / denom));
            norms.push(norm);
        }
        Ok(self.push(
            s,
            out,
            &[a],
            RowNormalize {
                cols: d,
                norms,
                eps,
            },
        ))
    }
}
