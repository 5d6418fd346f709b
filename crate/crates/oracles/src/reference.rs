//! Scalar-loop reference kernels. Deliberately naive.
#![allow(clippy::needless_range_loop)]

use crate::Array;

pub fn matmul(a: &Array, b: &Array) -> Array {
    let (m, p, q) = (a.shape[0], a.shape[1], b.shape[1]);
    assert_eq!(b.shape[0], p);
    let mut out = vec![0.0; m * q];
    for i in 0..m {
        for j in 0..q {
            let mut s = 0.0;
            for t in 0..p {
                s += a.data[i * p + t] * b.data[t * q + j];
            }
            out[i * q + j] = s;
        }
    }
    Array::new(&[m, q], out)
}

/// 3×3 cross-correlation, zero padding 1.
pub fn conv2d(x: &Array, k: &Array) -> Array {
    let (bn, ci, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let co = k.shape[0];
    let mut out = vec![0.0; bn * co * h * w];
    for b in 0..bn {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = 0.0;
                    for c in 0..ci {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let xv = x.data[((b * ci + c) * h + sy as usize) * w + sx as usize];
                                let kv = k.data[((o * ci + c) * 3 + ky) * 3 + kx];
                                s += xv * kv;
                            }
                        }
                    }
                    out[((b * co + o) * h + y) * w + xx] = s;
                }
            }
        }
    }
    Array::new(&[bn, co, h, w], out)
}

pub fn maxpool2d(x: &Array) -> Array {
    let (bn, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; bn * c * oh * ow];
    for p in 0..bn * c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(x.data[(p * h + 2 * y + dy) * w + 2 * xx + dx]);
                    }
                }
                out[(p * oh + y) * ow + xx] = best;
            }
        }
    }
    Array::new(&[bn, c, oh, ow], out)
}

/// Euclidean distance of every cell row to every centroid row.
pub fn cluster_distances(cells: &Array, centroids: &Array) -> Array {
    let (n, c) = (cells.shape[0], cells.shape[1]);
    let k = centroids.shape[0];
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            let mut s = 0.0;
            for d in 0..c {
                let diff = cells.data[i * c + d] - centroids.data[j * c + d];
                s += diff * diff;
            }
            out[i * k + j] = s.sqrt();
        }
    }
    Array::new(&[n, k], out)
}

/// Sum over cells of the squared distance to the nearest centroid.
pub fn inertia(cells: &Array, centroids: &Array) -> f64 {
    let d = cluster_distances(cells, centroids);
    let k = centroids.shape[0];
    (0..cells.shape[0])
        .map(|i| {
            let best = (0..k)
                .map(|j| d.data[i * k + j])
                .fold(f64::INFINITY, f64::min);
            best * best
        })
        .sum()
}

/// One Lloyd iteration: hard assignment then exact means. Empty clusters
/// keep their centroid.
pub fn lloyd_step(cells: &Array, centroids: &Array) -> Array {
    let (n, c) = (cells.shape[0], cells.shape[1]);
    let k = centroids.shape[0];
    let d = cluster_distances(cells, centroids);
    let mut sums = vec![0.0; k * c];
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let mut best = 0;
        for j in 1..k {
            if d.data[i * k + j] < d.data[i * k + best] {
                best = j;
            }
        }
        counts[best] += 1;
        for t in 0..c {
            sums[best * c + t] += cells.data[i * c + t];
        }
    }
    let mut out = centroids.data.clone();
    for j in 0..k {
        if counts[j] > 0 {
            for t in 0..c {
                out[j * c + t] = sums[j * c + t] / counts[j] as f64;
            }
        }
    }
    Array::new(&[k, c], out)
}

/// Soft-assignment EMA centroid update with temperature `tau`.
pub fn soft_ema_update(cells: &Array, centroids: &Array, momentum: f64, tau: f64) -> Array {
    let (n, c) = (cells.shape[0], cells.shape[1]);
    let k = centroids.shape[0];
    let d = cluster_distances(cells, centroids);
    let mut weight = vec![0.0; k];
    let mut sums = vec![0.0; k * c];
    for i in 0..n {
        let mut m = f64::NEG_INFINITY;
        for j in 0..k {
            m = m.max(-d.data[i * k + j] / tau);
        }
        let mut z = 0.0;
        for j in 0..k {
            z += (-d.data[i * k + j] / tau - m).exp();
        }
        for j in 0..k {
            let wij = (-d.data[i * k + j] / tau - m).exp() / z;
            weight[j] += wij;
            for t in 0..c {
                sums[j * c + t] += wij * cells.data[i * c + t];
            }
        }
    }
    let mut out = centroids.data.clone();
    for j in 0..k {
        if weight[j] < 1e-8 {
            continue;
        }
        for t in 0..c {
            let mean = sums[j * c + t] / weight[j];
            out[j * c + t] = momentum * centroids.data[j * c + t] + (1.0 - momentum) * mean;
        }
    }
    Array::new(&[k, c], out)
}

/// Multi-head cross attention: Q = K = `m`, V = `d`, followed by two
/// output projections. `ws` = [w_q, w_k, w_v, w_1, w_2].
pub fn attention(
    m: &Array,
    d: &Array,
    ws: [&Array; 5],
    heads: usize,
    full_width_scale: bool,
) -> Array {
    let (bn, t, k) = (m.shape[0], m.shape[1], m.shape[2]);
    let dh = k / heads;
    let scale = if full_width_scale {
        (k as f64).sqrt()
    } else {
        (dh as f64).sqrt()
    };
    let project = |x: &[f64], w: &Array| -> Vec<f64> {
        let mut out = vec![0.0; t * k];
        for r in 0..t {
            for j in 0..k {
                let mut s = 0.0;
                for p in 0..k {
                    s += x[r * k + p] * w.data[p * k + j];
                }
                out[r * k + j] = s;
            }
        }
        out
    };
    let mut result = Vec::with_capacity(bn * t * k);
    for b in 0..bn {
        let mb = &m.data[b * t * k..(b + 1) * t * k];
        let db = &d.data[b * t * k..(b + 1) * t * k];
        let fq = project(mb, ws[0]);
        let fk = project(mb, ws[1]);
        let fv = project(db, ws[2]);
        let mut cat = vec![0.0; t * k];
        for h in 0..heads {
            for q in 0..t {
                let mut logits = vec![0.0; t];
                for s in 0..t {
                    let mut acc = 0.0;
                    for j in 0..dh {
                        acc += fq[q * k + h * dh + j] * fk[s * k + h * dh + j];
                    }
                    logits[s] = acc / scale;
                }
                let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                for j in 0..dh {
                    let mut acc = 0.0;
                    for s in 0..t {
                        acc += (logits[s] - mx).exp() / z * fv[s * k + h * dh + j];
                    }
                    cat[q * k + h * dh + j] = acc;
                }
            }
        }
        let once = project(&cat, ws[3]);
        result.extend(project(&once, ws[4]));
    }
    Array::new(&[bn, t, k], result)
}

pub fn cross_entropy(logits: &Array, labels: &[usize]) -> f64 {
    let c = logits.shape[1];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits.data[i * c..(i + 1) * c];
        let mut z = 0.0;
        for v in row {
            z += v.exp();
        }
        total += -(row[y].exp() / z).ln();
    }
    total / labels.len() as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt().max(1e-12) * nb.sqrt().max(1e-12))
}

/// Prototype cross-entropy with cosine logits scaled by `temperature`.
pub fn meta_loss(
    support: &Array,
    support_labels: &[usize],
    query: &Array,
    query_labels: &[usize],
    way: usize,
    temperature: f64,
) -> f64 {
    let dim = support.shape[1];
    let mut protos = vec![vec![0.0; dim]; way];
    let mut counts = vec![0.0; way];
    for (i, &y) in support_labels.iter().enumerate() {
        counts[y] += 1.0;
        for t in 0..dim {
            protos[y][t] += support.data[i * dim + t];
        }
    }
    for (p, c) in protos.iter_mut().zip(&counts) {
        for v in p.iter_mut() {
            *v /= c;
        }
    }
    let mut logits = Vec::new();
    for i in 0..query_labels.len() {
        let q = &query.data[i * dim..(i + 1) * dim];
        for p in &protos {
            logits.push(temperature * cosine(q, p));
        }
    }
    cross_entropy(
        &Array::new(&[query_labels.len(), way], logits),
        query_labels,
    )
}

/// Frequency-domain distance compensation over `[B×H×W×k]` distance maps.
pub fn fdc(dist: &Array, fourier: usize, amplitude: f64) -> Array {
    let (bn, h, w, k) = (dist.shape[0], dist.shape[1], dist.shape[2], dist.shape[3]);
    let quarter = k / 4;
    let freq: Vec<f64> = (0..fourier)
        .map(|n| 10000f64.powf(-2.0 * (n / 2) as f64 / fourier as f64))
        .collect();
    let mut mean = vec![0.0; bn * h * w];
    for cell in 0..bn * h * w {
        let mut s = 0.0;
        for j in 0..k {
            s += dist.data[cell * k + j];
        }
        mean[cell] = s / k as f64;
    }
    let mut out = vec![0.0; bn * h * w * k];
    for b in 0..bn {
        for y in 0..h {
            for x in 0..w {
                let mut ix = 0.0;
                for xx in 0..=x {
                    ix += mean[(b * h + y) * w + xx];
                }
                let mut iy = 0.0;
                for yy in 0..=y {
                    iy += mean[(b * h + yy) * w + x];
                }
                let base = ((b * h + y) * w + x) * k;
                for j in 0..quarter {
                    out[base + j] = (amplitude * ix * freq[j]).sin();
                    out[base + quarter + j] = (amplitude * ix * freq[j]).cos();
                    out[base + 2 * quarter + j] = (amplitude * iy * freq[j]).sin();
                    out[base + 3 * quarter + j] = (amplitude * iy * freq[j]).cos();
                }
            }
        }
    }
    Array::new(&[bn, h, w, k], out)
}
