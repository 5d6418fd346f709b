//! Positional signals over `B×H×W×C` feature maps: the grid coordinate
//! compensation, the 2D sine-cosine encoding and the frequency-domain
//! distance compensation built from cumulative sums of distance maps.

use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

/// Base of the geometric frequency progressions.
pub const FREQUENCY_BASE: f64 = 10000.0;

/// `n` evenly spaced points on `[-1, 1]`. A single point is `[-1]`.
pub fn linspace(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![-1.0],
        _ => (0..n)
            .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Grid coordinates tiled over channels: even channels carry the x
/// coordinate, odd channels the y coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEncoding {
    pub x_pe: Vec<f64>,
    pub y_pe: Vec<f64>,
    /// `B×H×W×C`
    pub tensor: Tensor,
}

pub fn grid_encode(
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<GridEncoding> {
    if !channels.is_multiple_of(2) {
        return Err(TensorError::pre(
            "grid_encode",
            format!("channel count must be even, got {channels}"),
        ));
    }
    let x_pe = linspace(width);
    let y_pe = linspace(height);
    let mut data = Vec::with_capacity(batch * height * width * channels);
    for _ in 0..batch {
        for &y in &y_pe {
            for &x in &x_pe {
                for _ in 0..channels / 2 {
                    data.push(x);
                    data.push(y);
                }
            }
        }
    }
    let tensor = Tensor::new([batch, height, width, channels], data)?;
    Ok(GridEncoding { x_pe, y_pe, tensor })
}

fn nhwc(g: &Graph, v: Var, op: &'static str) -> Result<[usize; 4]> {
    match *g.shape(v) {
        [b, h, w, c] => Ok([b, h, w, c]),
        ref s => Err(TensorError::pre(op, format!("expected B×H×W×C, got {s:?}"))),
    }
}

/// Adds the grid encoding to a `B×H×W×C` feature map at unit scale.
pub fn nfc_apply(g: &mut Graph, features: Var) -> Result<Var> {
    let [b, h, w, c] = nhwc(g, features, "nfc_apply")?;
    let grid = grid_encode(b, h, w, c)?;
    let grid = g.constant(&grid.tensor);
    g.add(features, grid)
}

/// `f[n] = 10000^(−2·(n div 2)/N)` for `n` in `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySequence(pub Vec<f64>);

impl FrequencySequence {
    pub fn new(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(TensorError::pre(
                "frequency_sequence",
                format!("need at least 2 Fourier terms, got {count}"),
            ));
        }
        Ok(FrequencySequence(
            (0..count)
                .map(|n| FREQUENCY_BASE.powf(-2.0 * (n / 2) as f64 / count as f64))
                .collect(),
        ))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Output of [`fdc_encode`] with the intermediates kept for inspection.
#[derive(Debug, Clone, Copy)]
pub struct FrequencyEncoding {
    /// `B×H×W`: cluster-axis mean of the distance maps.
    pub mean_map: Var,
    /// `B×H×W`: prefix sums along width.
    pub cum_x: Var,
    /// `B×H×W`: prefix sums along height.
    pub cum_y: Var,
    /// `B×H×W×k`: `[sin x | cos x | sin y | cos y]`, `k/4` channels each.
    pub encoding: Var,
}

/// Frequency-domain distance compensation over `B×H×W×k` distance maps.
///
/// Each cell's cumulative coordinate is expanded over the frequency
/// sequence, and the first `k/4` sine and `k/4` cosine terms are kept per
/// axis. Differentiable with respect to `distances`.
pub fn fdc_encode(
    g: &mut Graph,
    distances: Var,
    fourier: usize,
    amplitude: f64,
) -> Result<FrequencyEncoding> {
    let [b, h, w, k] = nhwc(g, distances, "fdc_encode")?;
    if k % 4 != 0 {
        return Err(TensorError::pre(
            "fdc_encode",
            format!("cluster count must be divisible by 4, got {k}"),
        ));
    }
    let quarter = k / 4;
    if fourier < quarter {
        return Err(TensorError::pre(
            "fdc_encode",
            format!("{fourier} Fourier terms cannot supply {quarter} components per axis"),
        ));
    }
    let freq = FrequencySequence::new(fourier)?;
    // Only the leading k/4 frequencies survive the component selection.
    let kept = g.constant_from(
        vec![1, quarter],
        freq.0[..quarter].iter().map(|f| f * amplitude).collect(),
    )?;

    let mean_map = g.mean_axis(distances, 3)?;
    let cum_x = g.cumulative_sum(mean_map, 2)?;
    let cum_y = g.cumulative_sum(mean_map, 1)?;
    let cells = b * h * w;
    let mut halves = Vec::with_capacity(2);
    for cum in [cum_x, cum_y] {
        let column = g.reshape(cum, vec![cells, 1])?;
        let phase = g.matmul(column, kept)?;
        let s = g.sin(phase);
        let c = g.cos(phase);
        halves.push(g.concat(&[s, c], 1)?);
    }
    let flat = g.concat(&halves, 1)?;
    let encoding = g.reshape(flat, vec![b, h, w, k])?;
    Ok(FrequencyEncoding {
        mean_map,
        cum_x,
        cum_y,
        encoding,
    })
}

/// 2D sinusoidal encoding: the first `k/2` channels encode the column index
/// as `[sin | cos]`, the last `k/2` the row index, with frequencies
/// `10000^(−4j/k)` for `j < k/4`.
pub fn sincos_encode(batch: usize, height: usize, width: usize, k: usize) -> Result<Tensor> {
    if !k.is_multiple_of(4) {
        return Err(TensorError::pre(
            "sincos_encode",
            format!("channel count must be divisible by 4, got {k}"),
        ));
    }
    let quarter = k / 4;
    let freq: Vec<f64> = (0..quarter)
        .map(|j| FREQUENCY_BASE.powf(-4.0 * j as f64 / k as f64))
        .collect();
    let mut image = Vec::with_capacity(height * width * k);
    let mut cell = vec![0.0; k];
    for y in 0..height {
        for x in 0..width {
            for (j, f) in freq.iter().enumerate() {
                let (px, py) = (x as f64 * f, y as f64 * f);
                cell[j] = px.sin();
                cell[quarter + j] = px.cos();
                cell[2 * quarter + j] = py.sin();
                cell[3 * quarter + j] = py.cos();
            }
            image.extend_from_slice(&cell);
        }
    }
    // Identical for every image in the batch.
    let data = image.repeat(batch);
    Tensor::new([batch, height, width, k], data)
}
