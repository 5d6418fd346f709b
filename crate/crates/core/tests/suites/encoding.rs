//! Invariants of the grid, sinusoidal and frequency-compensated encodings.

use lcn4_core::encoding::{fdc_encode, grid_encode, sincos_encode};
use lcn4_core::tensor::{Graph, Tensor};
use lcn4_oracles::SplitMix;

fn distances(seed: u64, shape: [usize; 4]) -> Tensor {
    let mut rng = SplitMix::new(seed);
    Tensor::from_fn(shape, |_| 2.0 * rng.uniform().abs())
}

fn fdc(d: &Tensor, fourier: usize, amplitude: f64) -> Tensor {
    let mut g = Graph::inference();
    let v = g.constant(d);
    let e = fdc_encode(&mut g, v, fourier, amplitude).unwrap();
    g.tensor(e.encoding)
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn grid_checks() {
    let (b, h, w, c) = (3, 5, 7, 6);
    let enc = grid_encode(b, h, w, c).unwrap();
    assert_eq!(enc.tensor.shape(), &[b, h, w, c]);
    assert_eq!((enc.x_pe[0], enc.x_pe[w - 1]), (-1.0, 1.0));
    assert_eq!((enc.y_pe[0], enc.y_pe[h - 1]), (-1.0, 1.0));
    let data = enc.tensor.data();
    let at = |i: usize, y: usize, x: usize, ch: usize| data[((i * h + y) * w + x) * c + ch];
    // Corners carry the extreme coordinates on x (even) and y (odd) channels.
    assert_eq!((at(0, 0, 0, 0), at(0, 0, 0, 1)), (-1.0, -1.0));
    assert_eq!((at(0, h - 1, w - 1, 0), at(0, h - 1, w - 1, 1)), (1.0, 1.0));
    assert_eq!((at(0, 0, w - 1, 2), at(0, h - 1, 0, 3)), (1.0, 1.0));
    assert!(data.iter().all(|v| (-1.0..=1.0).contains(v)));
    // Every image of the batch is the same.
    let plane = h * w * c;
    for i in 1..b {
        assert_eq!(&data[i * plane..(i + 1) * plane], &data[..plane]);
    }
    assert!(grid_encode(1, 2, 2, 3).is_err());
}

fn sincos_checks() {
    let (b, h, w, k) = (2, 4, 5, 16);
    let t = sincos_encode(b, h, w, k).unwrap();
    assert_eq!(t.shape(), &[b, h, w, k]);
    let q = k / 4;
    let origin = &t.data()[..k];
    for j in 0..q {
        assert_eq!(origin[j], 0.0, "sin of column 0");
        assert_eq!(origin[q + j], 1.0, "cos of column 0");
        assert_eq!(origin[2 * q + j], 0.0, "sin of row 0");
        assert_eq!(origin[3 * q + j], 1.0, "cos of row 0");
    }
    let plane = h * w * k;
    assert_eq!(&t.data()[plane..], &t.data()[..plane]);
    // Direct evaluation at an interior cell.
    let (y, x) = (3, 2);
    let cell = &t.data()[(y * w + x) * k..(y * w + x + 1) * k];
    for j in 0..q {
        let f = 10000f64.powf(-4.0 * j as f64 / k as f64);
        assert!((cell[j] - (x as f64 * f).sin()).abs() < 1e-15);
        assert!((cell[3 * q + j] - (y as f64 * f).cos()).abs() < 1e-15);
    }
    assert!(sincos_encode(1, 2, 2, 6).is_err());
}

fn fdc_checks() -> f64 {
    // A scales the phase, so values are sines and cosines: within [−A,A]
    // at the default A = 1 and within [−1,1] for any A.
    let mut peak: f64 = 0.0;
    for (seed, amplitude) in [(1, 1.0), (2, 0.5), (3, 2.5)] {
        let shape = [2, 3, 4, 8];
        let out = fdc(&distances(seed, shape), 4, amplitude);
        assert_eq!(out.shape(), &shape);
        let top = out.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(top <= 1.0, "|fdc| = {top} exceeds 1 at A = {amplitude}");
        if amplitude == 1.0 {
            peak = top;
        }
    }
    assert!(peak > 0.0);
    // Swapping two columns of the distance maps changes the encoding: it
    // depends on where the distances sit, not just on their multiset.
    let d = distances(9, [1, 3, 4, 8]);
    let mut swapped = d.data().to_vec();
    let row = 4 * 8;
    for y in 0..3 {
        for ch in 0..8 {
            swapped.swap(y * row + ch, y * row + 8 + ch);
        }
    }
    let swapped = Tensor::new([1, 3, 4, 8], swapped).unwrap();
    assert_ne!(bits(&fdc(&d, 4, 1.0)), bits(&fdc(&swapped, 4, 1.0)));
    peak
}

fn determinism_checks() {
    let once = || {
        let mut g = grid_encode(2, 3, 4, 8).unwrap().tensor.data().to_vec();
        g.extend_from_slice(sincos_encode(2, 3, 4, 8).unwrap().data());
        g.extend_from_slice(fdc(&distances(4, [2, 3, 4, 8]), 6, 1.0).data());
        g.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(once(), once(), "encodings differ between runs");
}

pub fn run() -> String {
    grid_checks();
    sincos_checks();
    let peak = fdc_checks();
    determinism_checks();
    format!(
        "grid endpoints ±1 and batch copies, sincos origin 0/1, fdc within [−1,1] = [−A,A] at A=1 (peak {peak:.3}), bit-identical reruns"
    )
}
