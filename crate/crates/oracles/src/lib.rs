//! Brute-force reference implementations for the lcn4 test suites.
//!
//! Everything here is written as plain scalar loops over flat row-major
//! buffers and shares no code with `lcn4-core`. The crate is only ever a
//! dev-dependency.

use thiserror::Error;

pub mod reference;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("no oracle for operation `{0}`")]
    UnknownOperation(String),
    #[error("oracle `{op}` expects {expected} inputs, got {got}")]
    Arity {
        op: String,
        expected: usize,
        got: usize,
    },
}

/// Flat row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "array size");
        Array {
            shape: shape.to_vec(),
            data,
        }
    }
}

/// Where a case's expected output comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedSource {
    /// A value quoted from a published reference.
    Published,
    /// A value that can be checked by hand.
    Trivial,
    /// A value computed by the scalar-loop oracle.
    Computed,
}

/// Operations with a scalar-loop oracle, with the parameters they need.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleOp {
    /// inputs: a `[m×p]`, b `[p×q]`
    Matmul,
    /// inputs: x `[B×Cin×H×W]`, kernel `[Cout×Cin×3×3]`
    Conv2d,
    /// inputs: x `[B×C×H×W]`
    MaxPool2d,
    /// inputs: cells `[n×C]`, centroids `[k×C]`
    ClusterDistances,
    /// inputs: m `[B×T×k]`, d `[B×T×k]`, w_q, w_k, w_v, w_1, w_2 (each `[k×k]`)
    Attention {
        heads: usize,
        full_width_scale: bool,
    },
    /// inputs: logits `[n×C]`, labels `[n]` (stored as floats)
    CrossEntropy,
    /// inputs: support `[K·N×d]`, support labels, query `[K·Q×d]`, query labels
    MetaLoss { way: usize, temperature: f64 },
    /// inputs: distance maps `[B×H×W×k]`
    Fdc { fourier: usize, amplitude: f64 },
}

impl OracleOp {
    /// Looks up a parameter-free oracle by name.
    pub fn from_name(name: &str) -> Result<Self, OracleError> {
        match name {
            "matmul" => Ok(OracleOp::Matmul),
            "conv2d" => Ok(OracleOp::Conv2d),
            "maxpool2d" => Ok(OracleOp::MaxPool2d),
            "cluster_distances" => Ok(OracleOp::ClusterDistances),
            "classification_loss" | "cross_entropy" => Ok(OracleOp::CrossEntropy),
            other => Err(OracleError::UnknownOperation(other.to_string())),
        }
    }

    fn arity(&self) -> usize {
        match self {
            OracleOp::Matmul
            | OracleOp::Conv2d
            | OracleOp::ClusterDistances
            | OracleOp::CrossEntropy => 2,
            OracleOp::MaxPool2d | OracleOp::Fdc { .. } => 1,
            OracleOp::Attention { .. } => 7,
            OracleOp::MetaLoss { .. } => 4,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            OracleOp::Matmul => "matmul",
            OracleOp::Conv2d => "conv2d",
            OracleOp::MaxPool2d => "maxpool2d",
            OracleOp::ClusterDistances => "cluster_distances",
            OracleOp::Attention { .. } => "multihead_attention",
            OracleOp::CrossEntropy => "classification_loss",
            OracleOp::MetaLoss { .. } => "meta_loss",
            OracleOp::Fdc { .. } => "fdc_encode",
        }
    }

    /// Runs the oracle on `inputs`.
    pub fn evaluate(&self, inputs: &[Array]) -> Result<Array, OracleError> {
        if inputs.len() != self.arity() {
            return Err(OracleError::Arity {
                op: self.name().to_string(),
                expected: self.arity(),
                got: inputs.len(),
            });
        }
        use reference as r;
        let labels = |a: &Array| a.data.iter().map(|&v| v as usize).collect::<Vec<_>>();
        Ok(match self {
            OracleOp::Matmul => r::matmul(&inputs[0], &inputs[1]),
            OracleOp::Conv2d => r::conv2d(&inputs[0], &inputs[1]),
            OracleOp::MaxPool2d => r::maxpool2d(&inputs[0]),
            OracleOp::ClusterDistances => r::cluster_distances(&inputs[0], &inputs[1]),
            OracleOp::Attention {
                heads,
                full_width_scale,
            } => r::attention(
                &inputs[0],
                &inputs[1],
                [&inputs[2], &inputs[3], &inputs[4], &inputs[5], &inputs[6]],
                *heads,
                *full_width_scale,
            ),
            OracleOp::CrossEntropy => Array::new(
                &[1],
                vec![r::cross_entropy(&inputs[0], &labels(&inputs[1]))],
            ),
            OracleOp::MetaLoss { way, temperature } => Array::new(
                &[1],
                vec![r::meta_loss(
                    &inputs[0],
                    &labels(&inputs[1]),
                    &inputs[2],
                    &labels(&inputs[3]),
                    *way,
                    *temperature,
                )],
            ),
            OracleOp::Fdc { fourier, amplitude } => r::fdc(&inputs[0], *fourier, *amplitude),
        })
    }
}

#[derive(Debug, Clone)]
pub struct OracleCase {
    pub name: String,
    pub op: OracleOp,
    pub inputs: Vec<Array>,
    pub expected: Array,
    pub tolerance: f64,
    pub source: ExpectedSource,
}

impl OracleCase {
    /// Builds a case whose expected value is computed by the oracle now.
    pub fn computed(
        name: impl Into<String>,
        op: OracleOp,
        inputs: Vec<Array>,
        tolerance: f64,
    ) -> Result<Self, OracleError> {
        let expected = op.evaluate(&inputs)?;
        Ok(OracleCase {
            name: name.into(),
            op,
            inputs,
            expected,
            tolerance,
            source: ExpectedSource::Computed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOutcome {
    pub passed: bool,
    pub max_deviation: f64,
}

/// Compares a candidate implementation against the case's expected output.
/// A shape disagreement fails with infinite deviation.
pub fn oracle_run(case: &OracleCase, candidate: impl FnOnce(&[Array]) -> Array) -> OracleOutcome {
    let got = candidate(&case.inputs);
    if got.shape.iter().product::<usize>() != case.expected.data.len()
        || got.data.len() != case.expected.data.len()
    {
        return OracleOutcome {
            passed: false,
            max_deviation: f64::INFINITY,
        };
    }
    let max_deviation = got
        .data
        .iter()
        .zip(&case.expected.data)
        .map(|(a, b)| {
            if a.is_nan() || b.is_nan() {
                f64::INFINITY
            } else {
                (a - b).abs()
            }
        })
        .fold(0.0, f64::max);
    OracleOutcome {
        passed: max_deviation <= case.tolerance,
        max_deviation,
    }
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let fp = f(&probe);
            probe[i] = x[i] - step;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Small deterministic generator (splitmix64) so oracle inputs do not depend
/// on the production RNG stack.
#[derive(Debug, Clone)]
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        SplitMix(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-1, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn array(&mut self, shape: &[usize]) -> Array {
        let n = shape.iter().product();
        Array::new(shape, (0..n).map(|_| self.uniform()).collect())
    }
}
