//! Central finite-difference verification of reverse-mode gradients.

use super::{Graph, Result, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Max over checked coordinates of `|analytic − numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// Coordinates skipped because the function is not differentiable there
    /// at the probe scale (one-sided slopes disagree).
    pub excluded: usize,
    pub checked: usize,
}

/// Compares the gradient of a scalar function `f` at `x` against central
/// differences with the given `step`.
///
/// `f` receives a fresh graph and the leaf holding `x` and must return a
/// single-element result. A coordinate whose forward and backward one-sided
/// slopes differ by more than `1e-2 · max(1, |central|)` sits within `step`
/// of a kink and is excluded.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaf = g.leaf(&x.clone().with_requires_grad(true));
    let out = f(&mut g, leaf)?;
    if g.value(out).len() != 1 {
        return Err(TensorError::pre(
            "finite_diff_check",
            "function must be scalar-valued",
        ));
    }
    let f0 = g.value(out)[0];
    g.backward(out)?;
    let analytic = g
        .grad(leaf)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(probe);
        let out = f(&mut g, v)?;
        Ok(g.value(out)[0])
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        excluded: 0,
        checked: 0,
    };
    let mut probe = x.clone();
    for (i, &exact) in analytic.iter().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let central = (fp - fm) / (2.0 * step);
        let forward = (fp - f0) / step;
        let backward = (f0 - fm) / step;
        if (forward - backward).abs() > 1e-2 * central.abs().max(1.0) {
            report.excluded += 1;
            continue;
        }
        let rel = (exact - central).abs() / central.abs().max(1.0);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
