//! Elementwise, linear-algebra, shape and reduction operations.

use super::gemm::{gemm, Transpose};
use super::graph::{GradFn, Graph, Var};
use super::{axis_extents, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Neg,
}

struct Binary {
    op: BinaryOp,
    a_scalar: bool,
    b_scalar: bool,
}

impl GradFn for Binary {
    fn name(&self) -> &'static str {
        "elementwise"
    }

    fn backward(
        &self,
        x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (x[0], x[1]);
        let av = |i: usize| if self.a_scalar { a[0] } else { a[i] };
        let bv = |i: usize| if self.b_scalar { b[0] } else { b[i] };
        let reduce = |v: Vec<f64>, scalar: bool| {
            if scalar {
                vec![v.iter().sum()]
            } else {
                v
            }
        };
        let ga = needs[0].then(|| {
            let v: Vec<f64> = match self.op {
                BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                BinaryOp::Mul => g.iter().enumerate().map(|(i, g)| g * bv(i)).collect(),
                BinaryOp::Div => g.iter().enumerate().map(|(i, g)| g / bv(i)).collect(),
            };
            reduce(v, self.a_scalar)
        });
        let gb = needs[1].then(|| {
            let v: Vec<f64> = match self.op {
                BinaryOp::Add => g.to_vec(),
                BinaryOp::Sub => g.iter().map(|g| -g).collect(),
                BinaryOp::Mul => g.iter().enumerate().map(|(i, g)| g * av(i)).collect(),
                BinaryOp::Div => g
                    .iter()
                    .enumerate()
                    .map(|(i, g)| -g * av(i) / (bv(i) * bv(i)))
                    .collect(),
            };
            reduce(v, self.b_scalar)
        });
        vec![ga, gb]
    }
}

struct Unary(UnaryOp);

impl GradFn for Unary {
    fn name(&self) -> &'static str {
        "elementwise"
    }

    fn backward(
        &self,
        x: &[&[f64]],
        out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let x = x[0];
        let gx: Vec<f64> = match self.0 {
            UnaryOp::Relu => g
                .iter()
                .zip(x)
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect(),
            UnaryOp::Sin => g.iter().zip(x).map(|(g, x)| g * x.cos()).collect(),
            UnaryOp::Cos => g.iter().zip(x).map(|(g, x)| -g * x.sin()).collect(),
            UnaryOp::Exp => g.iter().zip(out).map(|(g, y)| g * y).collect(),
            UnaryOp::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
            UnaryOp::Sqrt => g.iter().zip(out).map(|(g, y)| g / (2.0 * y)).collect(),
            UnaryOp::Neg => g.iter().map(|g| -g).collect(),
        };
        vec![Some(gx)]
    }
}

struct Scale(f64);

impl GradFn for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|g| g * self.0).collect())]
    }
}

struct PassThrough(&'static str);

impl GradFn for PassThrough {
    fn name(&self) -> &'static str {
        self.0
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

struct MatMul {
    m: usize,
    p: usize,
    q: usize,
    batch: usize,
}

impl GradFn for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(
        &self,
        x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let (m, p, q) = (self.m, self.p, self.q);
        let (a, b) = (x[0], x[1]);
        let ga = needs[0].then(|| {
            let mut ga = vec![0.0; self.batch * m * p];
            for i in 0..self.batch {
                gemm(
                    m,
                    q,
                    p,
                    &g[i * m * q..(i + 1) * m * q],
                    Transpose::No,
                    &b[i * p * q..(i + 1) * p * q],
                    Transpose::Yes,
                    0.0,
                    &mut ga[i * m * p..(i + 1) * m * p],
                );
            }
            ga
        });
        let gb = needs[1].then(|| {
            let mut gb = vec![0.0; self.batch * p * q];
            for i in 0..self.batch {
                gemm(
                    p,
                    m,
                    q,
                    &a[i * m * p..(i + 1) * m * p],
                    Transpose::Yes,
                    &g[i * m * q..(i + 1) * m * q],
                    Transpose::No,
                    0.0,
                    &mut gb[i * p * q..(i + 1) * p * q],
                );
            }
            gb
        });
        vec![ga, gb]
    }
}

/// Reorders `data` of `shape` so that output axis `i` is input axis `axes[i]`.
pub(crate) fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    match block_transpose(shape, axes) {
        Some((outer, rows, cols)) => transpose_blocks(data, outer, rows, cols),
        None => permute_strided(data, shape, axes),
    }
}

fn permute_strided(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return out;
    }
    // Innermost output axis is walked in a tight loop.
    let last = rank - 1;
    let (inner_len, inner_stride) = (out_shape[last], strides[last]);
    let mut idx = vec![0usize; rank];
    loop {
        let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.extend((0..inner_len).map(|j| data[base + j * inner_stride]));
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

/// Recognizes permutations of the form `[0..p, q..rank, p..q]`, which swap two
/// contiguous axis groups behind a fixed batch prefix. Returns the extents
/// `(outer, rows, cols)` of the equivalent batched matrix transpose.
fn block_transpose(shape: &[usize], axes: &[usize]) -> Option<(usize, usize, usize)> {
    let rank = shape.len();
    let p = axes.iter().enumerate().take_while(|(i, &a)| *i == a).count();
    if p == rank {
        return None;
    }
    let q = axes[p];
    let tail = rank - q;
    let ok = (0..tail).all(|i| axes[p + i] == q + i) && (p..q).all(|i| axes[tail + i] == i);
    if !ok || q <= p {
        return None;
    }
    let outer = shape[..p].iter().product();
    let rows = shape[p..q].iter().product();
    let cols = shape[q..].iter().product();
    Some((outer, rows, cols))
}

fn transpose_blocks(data: &[f64], outer: usize, rows: usize, cols: usize) -> Vec<f64> {
    const TILE: usize = 16;
    let mut out = vec![0.0; data.len()];
    for b in 0..outer {
        let src = &data[b * rows * cols..(b + 1) * rows * cols];
        let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for r0 in (0..rows).step_by(TILE) {
            for c0 in (0..cols).step_by(TILE) {
                for r in r0..(r0 + TILE).min(rows) {
                    for c in c0..(c0 + TILE).min(cols) {
                        dst[c * rows + r] = src[r * cols + c];
                    }
                }
            }
        }
    }
    out
}

struct Permute {
    out_shape: Vec<usize>,
    inverse: Vec<usize>,
}

impl GradFn for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(permute_data(g, &self.out_shape, &self.inverse))]
    }
}

struct Narrow {
    outer: usize,
    len_in: usize,
    inner: usize,
    start: usize,
    len: usize,
}

impl GradFn for Narrow {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; self.outer * self.len_in * self.inner];
        let chunk = self.len * self.inner;
        for o in 0..self.outer {
            let dst = (o * self.len_in + self.start) * self.inner;
            gx[dst..dst + chunk].copy_from_slice(&g[o * chunk..(o + 1) * chunk]);
        }
        vec![Some(gx)]
    }
}

struct Concat {
    outer: usize,
    inner: usize,
    lens: Vec<usize>,
}

impl GradFn for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let total: usize = self.lens.iter().sum();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.lens.len());
        for (k, &len) in self.lens.iter().enumerate() {
            if needs[k] {
                let chunk = len * self.inner;
                let mut gk = Vec::with_capacity(self.outer * chunk);
                for o in 0..self.outer {
                    let src = (o * total + offset) * self.inner;
                    gk.extend_from_slice(&g[src..src + chunk]);
                }
                grads.push(Some(gk));
            } else {
                grads.push(None);
            }
            offset += len;
        }
        grads
    }
}

struct SumAll {
    n: usize,
    scale: f64,
}

impl GradFn for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0] * self.scale; self.n])]
    }
}

struct SumAxis {
    outer: usize,
    len: usize,
    inner: usize,
    scale: f64,
}

impl GradFn for SumAxis {
    fn name(&self) -> &'static str {
        "sum_axis"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; self.outer * self.len * self.inner];
        for o in 0..self.outer {
            for l in 0..self.len {
                let dst = (o * self.len + l) * self.inner;
                for i in 0..self.inner {
                    gx[dst + i] = g[o * self.inner + i] * self.scale;
                }
            }
        }
        vec![Some(gx)]
    }
}

struct Cumsum {
    outer: usize,
    len: usize,
    inner: usize,
}

fn cumsum_data(data: &[f64], outer: usize, len: usize, inner: usize, reverse: bool) -> Vec<f64> {
    let mut out = data.to_vec();
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let mut acc = 0.0;
            for step in 0..len {
                let l = if reverse { len - 1 - step } else { step };
                let at = base + l * inner + i;
                acc += data[at];
                out[at] = acc;
            }
        }
    }
    out
}

impl GradFn for Cumsum {
    fn name(&self) -> &'static str {
        "cumulative_sum"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        _out: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(cumsum_data(g, self.outer, self.len, self.inner, true))]
    }
}

struct Softmax {
    outer: usize,
    len: usize,
    inner: usize,
}

impl GradFn for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(
        &self,
        _x: &[&[f64]],
        y: &[f64],
        g: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; y.len()];
        for o in 0..self.outer {
            for i in 0..self.inner {
                let at = |l: usize| (o * self.len + l) * self.inner + i;
                let dot: f64 = (0..self.len).map(|l| g[at(l)] * y[at(l)]).sum();
                for l in 0..self.len {
                    gx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                }
            }
        }
        vec![Some(gx)]
    }
}

impl Graph {
    fn broadcast_shape(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(Vec<usize>, bool, bool)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        if sa == sb {
            Ok((sa.to_vec(), false, false))
        } else if nb == 1 {
            Ok((sa.to_vec(), false, true))
        } else if na == 1 {
            Ok((sb.to_vec(), true, false))
        } else {
            Err(TensorError::dim(op, sa, sb))
        }
    }

    /// Elementwise binary op. Shapes must match, or one side holds a single
    /// element that is broadcast.
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (shape, a_scalar, b_scalar) = self.broadcast_shape("elementwise", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let n = shape.iter().product();
        let f = |x: f64, y: f64| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let data: Vec<f64> = (0..n)
            .map(|i| {
                f(
                    if a_scalar { va[0] } else { va[i] },
                    if b_scalar { vb[0] } else { vb[i] },
                )
            })
            .collect();
        Ok(self.push(
            shape,
            data,
            &[a, b],
            Binary {
                op,
                a_scalar,
                b_scalar,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        let f = |x: f64| match op {
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Neg => -x,
        };
        let data = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, &[a], Unary(op))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sin, a)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Cos, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Log, a)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = self.value(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, &[a], Scale(s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let data = self.value(a).iter().map(|x| x + s).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, &[a], PassThrough("add_scalar"))
    }

    /// `[m×p]·[p×q]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::dim("matmul", sa, sb));
        }
        let (m, p, q) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * q];
        gemm(
            m,
            p,
            q,
            self.value(a),
            Transpose::No,
            self.value(b),
            Transpose::No,
            0.0,
            &mut out,
        );
        Ok(self.push(vec![m, q], out, &[a, b], MatMul { m, p, q, batch: 1 }))
    }

    /// Batched `[b×m×p]·[b×p×q]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::dim("bmm", sa, sb));
        }
        let (batch, m, p, q) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * m * q];
        let (va, vb) = (self.value(a), self.value(b));
        for i in 0..batch {
            gemm(
                m,
                p,
                q,
                &va[i * m * p..(i + 1) * m * p],
                Transpose::No,
                &vb[i * p * q..(i + 1) * p * q],
                Transpose::No,
                0.0,
                &mut out[i * m * q..(i + 1) * m * q],
            );
        }
        Ok(self.push(vec![batch, m, q], out, &[a, b], MatMul { m, p, q, batch }))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(TensorError::dim("reshape", self.shape(a), &shape));
        }
        let data = self.rc_data(a);
        Ok(self.push_rc(shape, data, &[a], PassThrough("reshape")))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&i| i >= shape.len() || std::mem::replace(&mut seen[i], true))
        {
            return Err(TensorError::dim("permute", &shape, axes));
        }
        let data = permute_data(self.value(a), &shape, axes);
        let out_shape: Vec<usize> = axes.iter().map(|&i| shape[i]).collect();
        let mut inverse = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        Ok(self.push(
            out_shape.clone(),
            data,
            &[a],
            Permute { out_shape, inverse },
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(TensorError::pre("transpose", "rank must be at least 2"));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(a, &axes)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::pre(
                "narrow",
                format!(
                    "range {start}..{} out of bounds for axis {axis} of {shape:?}",
                    start + len
                ),
            ));
        }
        let (outer, len_in, inner) = axis_extents(&shape, axis);
        let src = self.value(a);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * len_in + start) * inner;
            data.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(
            out_shape,
            data,
            &[a],
            Narrow {
                outer,
                len_in,
                inner,
                start,
                len,
            },
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(
                *parts
                    .first()
                    .ok_or_else(|| TensorError::pre("concat", "no inputs"))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::pre(
                "concat",
                format!("axis {axis} out of range"),
            ));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::dim("concat", &first, s));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = axis_extents(&first, axis);
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                let v = self.value(p);
                data.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(shape, data, parts, Concat { outer, inner, lens }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], &[a], SumAll { n, scale: 1.0 })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s: f64 = self.value(a).iter().sum::<f64>() / n as f64;
        self.push(
            vec![1],
            vec![s],
            &[a],
            SumAll {
                n,
                scale: 1.0 / n as f64,
            },
        )
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::pre(
                "sum_axis",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let scale = if mean { 1.0 / len as f64 } else { 1.0 };
        let v = self.value(a);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &v[(o * len + l) * inner..(o * len + l + 1) * inner];
                data[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, s)| *d += s);
            }
        }
        data.iter_mut().for_each(|d| *d *= scale);
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.push(
            out_shape,
            data,
            &[a],
            SumAxis {
                outer,
                len,
                inner,
                scale,
            },
        ))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    /// Prefix sums along `axis`.
    pub fn cumulative_sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::dim("cumulative_sum", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let data = cumsum_data(self.value(a), outer, len, inner, false);
        Ok(self.push(shape, data, &[a], Cumsum { outer, len, inner }))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::dim("softmax", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let x = self.value(a);
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| x[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = (x[at(l)] - max).exp();
                    y[at(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    y[at(l)] /= total;
                }
            }
        }
        Ok(self.push(shape, y, &[a], Softmax { outer, len, inner }))
    }
}
