//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every encoder forward pass records onto a [`Tape`]. Losses are computed
//! analytically on the tape's output values and their gradients are seeded
//! back with [`Tape::backward`]. Only nodes that depend on a trainable
//! parameter take part in the backward pass, so frozen sub-networks cost a
//! forward pass and an input-gradient pass but no weight gradients.

use std::collections::HashMap;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::numeric::{softmax_in_place, Gradients, Matrix, Params};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'a> {
    Owned(Matrix),
    Borrowed(&'a Matrix),
}

impl Deref for Value<'_> {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op {
    Leaf,
    Param(String),
    Embed { table: String, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    RmsNorm(Var),
    Softmax { x: Var },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Im2Col { x: Var, kernel: usize, stride: usize, pad: usize },
    L2Normalize(Var),
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    needs_grad: bool,
}

const RMS_EPS: f64 = 1e-6;

pub struct Tape<'a> {
    params: &'a Params,
    trainable: Box<dyn Fn(&str) -> bool + 'a>,
    nodes: Vec<Node<'a>>,
    param_vars: HashMap<String, Var>,
}

impl<'a> Tape<'a> {
    /// A tape whose parameter leaves are read from `params`; only names
    /// accepted by `trainable` receive gradients.
    pub fn new(params: &'a Params, trainable: impl Fn(&str) -> bool + 'a) -> Self {
        Self {
            params,
            trainable: Box::new(trainable),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// A tape for inference: nothing is trainable.
    pub fn frozen(params: &'a Params) -> Self {
        Self::new(params, |_| false)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let m = self.params.require(name)?;
        let needs_grad = (self.trainable)(name);
        self.nodes.push(Node {
            value: Value::Borrowed(m),
            op: Op::Param(name.to_string()),
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Rows `ids` of the parameter table `name`.
    pub fn embed(&mut self, name: &str, ids: &[usize]) -> Result<Var> {
        let table = self.params.require(name)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= table.rows()) {
            return Err(Error::invalid(format!(
                "row {bad} out of range for `{name}` with {} rows",
                table.rows()
            )));
        }
        let value = table.select_rows(ids);
        let needs_grad = (self.trainable)(name);
        Ok(self.push(
            value,
            Op::Embed {
                table: name.to_string(),
                ids: ids.to_vec(),
            },
            needs_grad,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let n = self.needs(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), n))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        let n = self.needs(&[a, b]);
        Ok(self.push(v, Op::MatMulT(a, b), n))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b))?;
        let n = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), n))
    }

    /// Adds the `1 × c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let b = self.value(bias);
        let mut v = self.value(a).clone();
        if b.rows() != 1 || b.cols() != v.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + broadcast {:?}", v.shape(), b.shape()),
            ));
        }
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        let n = self.needs(&[a, bias]);
        Ok(self.push(v, Op::AddRow(a, bias), n))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scaled(s);
        let n = self.needs(&[a]);
        self.push(v, Op::Scale(a, s), n)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        let n = self.needs(&[a]);
        self.push(v, Op::Gelu(a), n)
    }

    /// Per-row RMS normalization without a learned gain.
    pub fn rms_norm(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let inv = 1.0 / rms(row);
            row.iter_mut().for_each(|x| *x *= inv);
        }
        let n = self.needs(&[a]);
        self.push(v, Op::RmsNorm(a), n)
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Result<Var> {
        let mut v = self.value(x).clone();
        if let Some(row) = v.first_non_finite_row() {
            return Err(Error::NonFinite {
                context: "tape softmax",
                row,
            });
        }
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            if causal {
                let keep = (r + 1).min(row.len());
                softmax_in_place(&mut row[..keep]);
                row[keep..].iter_mut().for_each(|x| *x = 0.0);
            } else {
                softmax_in_place(row);
            }
        }
        let n = self.needs(&[x]);
        Ok(self.push(v, Op::Softmax { x }, n))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(x);
        if start + len > m.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {}", start + len, m.rows()),
            ));
        }
        let idx: Vec<usize> = (start..start + len).collect();
        let v = m.select_rows(&idx);
        let n = self.needs(&[x]);
        Ok(self.push(v, Op::SliceRows { x, start }, n))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice_cols(start, len)?;
        let n = self.needs(&[x]);
        Ok(self.push(v, Op::SliceCols { x, start }, n))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::vstack(&mats)?;
        let n = self.needs(parts);
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), n))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, width);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("{} rows vs {rows}", m.rows()),
                ));
            }
            for r in 0..rows {
                v.row_mut(r)[off..off + m.cols()].copy_from_slice(m.row(r));
            }
            off += m.cols();
        }
        let n = self.needs(parts);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), n))
    }

    /// Unfolds a `(s × c)` sequence into `(out × kernel·c)` windows, where
    /// output row `i` holds input rows `i·stride − pad .. + kernel`
    /// (zero beyond either end) and `out = ceil(s / stride)`.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        if kernel == 0 || stride == 0 {
            return Err(Error::invalid("im2col kernel and stride must be positive"));
        }
        let m = self.value(x);
        let (s, c) = m.shape();
        let out = s.div_ceil(stride);
        let mut v = Matrix::zeros(out, kernel * c);
        for i in 0..out {
            let row = v.row_mut(i);
            for k in 0..kernel {
                let src = (i * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < s {
                    row[k * c..(k + 1) * c].copy_from_slice(m.row(src as usize));
                }
            }
        }
        let n = self.needs(&[x]);
        Ok(self.push(
            v,
            Op::Im2Col {
                x,
                kernel,
                stride,
                pad,
            },
            n,
        ))
    }

    /// Row-wise L2 normalization; zero rows stay zero.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for r in 0..v.rows() {
            crate::numeric::normalize_in_place(v.row_mut(r));
        }
        let n = self.needs(&[x]);
        self.push(v, Op::L2Normalize(x), n)
    }

    /// Propagates the seed gradients back to every trainable parameter.
    pub fn backward(&self, seeds: &[(Var, Matrix)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.value(*v).shape() {
                return Err(Error::shape(
                    "backward seed",
                    format!("{:?} for node of shape {:?}", g.shape(), self.value(*v).shape()),
                ));
            }
            accumulate(&mut grads[v.0], g.clone());
        }
        let mut out = Gradients::new();
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop(node, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn backprop(
        &self,
        node: &Node<'_>,
        g: Matrix,
        grads: &mut [Option<Matrix>],
        out: &mut Gradients,
    ) -> Result<()> {
        let wants = |v: &Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Param(name) => out.accumulate(name, &g)?,
            Op::Embed { table, ids } => {
                let shape = self.params.require(table)?.shape();
                let mut full = Matrix::zeros(shape.0, shape.1);
                for (r, &id) in ids.iter().enumerate() {
                    for (x, y) in full.row_mut(id).iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                out.accumulate(table, &full)?;
            }
            Op::MatMul(a, b) => {
                if wants(a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(b) {
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::MatMulT(a, b) => {
                if wants(a) {
                    let ga = g.matmul(self.value(*b))?;
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(b) {
                    let gb = g.t_matmul(self.value(*a))?;
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(b) {
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::AddRow(a, bias) => {
                if wants(bias) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (x, y) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads[bias.0], gb);
                }
                if wants(a) {
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Scale(a, s) => accumulate(&mut grads[a.0], g.scaled(*s)),
            Op::Gelu(a) => {
                let x = self.value(*a);
                let mut ga = g;
                for (gv, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                    *gv *= gelu_grad(xv);
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::RmsNorm(a) => {
                let x = self.value(*a);
                let y = &*node.value;
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                let n = x.cols() as f64;
                for r in 0..x.rows() {
                    let inv = 1.0 / rms(x.row(r));
                    let gy = g.row(r);
                    let yr = y.row(r);
                    let m: f64 = gy.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((o, &gi), &yi) in ga.row_mut(r).iter_mut().zip(gy).zip(yr) {
                        *o = (gi - yi * m) * inv;
                    }
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::Softmax { x, .. } => {
                let y = &*node.value;
                let mut gx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yi), &gi) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yi * (gi - s);
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::SliceRows { x, start } => {
                let shape = self.value(*x).shape();
                let mut gx = Matrix::zeros(shape.0, shape.1);
                for r in 0..g.rows() {
                    gx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::SliceCols { x, start } => {
                let shape = self.value(*x).shape();
                let mut gx = Matrix::zeros(shape.0, shape.1);
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if wants(p) {
                        let idx: Vec<usize> = (off..off + rows).collect();
                        accumulate(&mut grads[p.0], g.select_rows(&idx));
                    }
                    off += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if wants(p) {
                        accumulate(&mut grads[p.0], g.slice_cols(off, cols)?);
                    }
                    off += cols;
                }
            }
            Op::Im2Col {
                x,
                kernel,
                stride,
                pad,
            } => {
                let (s, c) = self.value(*x).shape();
                let mut gx = Matrix::zeros(s, c);
                for i in 0..g.rows() {
                    let row = g.row(i);
                    for k in 0..*kernel {
                        let src = (i * stride + k) as isize - *pad as isize;
                        if src >= 0 && (src as usize) < s {
                            for (o, v) in gx
                                .row_mut(src as usize)
                                .iter_mut()
                                .zip(&row[k * c..(k + 1) * c])
                            {
                                *o += v;
                            }
                        }
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::L2Normalize(x) => {
                let xin = self.value(*x);
                let y = &*node.value;
                let mut gx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let n = crate::numeric::norm(xin.row(r));
                    if n == 0.0 {
                        continue;
                    }
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yi), &gi) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = (gi - yi * s) / n;
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn rms(row: &[f64]) -> f64 {
    let n = row.len().max(1) as f64;
    (row.iter().map(|x| x * x).sum::<f64>() / n + RMS_EPS).sqrt()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Sum of `w ⊙ f(params)` for a fixed random weighting `w`, so every
    /// output entry contributes to the checked scalar.
    fn check(build: impl Fn(&mut Tape<'_>) -> Result<Var>, params: &Params, seed: u64) -> f64 {
        let probe = {
            let mut t = Tape::frozen(params);
            let out = build(&mut t).unwrap();
            t.value(out).shape()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let w = random(&mut rng, probe.0, probe.1);
        grad_check(
            |p| {
                let mut t = Tape::new(p, |_| true);
                let out = build(&mut t)?;
                let loss: f64 = t.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
                let g = t.backward(&[(out, w.clone())])?;
                Ok((loss, g))
            },
            params,
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn elementary_ops_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = Params::new();
            p.insert("a", random(&mut rng, 4, 3));
            p.insert("b", random(&mut rng, 3, 5));
            p.insert("c", random(&mut rng, 4, 5));
            p.insert("bias", random(&mut rng, 1, 5));
            p.insert("emb", random(&mut rng, 6, 3));
            let err = check(
                |t| {
                    let a = t.param("a")?;
                    let b = t.param("b")?;
                    let c = t.param("c")?;
                    let bias = t.param("bias")?;
                    let ab = t.matmul(a, b)?;
                    let ab = t.add_row(ab, bias)?;
                    let g = t.gelu(ab);
                    let s = t.add(g, c)?;
                    let n = t.rms_norm(s);
                    let e = t.embed("emb", &[0, 2, 2, 5])?;
                    let et = t.matmul_t(e, a)?;
                    let sm = t.softmax(et, true)?;
                    let m = t.matmul(sm, n)?;
                    let m = t.scale(m, 1.7);
                    let top = t.slice_rows(m, 1, 2)?;
                    let left = t.slice_cols(m, 0, 2)?;
                    let right = t.slice_cols(top, 3, 2)?;
                    let lr = t.concat_rows(&[left, right])?;
                    let wide = t.concat_cols(&[lr, lr])?;
                    Ok(t.l2_normalize(wide))
                },
                &p,
                seed,
            );
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn im2col_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = Params::new();
        p.insert("x", random(&mut rng, 5, 2));
        p.insert("w", random(&mut rng, 6, 3));
        let err = check(
            |t| {
                let x = t.param("x")?;
                let w = t.param("w")?;
                let cols = t.im2col(x, 3, 2, 1)?;
                t.matmul(cols, w)
            },
            &p,
            3,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn im2col_layout() {
        let p = Params::new();
        let mut t = Tape::frozen(&p);
        let x = t.constant(Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0], [5.0]]).unwrap());
        let c = t.im2col(x, 3, 2, 1).unwrap();
        assert_eq!(
            t.value(c),
            &Matrix::from_rows(&[[0.0, 1.0, 2.0], [2.0, 3.0, 4.0], [4.0, 5.0, 0.0]]).unwrap()
        );
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut p = Params::new();
        p.insert("frozen", Matrix::identity(2));
        p.insert("live", Matrix::identity(2));
        let mut t = Tape::new(&p, |n| n == "live");
        let a = t.param("frozen").unwrap();
        let b = t.param("live").unwrap();
        let c = t.matmul(a, b).unwrap();
        let g = t.backward(&[(c, Matrix::filled(2, 2, 1.0))]).unwrap();
        assert!(g.get("frozen").is_none());
        assert!(g.get("live").is_some());
    }
}
