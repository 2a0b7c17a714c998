//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass in creation order.
//! [`Tape::backward`] sweeps the record in reverse and returns the gradient
//! of a scalar node with respect to every node that depends on a parameter
//! or variable leaf.
//!
//! Shapes are never broadcast. The only exceptions are named operations that
//! spell the broadcast out: [`Tape::linear`] adds a bias row to every row,
//! [`Tape::token_embed`] adds positional rows and [`Tape::layer_norm`] applies
//! a per-feature gain and bias.

use super::kernels::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_in_place};
use super::params::{GradBuffer, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Cost model used by the operation-level FLOP counter.
pub mod flops {
    /// max, subtract, exp, accumulate, normalize
    pub const SOFTMAX_PER_ENTRY: u64 = 5;
    /// mean, centre, square, variance, normalize, gain, bias, plus the rsqrt share
    pub const LAYER_NORM_PER_ENTRY: u64 = 8;
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type UnaryDerivative = Box<dyn Fn(f64) -> f64>;

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Map(Var, UnaryDerivative),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Linear { x: Var, w: Var, b: Var },
    Reshape(Var),
    Transpose(Var),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    MeanSquare(Var),
    Sum(Var),
    TokenEmbed { x: Var, w: Var, b: Var, pos: Var },
    Attention { q: Var, k: Var, v: Var, groups: usize, heads: usize },
    Conv1d { x: Var, w: Var, b: Var },
    AvgPool(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    flops: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Floating-point operations performed so far, under the [`flops`] cost model.
    pub fn flop_count(&self) -> u64 {
        self.flops
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            Op::Param => true,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient (data, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// A free leaf that receives a gradient but is not backed by a [`ParamStore`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Param, &[]);
        self.params.push((id, v));
        v
    }

    /// Registers every parameter of `store`, returning leaves indexed by [`ParamId`].
    pub fn bind(&mut self, store: &ParamStore) -> Vec<Var> {
        store.ids().map(|id| self.param(store, id)).collect()
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.flops += 2 * (m * k * n) as u64;
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(a, b, op)?;
        let av = self.value(a);
        let data: Vec<f64> = av.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = av.shape().to_vec();
        self.flops += data.len() as u64;
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.flops += t.len() as u64;
        self.push(t, Op::Scale(a, c), &[a])
    }

    /// Rectified linear unit. The derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.flops += t.len() as u64;
        self.push(t, Op::Relu(a), &[a])
    }

    /// Pointwise `f` with caller-supplied derivative `df`.
    pub fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Var {
        let t = self.value(a).map(f);
        self.flops += t.len() as u64;
        self.push(t, Op::Map(a, Box::new(df)), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "softmax_rows")?;
        let mut data = self.value(a).to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        self.flops += flops::SOFTMAX_PER_ENTRY * (m * n) as u64;
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::SoftmaxRows(a), &[a]))
    }

    /// Per-token normalization over the feature axis followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (tokens, d) = self.matrix_dims(x, "layer_norm")?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; tokens * d];
        let mut inv_std = vec![0.0; tokens];
        let mut out = vec![0.0; tokens * d];
        for t in 0..tokens {
            let row = &xv[t * d..(t + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[t] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[t * d + j] = h;
                out[t * d + j] = h * g[j] + b[j];
            }
        }
        self.flops += flops::LAYER_NORM_PER_ENTRY * (tokens * d) as u64;
        Ok(self.push(
            Tensor::from_parts(vec![tokens, d], out),
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
            &[x, gain, bias],
        ))
    }

    /// `x[m×k] · w[k×n]` plus the bias row `b[n]` added to every row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(x, "linear")?;
        let (k2, n) = self.matrix_dims(w, "linear")?;
        if k != k2 || self.shape(b) != [n] {
            return Err(Error::dim("linear", self.shape(x), self.shape(w)));
        }
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, m, k, n);
        self.flops += (2 * m * k * n + m * n) as u64;
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    /// Rows `start..start + count` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "slice_rows")?;
        if count == 0 || start + count > m {
            return Err(Error::dim("slice_rows", &[m, n], &[start, count]));
        }
        let data = self.value(a).data()[start * n..(start + count) * n].to_vec();
        Ok(self.push(Tensor::from_parts(vec![count, n], data), Op::SliceRows { x: a, start }, &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Parameter("concat_rows needs at least one input".into()))?;
        let (_, n) = self.matrix_dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, n2) = self.matrix_dims(p, "concat_rows")?;
            if n2 != n {
                return Err(Error::dim("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += m;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::from_parts(vec![rows, n], data), Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Mean of squared entries, as a one-element tensor.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        self.flops += 2 * v.len() as u64 + 1;
        self.push(Tensor::scalar(s), Op::MeanSquare(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>();
        self.flops += v.len() as u64;
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Lifts each scalar sample of `x[groups×tokens]` to a `d`-vector:
    /// `x·w + b + pos[token]`, giving `[(groups·tokens)×d]`.
    pub fn token_embed(&mut self, x: Var, w: Var, b: Var, pos: Var) -> Result<Var> {
        let (groups, tokens) = self.matrix_dims(x, "token_embed")?;
        let (pt, d) = self.matrix_dims(pos, "token_embed")?;
        if pt != tokens || self.shape(w) != [d] || self.shape(b) != [d] {
            return Err(Error::dim("token_embed", self.shape(x), self.shape(pos)));
        }
        let (xv, wv, bv, pv) =
            (self.value(x).data(), self.value(w).data(), self.value(b).data(), self.value(pos).data());
        let mut out = vec![0.0; groups * tokens * d];
        for (t, &s) in xv.iter().enumerate() {
            let p = &pv[(t % tokens) * d..(t % tokens + 1) * d];
            let o = &mut out[t * d..(t + 1) * d];
            for j in 0..d {
                o[j] = s * wv[j] + bv[j] + p[j];
            }
        }
        self.flops += 3 * (groups * tokens * d) as u64;
        Ok(self.push(
            Tensor::from_parts(vec![groups * tokens, d], out),
            Op::TokenEmbed { x, w, b, pos },
            &[x, w, b, pos],
        ))
    }

    /// Multi-head scaled dot-product self-attention core.
    ///
    /// `q`, `k`, `v` are `[(groups·tokens)×d]`; tokens attend only within their
    /// group, and head `h` uses feature columns `h·d/heads..(h+1)·d/heads`.
    /// Attention weights are recomputed during the backward pass rather than stored.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, heads: usize) -> Result<Var> {
        let (rows, d) = self.matrix_dims(q, "attention")?;
        self.same_shape(q, k, "attention")?;
        self.same_shape(q, v, "attention")?;
        if groups == 0 || rows % groups != 0 || heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "attention: {rows} rows, {d} features not divisible into {groups} groups × {heads} heads"
            )));
        }
        let tokens = rows / groups;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; rows * d];
        let mut kh = vec![0.0; tokens * dh];
        let mut vh = vec![0.0; tokens * dh];
        let mut p = vec![0.0; tokens];
        for g in 0..groups {
            for h in 0..heads {
                gather_head(kv, &mut kh, g * tokens, tokens, d, h * dh, dh);
                gather_head(vv, &mut vh, g * tokens, tokens, d, h * dh, dh);
                for i in 0..tokens {
                    let r = g * tokens + i;
                    let qi = &qv[r * d + h * dh..r * d + (h + 1) * dh];
                    attention_row(qi, &kh, scale, dh, &mut p);
                    let o = &mut out[r * d + h * dh..r * d + (h + 1) * dh];
                    for (j, &pj) in p.iter().enumerate() {
                        let vj = &vh[j * dh..(j + 1) * dh];
                        for c in 0..dh {
                            o[c] += pj * vj[c];
                        }
                    }
                }
            }
        }
        self.flops += attention_core_flops(groups, tokens, d, heads);
        Ok(self.push(Tensor::from_parts(vec![rows, d], out), Op::Attention { q, k, v, groups, heads }, &[q, k, v]))
    }

    /// Attention weights of head `head` in group `group`, as a `[tokens×tokens]` tensor.
    pub fn attention_weights(
        &self,
        q: Var,
        k: Var,
        groups: usize,
        heads: usize,
        group: usize,
        head: usize,
    ) -> Result<Tensor> {
        let (rows, d) = self.matrix_dims(q, "attention_weights")?;
        if rows % groups != 0 || d % heads != 0 || group >= groups || head >= heads {
            return Err(Error::Parameter("attention_weights: index out of range".into()));
        }
        let tokens = rows / groups;
        let dh = d / heads;
        let mut kh = vec![0.0; tokens * dh];
        gather_head(self.value(k).data(), &mut kh, group * tokens, tokens, d, head * dh, dh);
        let qv = self.value(q).data();
        let mut out = vec![0.0; tokens * tokens];
        for i in 0..tokens {
            let r = group * tokens + i;
            let qi = &qv[r * d + head * dh..r * d + (head + 1) * dh];
            attention_row(qi, &kh, 1.0 / (dh as f64).sqrt(), dh, &mut out[i * tokens..(i + 1) * tokens]);
        }
        Ok(Tensor::from_parts(vec![tokens, tokens], out))
    }

    /// Circular 1-D convolution, stride 1, length preserving.
    ///
    /// `x[groups×c_in×len]`, `w[c_out×c_in×width]`, `b[c_out]`. Output position
    /// `i` reads inputs `i - (width-1)/2 .. i + width/2` with periodic wraparound.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[1] || self.shape(b) != [ws[0]] {
            return Err(Error::dim("conv1d", &xs, &ws));
        }
        let (groups, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, width) = (ws[0], ws[2]);
        let left = (width - 1) / 2;
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; groups * cout * len];
        for g in 0..groups {
            for o in 0..cout {
                let orow = &mut out[(g * cout + o) * len..(g * cout + o + 1) * len];
                orow.iter_mut().for_each(|v| *v = bv[o]);
                for c in 0..cin {
                    let xrow = &xv[(g * cin + c) * len..(g * cin + c + 1) * len];
                    let wrow = &wv[(o * cin + c) * width..(o * cin + c + 1) * width];
                    for (j, &wj) in wrow.iter().enumerate() {
                        let shift = (j + len - left % len) % len;
                        for (i, ov) in orow.iter_mut().enumerate() {
                            *ov += wj * xrow[(i + shift) % len];
                        }
                    }
                }
            }
        }
        self.flops += (groups * cout * len * (2 * cin * width + 1)) as u64;
        Ok(self.push(Tensor::from_parts(vec![groups, cout, len], out), Op::Conv1d { x, w, b }, &[x, w, b]))
    }

    /// Average pooling with window 2, stride 2, no padding, along the last axis.
    pub fn avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || !xs[2].is_multiple_of(2) {
            return Err(Error::dim("avg_pool", &xs, &[0, 0, 2]));
        }
        let half = xs[2] / 2;
        let data: Vec<f64> = self.value(x).data().chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        self.flops += 2 * data.len() as u64;
        Ok(self.push(Tensor::from_parts(vec![xs[0], xs[1], half], data), Op::AvgPool(x), &[x]))
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds the parameter gradients into `store`.
    ///
    /// Gradients accumulate: calling this twice without
    /// [`ParamStore::zero_grads`] doubles them.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        store.accumulate(&grads.param_buffer(self, store.len()))
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.shape(*a));
                let n = self.shape(*b)[1];
                if let Some(ga) = self.slot(grads, *a) {
                    matmul_nt_acc(g, self.value(*b).data(), ga, m, k, n);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    matmul_tn_acc(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(gv) = self.slot(grads, v) {
                        axpy(sign, g, gv);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(gv) = self.slot(grads, v) {
                        axpy(sign, g, gv);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((s, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *s += gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((s, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *s += gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(*c, g, ga);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((s, &gi), &x) in ga.iter_mut().zip(g).zip(av) {
                        if x > 0.0 {
                            *s += gi;
                        }
                    }
                }
            }
            Op::Map(a, df) => {
                let av = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((s, &gi), &x) in ga.iter_mut().zip(g).zip(av) {
                        *s += gi * df(x);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((yr, gr), sr) in y.chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)) {
                        let c = dot(yr, gr);
                        for j in 0..n {
                            sr[j] += yr[j] * (gr[j] - c);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = node.value.cols();
                let gv = self.value(*gain).data();
                if let Some(gx) = self.slot(grads, *x) {
                    let mut dxhat = vec![0.0; d];
                    for (t, &is) in inv_std.iter().enumerate() {
                        let gr = &g[t * d..(t + 1) * d];
                        let hr = &xhat[t * d..(t + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dh = dot(&dxhat, hr) / d as f64;
                        let out = &mut gx[t * d..(t + 1) * d];
                        for j in 0..d {
                            out[j] += is * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
                if let Some(gg) = self.slot(grads, *gain) {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for gr in g.chunks(d) {
                        axpy(1.0, gr, gb);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = dims2(self.shape(*x));
                let n = self.shape(*w)[1];
                if let Some(gx) = self.slot(grads, *x) {
                    matmul_nt_acc(g, self.value(*w).data(), gx, m, k, n);
                }
                if let Some(gw) = self.slot(grads, *w) {
                    matmul_tn_acc(self.value(*x).data(), g, gw, m, k, n);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for gr in g.chunks(n) {
                        axpy(1.0, gr, gb);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(1.0, g, ga);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = dims2(self.shape(*a));
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let n = node.value.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    axpy(1.0, g, &mut gx[start * n..start * n + g.len()]);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        axpy(1.0, &g[offset..offset + len], gp);
                    }
                    offset += len;
                }
            }
            Op::MeanSquare(a) => {
                let av = self.value(*a).data();
                let c = 2.0 * g[0] / av.len() as f64;
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(c, av, ga);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|s| *s += g[0]);
                }
            }
            Op::TokenEmbed { x, w, b, pos } => {
                let tokens = self.shape(*x)[1];
                let d = self.shape(*pos)[1];
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    let wv = self.value(*w).data();
                    for (t, s) in gx.iter_mut().enumerate() {
                        *s += dot(&g[t * d..(t + 1) * d], wv);
                    }
                }
                if let Some(gw) = self.slot(grads, *w) {
                    for (t, &s) in xv.iter().enumerate() {
                        axpy(s, &g[t * d..(t + 1) * d], gw);
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for gr in g.chunks(d) {
                        axpy(1.0, gr, gb);
                    }
                }
                if let Some(gp) = self.slot(grads, *pos) {
                    for (t, gr) in g.chunks(d).enumerate() {
                        let tt = t % tokens;
                        axpy(1.0, gr, &mut gp[tt * d..(tt + 1) * d]);
                    }
                }
            }
            Op::Attention { q, k, v, groups, heads } => self.attention_backward(g, *q, *k, *v, *groups, *heads, grads),
            Op::Conv1d { x, w, b } => {
                let xs = self.shape(*x);
                let (groups, cin, len) = (xs[0], xs[1], xs[2]);
                let ws = self.shape(*w);
                let (cout, width) = (ws[0], ws[2]);
                let left = (width - 1) / 2;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for gi in 0..groups {
                        for o in 0..cout {
                            let grow = &g[(gi * cout + o) * len..(gi * cout + o + 1) * len];
                            for c in 0..cin {
                                let wrow = &wv[(o * cin + c) * width..(o * cin + c + 1) * width];
                                let xrow = &mut gx[(gi * cin + c) * len..(gi * cin + c + 1) * len];
                                for (j, &wj) in wrow.iter().enumerate() {
                                    let shift = (j + len - left % len) % len;
                                    for (i, &gv) in grow.iter().enumerate() {
                                        xrow[(i + shift) % len] += wj * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gw) = self.slot(grads, *w) {
                    for gi in 0..groups {
                        for o in 0..cout {
                            let grow = &g[(gi * cout + o) * len..(gi * cout + o + 1) * len];
                            for c in 0..cin {
                                let xrow = &xv[(gi * cin + c) * len..(gi * cin + c + 1) * len];
                                for j in 0..width {
                                    let shift = (j + len - left % len) % len;
                                    let mut s = 0.0;
                                    for (i, &gv) in grow.iter().enumerate() {
                                        s += gv * xrow[(i + shift) % len];
                                    }
                                    gw[(o * cin + c) * width + j] += s;
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (r, grow) in g.chunks(len).enumerate() {
                        gb[r % cout] += grow.iter().sum::<f64>();
                    }
                }
            }
            Op::AvgPool(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (i, &gv) in g.iter().enumerate() {
                        ga[2 * i] += 0.5 * gv;
                        ga[2 * i + 1] += 0.5 * gv;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        heads: usize,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (rows, d) = dims2(self.shape(q));
        let tokens = rows / groups;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut kh = vec![0.0; tokens * dh];
        let mut vh = vec![0.0; tokens * dh];
        let mut dkh = vec![0.0; tokens * dh];
        let mut dvh = vec![0.0; tokens * dh];
        let mut p = vec![0.0; tokens];
        let mut dp = vec![0.0; tokens];
        for gi in 0..groups {
            for h in 0..heads {
                gather_head(kv, &mut kh, gi * tokens, tokens, d, h * dh, dh);
                gather_head(vv, &mut vh, gi * tokens, tokens, d, h * dh, dh);
                dkh.iter_mut().for_each(|x| *x = 0.0);
                dvh.iter_mut().for_each(|x| *x = 0.0);
                for i in 0..tokens {
                    let r = gi * tokens + i;
                    let cols = r * d + h * dh..r * d + (h + 1) * dh;
                    let qi = &qv[cols.clone()];
                    let go = &g[cols.clone()];
                    attention_row(qi, &kh, scale, dh, &mut p);
                    let mut c = 0.0;
                    for j in 0..tokens {
                        let vj = &vh[j * dh..(j + 1) * dh];
                        dp[j] = dot(go, vj);
                        c += p[j] * dp[j];
                        for cc in 0..dh {
                            dvh[j * dh + cc] += p[j] * go[cc];
                        }
                    }
                    let dqi = &mut dq[cols];
                    for j in 0..tokens {
                        let ds = scale * p[j] * (dp[j] - c);
                        let kj = &kh[j * dh..(j + 1) * dh];
                        for cc in 0..dh {
                            dqi[cc] += ds * kj[cc];
                            dkh[j * dh + cc] += ds * qi[cc];
                        }
                    }
                }
                scatter_head(&dkh, &mut dk, gi * tokens, tokens, d, h * dh, dh);
                scatter_head(&dvh, &mut dv, gi * tokens, tokens, d, h * dh, dh);
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(s) = self.slot(grads, var) {
                axpy(1.0, &buf, s);
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.shape(v).to_vec();
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    /// Parameter gradients in store order. Parameters bound more than once are summed.
    pub fn param_buffer(&self, tape: &Tape, n_params: usize) -> GradBuffer {
        let mut buf = vec![None::<Vec<f64>>; n_params];
        for &(id, v) in &tape.params {
            if let Some(g) = self.grads.get(v.0).and_then(Option::as_ref) {
                match &mut buf[id.0] {
                    Some(acc) => axpy(1.0, g, acc),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        GradBuffer(buf)
    }
}

fn dims2(s: &[usize]) -> (usize, usize) {
    (s[0], s[1])
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn gather_head(src: &[f64], dst: &mut [f64], row0: usize, tokens: usize, d: usize, col0: usize, dh: usize) {
    for j in 0..tokens {
        let s = (row0 + j) * d + col0;
        dst[j * dh..(j + 1) * dh].copy_from_slice(&src[s..s + dh]);
    }
}

fn scatter_head(src: &[f64], dst: &mut [f64], row0: usize, tokens: usize, d: usize, col0: usize, dh: usize) {
    for j in 0..tokens {
        let s = (row0 + j) * d + col0;
        for c in 0..dh {
            dst[s + c] += src[j * dh + c];
        }
    }
}

/// Softmax over `scale·qᵢ·kⱼ` for one query row, written into `p`.
fn attention_row(qi: &[f64], kh: &[f64], scale: f64, dh: usize, p: &mut [f64]) {
    for (j, pj) in p.iter_mut().enumerate() {
        *pj = scale * dot(qi, &kh[j * dh..(j + 1) * dh]);
    }
    softmax_in_place(p);
}

/// FLOPs of [`Tape::attention`]: per group and head, scores (`2·t²·dh` plus
/// `t²` for scaling), softmax and the weighted value sum (`2·t²·dh`).
pub fn attention_core_flops(groups: usize, tokens: usize, d: usize, heads: usize) -> u64 {
    let dh = d / heads;
    let t2 = (tokens * tokens) as u64;
    (groups * heads) as u64 * (4 * t2 * dh as u64 + t2 + flops::SOFTMAX_PER_ENTRY * t2)
}
