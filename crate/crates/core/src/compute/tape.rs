//! Reverse-mode differentiation over a linear record of operations.
//!
//! Each op computes its value eagerly and appends a node that keeps the
//! operands needed by its backward rule. [`Tape::backward`] walks the nodes
//! in exact reverse order, pushes gradients into trainable parameters of the
//! [`ParamStore`] and leaves the tape empty.

use super::kernels;
use super::param::{ParamId, ParamStore};
use super::tensor::{numel_of, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Bcast {
    Same,
    /// `b` matches the trailing dims of `a` (bias-style).
    SuffixB,
    /// `a` matches the trailing dims of `b`.
    SuffixA,
    Map {
        ai: Vec<usize>,
        bi: Vec<usize>,
    },
}

#[derive(Debug)]
struct MatMulPlan {
    i: usize,
    j: usize,
    k: usize,
    /// (a matrix index, b matrix index) per output matrix.
    pairs: Vec<(usize, usize)>,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        plan: MatMulPlan,
    },
    Transpose {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
        bc: Bcast,
    },
    Sub {
        a: Var,
        b: Var,
        bc: Bcast,
    },
    Mul {
        a: Var,
        b: Var,
        bc: Bcast,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Gelu {
        x: Var,
    },
    Ln {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        map: Vec<usize>,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    MeanAbsDiff {
        x: Var,
        target: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// For every element of `out_shape`, the flat offset into a tensor of
/// `src_shape` broadcast against it (right-aligned, numpy rules).
fn broadcast_map(src_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let pad = out_shape.len() - src_shape.len();
    let src_strides = row_major_strides(src_shape);
    let strides: Vec<usize> = (0..out_shape.len())
        .map(|d| {
            if d < pad || src_shape[d - pad] == 1 {
                0
            } else {
                src_strides[d - pad]
            }
        })
        .collect();
    strided_map(out_shape, &strides)
}

/// Flat source offsets obtained by walking `shape` in row-major order with
/// per-axis source `strides`.
fn strided_map(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let n = numel_of(shape);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
    out
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for d in 0..n {
        let da = if d + a.len() >= n {
            a[d + a.len() - n]
        } else {
            1
        };
        let db = if d + b.len() >= n {
            b[d + b.len() - n]
        } else {
            1
        };
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn plan_broadcast(a: &[usize], b: &[usize], what: &str) -> Result<(Vec<usize>, Bcast)> {
    if a == b {
        return Ok((a.to_vec(), Bcast::Same));
    }
    if b.len() <= a.len() && a.ends_with(b) {
        return Ok((a.to_vec(), Bcast::SuffixB));
    }
    if a.len() < b.len() && b.ends_with(a) {
        return Ok((b.to_vec(), Bcast::SuffixA));
    }
    let out = broadcast_shape(a, b)
        .ok_or_else(|| Error::Shape(format!("{what}: cannot broadcast {a:?} with {b:?}")))?;
    let ai = broadcast_map(a, &out);
    let bi = broadcast_map(b, &out);
    Ok((out, Bcast::Map { ai, bi }))
}

impl Bcast {
    #[inline]
    fn idx(&self, i: usize, a_len: usize, b_len: usize) -> (usize, usize) {
        match self {
            Bcast::Same => (i, i),
            Bcast::SuffixB => (i, i % b_len),
            Bcast::SuffixA => (i % a_len, i),
            Bcast::Map { ai, bi } => (ai[i], bi[i]),
        }
    }
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (never differentiated).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Records a parameter leaf; its value is copied onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    /// Batched matrix product `[.., I, J] × [.., J, K] → [.., I, K]` with
    /// broadcasting over the leading (batch) dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::Shape(format!(
                "matmul: incompatible shapes {sa:?} and {sb:?}"
            )));
        }
        let (i, j, k) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let batch_out = broadcast_shape(batch_a, batch_b).ok_or_else(|| {
            Error::Shape(format!(
                "matmul: batch dimensions of {sa:?} and {sb:?} do not broadcast"
            ))
        })?;
        let nb_a = numel_of(batch_a);
        let nb_b = numel_of(batch_b);

        // A weight matrix shared by every batch element folds into one GEMM.
        let plan = if nb_b == 1 && batch_a == batch_out.as_slice() {
            MatMulPlan {
                i: i * nb_a,
                j,
                k,
                pairs: vec![(0, 0)],
            }
        } else {
            let am = broadcast_map(batch_a, &batch_out);
            let bm = broadcast_map(batch_b, &batch_out);
            MatMulPlan {
                i,
                j,
                k,
                pairs: am.into_iter().zip(bm).collect(),
            }
        };

        let mut out_shape = batch_out;
        out_shape.extend([i, k]);
        let mut out = vec![0.0; numel_of(&out_shape)];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            let (pi, pj, pk) = (plan.i, plan.j, plan.k);
            for (p, &(ia, ib)) in plan.pairs.iter().enumerate() {
                kernels::matmul(
                    &av[ia * pi * pj..(ia + 1) * pi * pj],
                    &bv[ib * pj * pk..(ib + 1) * pj * pk],
                    pi,
                    pj,
                    pk,
                    &mut out[p * pi * pk..(p + 1) * pi * pk],
                );
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::MatMul { a, b, plan },
            needs,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::Shape(format!(
                "transpose needs rank >= 2, got {s:?}"
            )));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for (blk_out, blk_in) in out.chunks_mut(r * c).zip(src.chunks(r * c)) {
            for i in 0..r {
                for j in 0..c {
                    blk_out[j * r + i] = blk_in[i * c + j];
                }
            }
        }
        let mut shape = s;
        let n = shape.len();
        shape.swap(n - 1, n - 2);
        let needs = self.needs(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Transpose { x }, needs))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(Var, Var, Bcast) -> Op,
    ) -> Result<Var> {
        let (shape, bc) = plan_broadcast(self.shape(a), self.shape(b), what)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let (la, lb) = (av.len(), bv.len());
        let data: Vec<f64> = (0..numel_of(&shape))
            .map(|i| {
                let (ia, ib) = bc.idx(i, la, lb);
                f(av[ia], bv[ib])
            })
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, data), make(a, b, bc), needs))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, |a, b, bc| Op::Add { a, b, bc })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, |a, b, bc| Op::Sub { a, b, bc })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, |a, b, bc| Op::Mul { a, b, bc })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect());
        let needs = self.needs(x);
        self.push(out, Op::Scale { x, c }, needs)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().map(|&v| gelu(v)).collect(),
        );
        let needs = self.needs(x);
        self.push(out, Op::Gelu { x }, needs)
    }

    /// Natural logarithm; non-positive entries are a numeric error.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.data().iter().any(|&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::Numeric("ln of a non-positive value".into()));
        }
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().map(|v| v.ln()).collect(),
        );
        let needs = self.needs(x);
        Ok(self.push(out, Op::Ln { x }, needs))
    }

    /// Softmax over the last axis, with the row maximum subtracted first.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape().to_vec();
        let cols = *s
            .last()
            .ok_or_else(|| Error::Shape("softmax of a scalar".into()))?;
        if t.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let mut out = t.data().to_vec();
        crate::par::for_each_row(&mut out, cols, |_, row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = 1.0 / sum;
            row.iter_mut().for_each(|v| *v *= inv);
        });
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("softmax produced a non-finite value".into()));
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::from_parts(s, out), Op::Softmax { x }, needs))
    }

    /// Normalizes the last axis to zero mean / unit variance, then applies
    /// `gamma * x̂ + beta`. A constant row yields `beta` exactly.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap_or(&0);
        if d == 0 || s.is_empty() {
            return Err(Error::Shape("layer_norm over an empty axis".into()));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm: gamma {:?} / beta {:?} must be [{d}]",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xv = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            // Constant rows normalize to exact zeros; rounding in `mean` would
            // otherwise leak through amplified by 1/sqrt(eps).
            let constant = row.iter().all(|&v| v == row[0]);
            let rs = 1.0 / (var + eps).sqrt();
            if !rs.is_finite() {
                return Err(Error::Numeric(
                    "layer_norm of a constant row with eps = 0".into(),
                ));
            }
            rstd[r] = rs;
            for c in 0..d {
                let xh = if constant { 0.0 } else { (row[c] - mean) * rs };
                xhat[r * d + c] = xh;
                out[r * d + c] = g[c] * xh + b[c];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor::from_parts(s, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape { x }, needs))
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len()
            || perm
                .iter()
                .any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Shape(format!(
                "permute: {perm:?} is not a permutation of the axes of {s:?}"
            )));
        }
        let in_strides = row_major_strides(&s);
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let map = strided_map(&out_shape, &strides);
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Permute { x, map },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(v), Op::Sum { x }, needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = t.data().iter().sum::<f64>() / t.numel() as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(v), Op::Mean { x }, needs)
    }

    /// `mean |x − target|`, the L1 training loss.
    pub fn mean_abs_diff(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "loss: prediction {:?} vs target {:?}",
                t.shape(),
                target.shape()
            )));
        }
        let v = t
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
            / t.numel() as f64;
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::scalar(v),
            Op::MeanAbsDiff {
                x,
                target: target.clone(),
            },
            needs,
        ))
    }

    /// Accumulates `∂loss/∂θ` into every trainable parameter on the tape and
    /// clears the tape. Frozen parameters end up with an all-zero gradient.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("loss is {}", lv.data()[0])));
        }
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if let Op::Param(id) = node.op {
                let p = store.get_mut(id);
                if !p.trainable {
                    if p.grad.is_none() {
                        p.grad = Some(Tensor::zeros(p.value.shape().to_vec()));
                    }
                    continue;
                }
                if let Some(g) = grads[idx].take() {
                    match &mut p.grad {
                        Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => p.grad = Some(Tensor::from_parts(p.value.shape().to_vec(), g)),
                    }
                }
                continue;
            }
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            backprop(&nodes, idx, &g, &mut grads);
        }
        Ok(())
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]))
}

fn backprop(nodes: &[Node], idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[idx];
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Input | Op::Param(_) => {}
        Op::MatMul { a, b, plan } => {
            let (av, bv) = (val(*a), val(*b));
            let (pi, pj, pk) = (plan.i, plan.j, plan.k);
            if let Some(ga) = acc(grads, nodes, *a) {
                for (p, &(ia, ib)) in plan.pairs.iter().enumerate() {
                    kernels::matmul_nt_acc(
                        &g[p * pi * pk..(p + 1) * pi * pk],
                        &bv[ib * pj * pk..(ib + 1) * pj * pk],
                        pi,
                        pj,
                        pk,
                        &mut ga[ia * pi * pj..(ia + 1) * pi * pj],
                    );
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for (p, &(ia, ib)) in plan.pairs.iter().enumerate() {
                    kernels::matmul_tn_acc(
                        &av[ia * pi * pj..(ia + 1) * pi * pj],
                        &g[p * pi * pk..(p + 1) * pi * pk],
                        pi,
                        pj,
                        pk,
                        &mut gb[ib * pj * pk..(ib + 1) * pj * pk],
                    );
                }
            }
        }
        Op::Transpose { x } => {
            let s = node.value.shape();
            // value is [.., c, r]; input was [.., r, c]
            let (c, r) = (s[s.len() - 2], s[s.len() - 1]);
            if let Some(gx) = acc(grads, nodes, *x) {
                for (blk_g, blk_x) in g.chunks(r * c).zip(gx.chunks_mut(r * c)) {
                    for i in 0..r {
                        for j in 0..c {
                            blk_x[i * c + j] += blk_g[j * r + i];
                        }
                    }
                }
            }
        }
        Op::Add { a, b, bc } | Op::Sub { a, b, bc } => {
            let sign = if matches!(node.op, Op::Sub { .. }) {
                -1.0
            } else {
                1.0
            };
            let (la, lb) = (val(*a).len(), val(*b).len());
            if let Some(ga) = acc(grads, nodes, *a) {
                for (i, gi) in g.iter().enumerate() {
                    ga[bc.idx(i, la, lb).0] += gi;
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for (i, gi) in g.iter().enumerate() {
                    gb[bc.idx(i, la, lb).1] += sign * gi;
                }
            }
        }
        Op::Mul { a, b, bc } => {
            let (av, bv) = (val(*a), val(*b));
            let (la, lb) = (av.len(), bv.len());
            if let Some(ga) = acc(grads, nodes, *a) {
                for (i, gi) in g.iter().enumerate() {
                    let (ia, ib) = bc.idx(i, la, lb);
                    ga[ia] += gi * bv[ib];
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for (i, gi) in g.iter().enumerate() {
                    let (ia, ib) = bc.idx(i, la, lb);
                    gb[ib] += gi * av[ia];
                }
            }
        }
        Op::Scale { x, c } => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi);
            }
        }
        Op::Gelu { x } => {
            let xv = val(*x);
            if let Some(gx) = acc(grads, nodes, *x) {
                for ((o, gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    *o += gi * gelu_grad(xi);
                }
            }
        }
        Op::Ln { x } => {
            let xv = val(*x);
            if let Some(gx) = acc(grads, nodes, *x) {
                for ((o, gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    *o += gi / xi;
                }
            }
        }
        Op::Softmax { x } => {
            let y = node.value.data();
            let cols = *node.value.shape().last().unwrap();
            if let Some(gx) = acc(grads, nodes, *x) {
                for ((gy, yr), gxr) in g.chunks(cols).zip(y.chunks(cols)).zip(gx.chunks_mut(cols)) {
                    let dot: f64 = gy.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gi), &yi) in gxr.iter_mut().zip(gy).zip(yr) {
                        *o += yi * (gi - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let d = val(*gamma).len();
            let gam = val(*gamma);
            if let Some(gg) = acc(grads, nodes, *gamma) {
                for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for c in 0..d {
                        gg[c] += gr[c] * xr[c];
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, *beta) {
                for gr in g.chunks(d) {
                    for c in 0..d {
                        gb[c] += gr[c];
                    }
                }
            }
            if let Some(gx) = acc(grads, nodes, *x) {
                let inv_d = 1.0 / d as f64;
                for (r, ((gr, xr), gxr)) in g
                    .chunks(d)
                    .zip(xhat.chunks(d))
                    .zip(gx.chunks_mut(d))
                    .enumerate()
                {
                    let rs = rstd[r];
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for c in 0..d {
                        let dxh = gr[c] * gam[c];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xr[c];
                    }
                    mean_dxh *= inv_d;
                    mean_dxh_xh *= inv_d;
                    for c in 0..d {
                        let dxh = gr[c] * gam[c];
                        gxr[c] += rs * (dxh - mean_dxh - xr[c] * mean_dxh_xh);
                    }
                }
            }
        }
        Op::Reshape { x } => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
            }
        }
        Op::Permute { x, map } => {
            if let Some(gx) = acc(grads, nodes, *x) {
                for (gi, &src) in g.iter().zip(map) {
                    gx[src] += gi;
                }
            }
        }
        Op::Sum { x } => {
            if let Some(gx) = acc(grads, nodes, *x) {
                gx.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        Op::Mean { x } => {
            if let Some(gx) = acc(grads, nodes, *x) {
                let s = g[0] / gx.len() as f64;
                gx.iter_mut().for_each(|o| *o += s);
            }
        }
        Op::MeanAbsDiff { x, target } => {
            let xv = val(*x);
            if let Some(gx) = acc(grads, nodes, *x) {
                let s = g[0] / gx.len() as f64;
                for ((o, &p), &t) in gx.iter_mut().zip(xv).zip(target.data()) {
                    let d = p - t;
                    *o += if d > 0.0 {
                        s
                    } else if d < 0.0 {
                        -s
                    } else {
                        0.0
                    };
                }
            }
        }
    }
}

/// Free-function form of [`Tape::backward`].
pub fn backward(loss: Var, tape: &mut Tape, store: &mut ParamStore) -> Result<()> {
    tape.backward(loss, store)
}
