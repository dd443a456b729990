//! Reverse-mode gradients over a fixed op vocabulary.
//!
//! A [`Tape`] is an append-only list of nodes in topological order; `backward`
//! walks it in reverse, accumulating gradients only along paths that reach a
//! trainable leaf. The forward math is shared with [`crate::ops`], so taped
//! and untaped evaluation of the same expression produce identical bits.

use alloc::vec;
use alloc::vec::Vec;

use crate::ops;
use crate::tensor::Tensor;
use crate::{err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    AddBiasRow { a: NodeId, bias: NodeId },
    Transpose { a: NodeId },
    SoftmaxRows { a: NodeId },
    LayerNorm { a: NodeId, gain: NodeId, bias: NodeId, means: Vec<f64>, invstds: Vec<f64> },
    Gelu { a: NodeId },
    GatherRows { a: NodeId, idx: Vec<usize> },
    ConcatRows { parts: Vec<NodeId> },
    SliceRows { a: NodeId, start: usize, len: usize },
    SliceCols { a: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    SumAll { a: NodeId },
    MeanAll { a: NodeId },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by node.
pub struct Grads {
    inner: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.inner[id.0].as_deref()
    }

    /// Gradient of a leaf that was marked trainable.
    pub fn expect(&self, id: NodeId) -> &[f64] {
        self.inner[id.0]
            .as_deref()
            .expect("gradient requested for a node outside the trainable cone")
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Registers a leaf; whether gradients accumulate follows
    /// `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let needs = t.requires_grad;
        self.push(t.clone(), Op::Leaf, needs)
    }

    /// Registers a leaf that never tracks gradients (inputs, constants).
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        let mut v = t.clone();
        v.requires_grad = false;
        self.push(v, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Matmul { a, b }, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::add(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::sub(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub { a, b }, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::mul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = ops::scale(self.value(a), c);
        let ng = self.needs(a);
        self.push(v, Op::Scale { a, c }, ng)
    }

    pub fn add_bias_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = ops::add_bias_row(self.value(a), self.value(bias))?;
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(v, Op::AddBiasRow { a, bias }, ng))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::transpose(self.value(a))?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Transpose { a }, ng))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::softmax_rows(self.value(a))?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::SoftmaxRows { a }, ng))
    }

    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (v, means, invstds) = ops::layer_norm(self.value(a), self.value(gain), self.value(bias), eps)?;
        let ng = self.needs(a) || self.needs(gain) || self.needs(bias);
        Ok(self.push(v, Op::LayerNorm { a, gain, bias, means, invstds }, ng))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = ops::gelu(self.value(a));
        let ng = self.needs(a);
        self.push(v, Op::Gelu { a }, ng)
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let v = ops::gather_rows(self.value(a), idx)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::GatherRows { a, idx: idx.to_vec() }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat_rows(&tensors)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(v, Op::ConcatRows { parts: parts.to_vec() }, ng))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = ops::slice_rows(self.value(a), start, len)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::SliceRows { a, start, len }, ng))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = ops::slice_cols(self.value(a), start, len)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::SliceCols { a, start, len }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat_cols(&tensors)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(v, Op::ConcatCols { parts: parts.to_vec() }, ng))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = ops::sum_all(self.value(a));
        let ng = self.needs(a);
        self.push(v, Op::SumAll { a }, ng)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = ops::mean_all(self.value(a));
        let ng = self.needs(a);
        self.push(v, Op::MeanAll { a }, ng)
    }

    /// Mean squared difference, the training loss primitive.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }

    /// Backpropagates from a scalar output node.
    pub fn backward(&self, out: NodeId) -> Result<Grads> {
        if self.value(out).numel() != 1 {
            return Err(err!(
                Shape,
                "backward: output must be scalar, got {:?}",
                self.value(out).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);

        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.accumulate(i, &gout, &mut grads)?;
            // Leaves keep their gradient; interior grads are dropped above
            // once consumed, apart from nodes still pending upstream.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gout);
            }
        }
        Ok(Grads { inner: grads })
    }

    fn add_into(&self, grads: &mut Vec<Option<Vec<f64>>>, id: NodeId, delta: &[f64]) {
        if !self.needs(id) {
            return;
        }
        let slot = &mut grads[id.0];
        match slot {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn accumulate(&self, i: usize, gout: &[f64], grads: &mut Vec<Option<Vec<f64>>>) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, _k) = (va.rows(), va.cols());
                let n = vb.cols();
                let g = Tensor::new(&[m, n], gout.to_vec())?;
                if self.needs(*a) {
                    let da = ops::matmul_nt(&g, vb)?;
                    self.add_into(grads, *a, da.data());
                }
                if self.needs(*b) {
                    let db = ops::matmul_tn(va, &g)?;
                    self.add_into(grads, *b, db.data());
                }
            }
            Op::Add { a, b } => {
                self.add_into(grads, *a, gout);
                self.add_into(grads, *b, gout);
            }
            Op::Sub { a, b } => {
                self.add_into(grads, *a, gout);
                if self.needs(*b) {
                    let neg: Vec<f64> = gout.iter().map(|v| -v).collect();
                    self.add_into(grads, *b, &neg);
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let vb = self.value(*b).data();
                    let da: Vec<f64> = gout.iter().zip(vb).map(|(g, v)| g * v).collect();
                    self.add_into(grads, *a, &da);
                }
                if self.needs(*b) {
                    let va = self.value(*a).data();
                    let db: Vec<f64> = gout.iter().zip(va).map(|(g, v)| g * v).collect();
                    self.add_into(grads, *b, &db);
                }
            }
            Op::Scale { a, c } => {
                if self.needs(*a) {
                    let da: Vec<f64> = gout.iter().map(|g| g * c).collect();
                    self.add_into(grads, *a, &da);
                }
            }
            Op::AddBiasRow { a, bias } => {
                self.add_into(grads, *a, gout);
                if self.needs(*bias) {
                    let n = self.value(*bias).numel();
                    let mut db = vec![0.0; n];
                    for chunk in gout.chunks_exact(n) {
                        for (d, g) in db.iter_mut().zip(chunk) {
                            *d += g;
                        }
                    }
                    self.add_into(grads, *bias, &db);
                }
            }
            Op::Transpose { a } => {
                if self.needs(*a) {
                    let (n, m) = (node.value.rows(), node.value.cols());
                    let g = Tensor::new(&[n, m], gout.to_vec())?;
                    let da = ops::transpose(&g)?;
                    self.add_into(grads, *a, da.data());
                }
            }
            Op::SoftmaxRows { a } => {
                if self.needs(*a) {
                    let y = node.value.data();
                    let n = node.value.cols();
                    let mut da = vec![0.0; y.len()];
                    for r in 0..node.value.rows() {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &gout[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for ((d, &yv), &gv) in da[r * n..(r + 1) * n].iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    self.add_into(grads, *a, &da);
                }
            }
            Op::LayerNorm { a, gain, bias, means, invstds } => {
                let va = self.value(*a);
                let (m, n) = (va.rows(), va.cols());
                let x = va.data();
                let g = self.value(*gain).data();
                if self.needs(*bias) {
                    let mut db = vec![0.0; n];
                    for chunk in gout.chunks_exact(n) {
                        for (d, gv) in db.iter_mut().zip(chunk) {
                            *d += gv;
                        }
                    }
                    self.add_into(grads, *bias, &db);
                }
                if self.needs(*gain) {
                    let mut dg = vec![0.0; n];
                    for r in 0..m {
                        let xr = &x[r * n..(r + 1) * n];
                        let gr = &gout[r * n..(r + 1) * n];
                        for j in 0..n {
                            let xhat = (xr[j] - means[r]) * invstds[r];
                            dg[j] += gr[j] * xhat;
                        }
                    }
                    self.add_into(grads, *gain, &dg);
                }
                if self.needs(*a) {
                    let mut da = vec![0.0; m * n];
                    for r in 0..m {
                        let xr = &x[r * n..(r + 1) * n];
                        let gr = &gout[r * n..(r + 1) * n];
                        let inv = invstds[r];
                        let mu = means[r];
                        let mut mean_h = 0.0;
                        let mut mean_hx = 0.0;
                        for j in 0..n {
                            let h = gr[j] * g[j];
                            let xhat = (xr[j] - mu) * inv;
                            mean_h += h;
                            mean_hx += h * xhat;
                        }
                        mean_h /= n as f64;
                        mean_hx /= n as f64;
                        for j in 0..n {
                            let h = gr[j] * g[j];
                            let xhat = (xr[j] - mu) * inv;
                            da[r * n + j] = inv * (h - mean_h - xhat * mean_hx);
                        }
                    }
                    self.add_into(grads, *a, &da);
                }
            }
            Op::Gelu { a } => {
                if self.needs(*a) {
                    let x = self.value(*a).data();
                    let da: Vec<f64> = gout
                        .iter()
                        .zip(x)
                        .map(|(g, &xv)| g * ops::gelu_prime(xv))
                        .collect();
                    self.add_into(grads, *a, &da);
                }
            }
            Op::GatherRows { a, idx } => {
                if self.needs(*a) {
                    let va = self.value(*a);
                    let n = va.cols();
                    let mut da = vec![0.0; va.numel()];
                    for (r, &src) in idx.iter().enumerate() {
                        for j in 0..n {
                            da[src * n + j] += gout[r * n + j];
                        }
                    }
                    self.add_into(grads, *a, &da);
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.needs(p) {
                        self.add_into(grads, p, &gout[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceRows { a, start, len } => {
                if self.needs(*a) {
                    let va = self.value(*a);
                    let n = va.cols();
                    let mut da = vec![0.0; va.numel()];
                    da[start * n..(start + len) * n].copy_from_slice(gout);
                    self.add_into(grads, *a, &da);
                }
            }
            Op::SliceCols { a, start, len } => {
                if self.needs(*a) {
                    let va = self.value(*a);
                    let (m, n) = (va.rows(), va.cols());
                    let mut da = vec![0.0; va.numel()];
                    for r in 0..m {
                        da[r * n + start..r * n + start + len]
                            .copy_from_slice(&gout[r * len..(r + 1) * len]);
                    }
                    self.add_into(grads, *a, &da);
                }
            }
            Op::ConcatCols { parts } => {
                let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let pn = self.value(p).cols();
                    if self.needs(p) {
                        let mut dp = vec![0.0; rows * pn];
                        for r in 0..rows {
                            dp[r * pn..(r + 1) * pn]
                                .copy_from_slice(&gout[r * total + offset..r * total + offset + pn]);
                        }
                        self.add_into(grads, p, &dp);
                    }
                    offset += pn;
                }
            }
            Op::SumAll { a } => {
                if self.needs(*a) {
                    let da = vec![gout[0]; self.value(*a).numel()];
                    self.add_into(grads, *a, &da);
                }
            }
            Op::MeanAll { a } => {
                if self.needs(*a) {
                    let n = self.value(*a).numel();
                    let da = vec![gout[0] / n as f64; n];
                    self.add_into(grads, *a, &da);
                }
            }
        }
        Ok(())
    }
}
