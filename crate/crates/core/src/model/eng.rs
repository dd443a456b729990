//! Evaluation engines: the same forward code runs either on plain tensors
//! (inference) or on the autograd tape (training), so both paths compute
//! identical values.

use alloc::vec::Vec;

use crate::autograd::{NodeId, Tape};
use crate::ops;
use crate::tensor::Tensor;
use crate::Result;

pub(crate) trait Eng {
    type V: Copy;

    /// Registers a tensor the engine treats as a constant.
    fn lift(&mut self, t: &Tensor) -> Self::V;
    fn tensor(&self, v: Self::V) -> &Tensor;

    fn matmul(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn add(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: Self::V, c: f64) -> Self::V;
    fn add_bias_row(&mut self, a: Self::V, bias: Self::V) -> Result<Self::V>;
    fn transpose(&mut self, a: Self::V) -> Result<Self::V>;
    fn softmax_rows(&mut self, a: Self::V) -> Result<Self::V>;
    fn layer_norm(&mut self, a: Self::V, g: Self::V, b: Self::V, eps: f64) -> Result<Self::V>;
    fn gelu(&mut self, a: Self::V) -> Self::V;
    fn slice_cols(&mut self, a: Self::V, start: usize, len: usize) -> Result<Self::V>;
    fn concat_cols(&mut self, parts: &[Self::V]) -> Result<Self::V>;
}

/// Plain-tensor engine backed by an arena of intermediates.
#[derive(Default)]
pub(crate) struct InferEng {
    arena: Vec<Tensor>,
}

impl InferEng {
    pub fn new() -> Self {
        InferEng { arena: Vec::new() }
    }

    fn push(&mut self, t: Tensor) -> usize {
        self.arena.push(t);
        self.arena.len() - 1
    }
}

impl Eng for InferEng {
    type V = usize;

    fn lift(&mut self, t: &Tensor) -> usize {
        self.push(t.clone())
    }

    fn tensor(&self, v: usize) -> &Tensor {
        &self.arena[v]
    }

    fn matmul(&mut self, a: usize, b: usize) -> Result<usize> {
        let t = ops::matmul(&self.arena[a], &self.arena[b])?;
        Ok(self.push(t))
    }

    fn add(&mut self, a: usize, b: usize) -> Result<usize> {
        let t = ops::add(&self.arena[a], &self.arena[b])?;
        Ok(self.push(t))
    }

    fn scale(&mut self, a: usize, c: f64) -> usize {
        let t = ops::scale(&self.arena[a], c);
        self.push(t)
    }

    fn add_bias_row(&mut self, a: usize, bias: usize) -> Result<usize> {
        let t = ops::add_bias_row(&self.arena[a], &self.arena[bias])?;
        Ok(self.push(t))
    }

    fn transpose(&mut self, a: usize) -> Result<usize> {
        let t = ops::transpose(&self.arena[a])?;
        Ok(self.push(t))
    }

    fn softmax_rows(&mut self, a: usize) -> Result<usize> {
        let t = ops::softmax_rows(&self.arena[a])?;
        Ok(self.push(t))
    }

    fn layer_norm(&mut self, a: usize, g: usize, b: usize, eps: f64) -> Result<usize> {
        let (t, _, _) = ops::layer_norm(&self.arena[a], &self.arena[g], &self.arena[b], eps)?;
        Ok(self.push(t))
    }

    fn gelu(&mut self, a: usize) -> usize {
        let t = ops::gelu(&self.arena[a]);
        self.push(t)
    }

    fn slice_cols(&mut self, a: usize, start: usize, len: usize) -> Result<usize> {
        let t = ops::slice_cols(&self.arena[a], start, len)?;
        Ok(self.push(t))
    }

    fn concat_cols(&mut self, parts: &[usize]) -> Result<usize> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| &self.arena[p]).collect();
        let t = ops::concat_cols(&tensors)?;
        Ok(self.push(t))
    }
}

/// Tape-backed engine; values are tape nodes.
pub(crate) struct TapeEng<'a> {
    pub tape: &'a mut Tape,
}

impl Eng for TapeEng<'_> {
    type V = NodeId;

    fn lift(&mut self, t: &Tensor) -> NodeId {
        self.tape.constant(t)
    }

    fn tensor(&self, v: NodeId) -> &Tensor {
        self.tape.value(v)
    }

    fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.tape.matmul(a, b)
    }

    fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.tape.add(a, b)
    }

    fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.tape.scale(a, c)
    }

    fn add_bias_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        self.tape.add_bias_row(a, bias)
    }

    fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.tape.transpose(a)
    }

    fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.tape.softmax_rows(a)
    }

    fn layer_norm(&mut self, a: NodeId, g: NodeId, b: NodeId, eps: f64) -> Result<NodeId> {
        self.tape.layer_norm(a, g, b, eps)
    }

    fn gelu(&mut self, a: NodeId) -> NodeId {
        self.tape.gelu(a)
    }

    fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.tape.slice_cols(a, start, len)
    }

    fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.tape.concat_cols(parts)
    }
}
