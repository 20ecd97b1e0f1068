//! Execution backends for model code.
//!
//! Model forward passes are written once against [`Backend`] and run either
//! eagerly ([`Eager`], any precision, used for inference and caching) or on
//! a differentiation [`Tape`] (64-bit, used for training and gradient
//! checks). Both routes call the same tensor kernels.

use std::marker::PhantomData;
use std::sync::Arc;

use crate::attention::{attention_core, Mask};
use crate::autodiff::{cross_entropy_forward, Tape, Var};
use crate::error::Result;
use crate::ledger::FlopLedger;
use crate::params::ParamId;
use crate::tensor::{self, Element, Tensor};

pub trait Backend {
    type Elem: Element;
    type Value: Clone;

    fn ledger(&self) -> &FlopLedger;
    fn ledger_mut(&mut self) -> &mut FlopLedger;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<Self::Elem>;

    fn param(&mut self, id: ParamId, t: &Arc<Tensor<Self::Elem>>) -> Self::Value;
    fn constant(&mut self, t: Tensor<Self::Elem>) -> Self::Value;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add_row_vector(&mut self, x: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// `a * b^T`
    fn matmul_nt(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn layer_norm(&mut self, x: &Self::Value, gain: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn gelu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn attention(
        &mut self,
        q: &Self::Value,
        k: &Self::Value,
        v: &Self::Value,
        n_head: usize,
        mask: Mask<'_>,
    ) -> Result<Self::Value>;
    fn slice_rows(&mut self, x: &Self::Value, start: usize, end: usize) -> Result<Self::Value>;
    fn concat_rows(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn gather(&mut self, table: &Self::Value, ids: &[usize]) -> Result<Self::Value>;
    /// Scalar sum over rows of `-log softmax(logits_i)[targets_i]`.
    fn cross_entropy_sum(&mut self, logits: &Self::Value, targets: &[usize]) -> Result<Self::Value>;

    fn rows(&self, v: &Self::Value) -> usize {
        self.value(v).rows()
    }
}

/// Eager evaluation without recording; values are shared tensors.
#[derive(Debug)]
pub struct Eager<T> {
    ledger: FlopLedger,
    _elem: PhantomData<T>,
}

impl<T: Element> Default for Eager<T> {
    fn default() -> Self {
        Self { ledger: FlopLedger::new(), _elem: PhantomData }
    }
}

impl<T: Element> Eager<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_ledger(self) -> FlopLedger {
        self.ledger
    }
}

impl<T: Element> Backend for Eager<T> {
    type Elem = T;
    type Value = Arc<Tensor<T>>;

    fn ledger(&self) -> &FlopLedger {
        &self.ledger
    }

    fn ledger_mut(&mut self) -> &mut FlopLedger {
        &mut self.ledger
    }

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T> {
        v
    }

    fn param(&mut self, _id: ParamId, t: &Arc<Tensor<T>>) -> Self::Value {
        Arc::clone(t)
    }

    fn constant(&mut self, t: Tensor<T>) -> Self::Value {
        Arc::new(t)
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(tensor::add(a, b)?))
    }

    fn add_row_vector(&mut self, x: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(tensor::add_row_vector(x, b)?))
    }

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(tensor::matmul(a, b, &mut self.ledger)?))
    }

    fn matmul_nt(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(tensor::matmul_nt(a, b, &mut self.ledger)?))
    }

    fn layer_norm(&mut self, x: &Self::Value, gain: &Self::Value, bias: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(tensor::layer_norm(x, gain, bias)?.0))
    }

    fn gelu(&mut self, x: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(tensor::gelu(x)?))
    }

    fn attention(
        &mut self,
        q: &Self::Value,
        k: &Self::Value,
        v: &Self::Value,
        n_head: usize,
        mask: Mask<'_>,
    ) -> Result<Self::Value> {
        Ok(Arc::new(attention_core(q, k, v, n_head, mask, &mut self.ledger, false)?.out))
    }

    fn slice_rows(&mut self, x: &Self::Value, start: usize, end: usize) -> Result<Self::Value> {
        if start == 0 && end == x.rows() {
            return Ok(Arc::clone(x));
        }
        Ok(Arc::new(tensor::slice_rows(x, start, end)?))
    }

    fn concat_rows(&mut self, parts: &[Self::Value]) -> Result<Self::Value> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| p.as_ref()).collect();
        Ok(Arc::new(tensor::concat_rows(&refs)?))
    }

    fn gather(&mut self, table: &Self::Value, ids: &[usize]) -> Result<Self::Value> {
        Ok(Arc::new(tensor::gather_rows(table, ids)?))
    }

    fn cross_entropy_sum(&mut self, logits: &Self::Value, targets: &[usize]) -> Result<Self::Value> {
        let (loss, _) = cross_entropy_forward(&logits.cast::<f64>(), targets)?;
        Ok(Arc::new(Tensor::scalar(T::from_f64_lossy(loss))))
    }
}

impl Backend for Tape {
    type Elem = f64;
    type Value = Var;

    fn ledger(&self) -> &FlopLedger {
        Tape::ledger(self)
    }

    fn ledger_mut(&mut self) -> &mut FlopLedger {
        Tape::ledger_mut(self)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<f64> {
        Tape::value(self, *v)
    }

    fn param(&mut self, id: ParamId, t: &Arc<Tensor<f64>>) -> Var {
        Tape::param(self, id, t)
    }

    fn constant(&mut self, t: Tensor<f64>) -> Var {
        self.leaf(t, false)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::add(self, *a, *b)
    }

    fn add_row_vector(&mut self, x: &Var, b: &Var) -> Result<Var> {
        Tape::add_row_vector(self, *x, *b)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::matmul(self, *a, *b)
    }

    fn matmul_nt(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::matmul_nt(self, *a, *b)
    }

    fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var) -> Result<Var> {
        Tape::layer_norm(self, *x, *gain, *bias)
    }

    fn gelu(&mut self, x: &Var) -> Result<Var> {
        Tape::gelu(self, *x)
    }

    fn attention(&mut self, q: &Var, k: &Var, v: &Var, n_head: usize, mask: Mask<'_>) -> Result<Var> {
        Tape::attention(self, *q, *k, *v, n_head, mask)
    }

    fn slice_rows(&mut self, x: &Var, start: usize, end: usize) -> Result<Var> {
        Tape::slice_rows(self, *x, start, end)
    }

    fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        Tape::concat_rows(self, parts)
    }

    fn gather(&mut self, table: &Var, ids: &[usize]) -> Result<Var> {
        Tape::gather(self, *table, ids)
    }

    fn cross_entropy_sum(&mut self, logits: &Var, targets: &[usize]) -> Result<Var> {
        Tape::cross_entropy_sum(self, *logits, targets)
    }
}
