//! Named parameter storage shared by the model definitions.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Ordered, named parameter tensors. Names are module path strings such as
/// `blocks.0.gen.1.cross.w_q`.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Element> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

/// Deterministic parameter initializer driven by one seeded stream.
pub struct ParamBuilder<T: Element> {
    store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Element> ParamBuilder<T> {
    pub fn new(seed: u64) -> Self {
        Self { store: ParamStore::default(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut self.rng))).collect()
            }
        };
        self.store.push(name.into(), Tensor::from_parts(shape, data))
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}

impl<T: Element> ParamStore<T> {
    fn push(&mut self, name: String, t: Tensor<T>) -> ParamId {
        self.names.push(name);
        self.tensors.push(Arc::new(t));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Arc<Tensor<T>> {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t.as_ref()))
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Replaces a tensor's values; the shape must not change.
    pub fn set(&mut self, id: ParamId, t: Tensor<T>) -> Result<()> {
        if t.shape() != self.tensors[id.0].shape() {
            return Err(Error::Dimension(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.names[id.0],
                self.tensors[id.0].shape(),
                t.shape()
            )));
        }
        self.tensors[id.0] = Arc::new(t);
        Ok(())
    }

    /// Mutable access for in-place optimizer updates.
    pub fn data_mut(&mut self, id: ParamId) -> &mut [T] {
        Arc::make_mut(&mut self.tensors[id.0]).data_mut()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }

    /// Loads tensors by name; every stored name must be present with the
    /// same shape.
    pub fn load_named(&mut self, entries: &[(String, Tensor<T>)]) -> Result<()> {
        for id in self.ids().collect::<Vec<_>>() {
            let name = self.names[id.0].clone();
            let (_, t) = entries
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            self.set(id, t.clone())?;
        }
        if entries.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                entries.len(),
                self.len()
            )));
        }
        Ok(())
    }
}
