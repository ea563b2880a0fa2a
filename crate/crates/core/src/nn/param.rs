use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NnError;

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named, shaped parameter with its gradient and RMSProp accumulator.
///
/// `values`, `grad` and `opt_state` always have `shape.iter().product()` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub opt_state: Vec<f64>,
    /// Frozen tensors are skipped by the optimizer and receive no gradient.
    pub frozen: bool,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; n],
            grad: vec![0.0; n],
            opt_state: vec![0.0; n],
            frozen: false,
        }
    }

    pub fn from_values(
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, NnError> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(NnError::Dimension {
                op: "param",
                detail: format!("{name}: shape {shape:?} needs {n} values, got {}", values.len()),
            });
        }
        Ok(Self {
            name,
            shape,
            grad: vec![0.0; n],
            opt_state: vec![0.0; n],
            values,
            frozen: false,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows and columns of a matrix parameter; vectors are treated as `n x 1`.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            _ => (self.len(), 1),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Ordered collection of parameter tensors, addressable by id or name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tensor: ParamTensor) -> Result<ParamId, NnError> {
        if self.by_name.contains_key(&tensor.name) {
            return Err(NnError::DuplicateParam(tensor.name));
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(tensor.name.clone(), id);
        self.tensors.push(tensor);
        Ok(id)
    }

    /// Weight matrix of shape `[out, inp]`, Glorot-uniform initialized.
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        out: usize,
        inp: usize,
        rng: &mut R,
    ) -> Result<ParamId, NnError> {
        let a = (6.0 / (out + inp) as f64).sqrt();
        let values = (0..out * inp).map(|_| rng.random_range(-a..=a)).collect();
        self.insert(ParamTensor::from_values(name, vec![out, inp], values)?)
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId, NnError> {
        self.insert(ParamTensor::zeros(name, shape))
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(ParamTensor::zero_grad);
    }

    pub fn set_frozen(&mut self, ids: &[ParamId], frozen: bool) {
        for id in ids {
            self.tensors[id.0].frozen = frozen;
        }
    }

    pub fn new_gradients(&self) -> Gradients {
        Gradients {
            bufs: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// Adds `scale * grads` into every tensor's `grad`.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.bufs) {
            for (dst, src) in t.grad.iter_mut().zip(g) {
                *dst += scale * src;
            }
        }
    }
}

/// Gradient buffers shaped like a [`ParamStore`], filled by `Tape::backward`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    bufs: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.bufs
            .iter()
            .flatten()
            .fold(0.0_f64, |m, g| m.max(g.abs()))
    }
}
