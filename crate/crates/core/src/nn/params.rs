use std::collections::HashMap;

use rand::Rng;

use super::{Matrix, NnError};

/// A named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Tensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self { name: name.into(), value, grad }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

/// Ordered collection of parameters, addressable by index or name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.tensors.push(Tensor::new(name, value));
        ParamId(id)
    }

    /// Uniform fan-in initialization in `±1/√fan_in`.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) -> Result<(), NnError> {
        if grads.len() != self.tensors.len() {
            return Err(NnError::Shape(format!(
                "gradient set has {} tensors, store has {}",
                grads.len(),
                self.tensors.len()
            )));
        }
        for (t, g) in self.tensors.iter_mut().zip(grads.iter()) {
            if let Some(g) = g {
                t.grad.add_assign(g);
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.value.is_finite() && t.grad.is_finite())
    }

    /// Order-sensitive digest of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for x in t.value.data() {
                h ^= x.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Result of one backward pass; `None` for parameters the loss never touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub(crate) fn new(grads: Vec<Option<Matrix>>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&Matrix>> {
        self.grads.iter().map(Option::as_ref)
    }
}
