use super::{Scalar, Tensor5};

/// A learnable tensor together with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor5<T>,
    pub grad: Tensor5<T>,
    /// Whether decoupled weight decay applies (false for biases and norm terms).
    pub decay: bool,
    /// Logical rank stored in checkpoints; biases are rank 1, kernels rank 5.
    pub rank: u8,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor5<T>, decay: bool, rank: u8) -> Self {
        let grad = Tensor5::zeros(value.dims());
        Self {
            name: name.into(),
            value,
            grad,
            decay,
            rank,
        }
    }

    /// Per-channel vector stored as `(1, 1, 1, 1, C)`.
    pub fn vector(name: impl Into<String>, len: usize, fill: T, decay: bool) -> Self {
        Self::new(name, Tensor5::filled([1, 1, 1, 1, len], fill), decay, 1)
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Dims as written to a checkpoint (trailing `rank` axes).
    pub fn logical_dims(&self) -> Vec<usize> {
        logical_dims(&self.value, self.rank)
    }
}

/// Non-learnable state such as running normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor5<T>,
    pub rank: u8,
}

impl<T: Scalar> Buffer<T> {
    pub fn vector(name: impl Into<String>, len: usize, fill: T) -> Self {
        Self {
            name: name.into(),
            value: Tensor5::filled([1, 1, 1, 1, len], fill),
            rank: 1,
        }
    }

    pub fn logical_dims(&self) -> Vec<usize> {
        logical_dims(&self.value, self.rank)
    }
}

fn logical_dims<T: Scalar>(t: &Tensor5<T>, rank: u8) -> Vec<usize> {
    t.dims()[5 - rank as usize..].to_vec()
}

