use super::{Layer, Mode, Scalar, Tensor5, TensorError};

pub fn relu_forward<T: Scalar>(x: &Tensor5<T>) -> Tensor5<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where the input was positive.
pub fn relu_backward<T: Scalar>(grad: &Tensor5<T>, input: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
    grad.expect_dims(input.dims(), "relu gradient")?;
    let data = grad
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor5::from_vec(grad.dims(), data)
}

#[inline]
fn logistic<T: Scalar>(v: T) -> T {
    // split by sign so exp never overflows
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor5<T>) -> Tensor5<T> {
    x.map(logistic)
}

/// `grad * s * (1 - s)` given the forward output `s`.
pub fn sigmoid_backward<T: Scalar>(grad: &Tensor5<T>, output: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
    grad.expect_dims(output.dims(), "sigmoid gradient")?;
    let data = grad
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &s)| g * s * (T::one() - s))
        .collect();
    Tensor5::from_vec(grad.dims(), data)
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T: Scalar = f32> {
    cache: Option<Tensor5<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(relu_forward(x))
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let x = self.cache.take().ok_or(TensorError::MissingCache("relu"))?;
        relu_backward(grad, &x)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T: Scalar = f32> {
    cache: Option<Tensor5<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

impl<T: Scalar> Layer<T> for Sigmoid<T> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        let y = sigmoid(x);
        self.cache = (mode == Mode::Train).then(|| y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let y = self.cache.take().ok_or(TensorError::MissingCache("sigmoid"))?;
        sigmoid_backward(grad, &y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::{check_layer_gradients, random_tensor};

    #[test]
    fn relu_values() {
        let x = Tensor5::<f32>::from_vec([1, 1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(&Tensor5::<f32>::zeros([1, 1, 1, 1, 1])).data(), &[0.5]);
        let big = Tensor5::<f64>::from_vec([1, 1, 1, 1, 2], vec![-800.0, 800.0]).unwrap();
        let s = sigmoid(&big);
        assert!(s.all_finite());
        assert_eq!(s.data(), &[0.0, 1.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            // keep inputs away from the relu kink
            let x = random_tensor::<f64>([2, 2, 2, 3, 3], seed).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
            assert!(check_layer_gradients(&mut Relu::new(), &x, seed, 1e-5) < 1e-6);
            let x = x.scale(3.0);
            assert!(check_layer_gradients(&mut Sigmoid::new(), &x, seed, 1e-5) < 1e-6);
        }
    }
}
