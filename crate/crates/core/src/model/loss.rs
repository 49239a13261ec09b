use super::ModelError;
use crate::tensor::{Scalar, Tensor5};

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over every voxel in the batch, with the gradient
/// w.r.t. `pred`. Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub fn bce_loss<T: Scalar>(pred: &Tensor5<T>, target: &Tensor5<T>) -> Result<(f64, Tensor5<T>), ModelError> {
    if pred.dims() != target.dims() {
        return Err(ModelError::ResolutionMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let n = pred.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &v) in pred.data().iter().zip(target.data()) {
        let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let v = v.as_f64();
        total -= v * p.ln() + (1.0 - v) * (1.0 - p).ln();
        grad.push(T::from_f64_lossy((p - v) / (p * (1.0 - p)) / n));
    }
    Ok((total / n, Tensor5::from_vec(pred.dims(), grad)?))
}
