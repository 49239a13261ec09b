//! Dense rank-5 tensors `(N, C, D, H, W)` and the fixed vocabulary of 3-D
//! network layers, each with an explicit backward pass.

mod activation;
mod checkpoint;
mod conv;
pub mod gradcheck;
mod init;
mod norm;
mod param;
mod pool;
mod resize;

pub use activation::{relu_backward, relu_forward, sigmoid, sigmoid_backward, Relu, Sigmoid};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointEntry,
    CKP_MAGIC,
};
pub use conv::{
    conv3d_backward, conv3d_forward, deconv3d_backward, deconv3d_forward, Conv3d, ConvSpec,
    Deconv3d,
};
pub use init::{kaiming_uniform, InitRng};
pub use norm::{BatchNorm3d, NORM_EPS, NORM_MOMENTUM};
pub use param::{Buffer, Parameter};
pub use pool::{MaxPool3d, PoolSpec};
pub use resize::{adaptive_resize, adaptive_resize_backward, AdaptiveResize};

use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("normalization over an empty batch volume")]
    ZeroBatchVolume,
    #[error("backward called on {0} without a cached training forward")]
    MissingCache(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn mismatch(msg: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch(msg.into())
}

/// Element type for tensors: `f32` for training, `f64` for verification.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Default + Debug + Send + Sync + 'static
{
    /// `C <- alpha * A B + beta * C` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: A too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: B too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: C too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above keep every strided access in bounds.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense `(N, C, D, H, W)` array, row-major with `W` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<T = f32> {
    dims: [usize; 5],
    data: Vec<T>,
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(dims: [usize; 5]) -> Self {
        Self {
            dims,
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn filled(dims: [usize; 5], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 5], data: Vec<T>) -> Result<Self, TensorError> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(mismatch(format!(
                "{} values for dims {dims:?} ({n} expected)",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 5], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = dims.iter().product();
        Self {
            dims,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn dims(&self) -> [usize; 5] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.dims[2], self.dims[3], self.dims[4]]
    }

    /// Elements per channel plane (`D * H * W`).
    pub fn volume(&self) -> usize {
        self.dims[2] * self.dims[3] * self.dims[4]
    }

    /// Elements per batch sample (`C * D * H * W`).
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.volume()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[n * s..(n + 1) * s]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> usize {
        (((n * self.dims[1] + c) * self.dims[2] + d) * self.dims[3] + h) * self.dims[4] + w
    }

    pub fn at(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, d, h, w)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|v| v * a)
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.expect_dims(other.dims, "add")?;
        Ok(Self {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        self.expect_dims(other.dims, "add_assign")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    /// Sum of elementwise products, accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> Result<f64, TensorError> {
        self.expect_dims(other.dims, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor5<U> {
        Tensor5 {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub fn reshape(self, dims: [usize; 5]) -> Result<Self, TensorError> {
        Self::from_vec(dims, self.data)
    }

    pub(crate) fn expect_dims(&self, dims: [usize; 5], what: &str) -> Result<(), TensorError> {
        if self.dims == dims {
            Ok(())
        } else {
            Err(mismatch(format!("{what}: {:?} vs {dims:?}", self.dims)))
        }
    }

    /// Stacks equally shaped single-sample tensors along the batch axis.
    pub fn stack(samples: &[Self]) -> Result<Self, TensorError> {
        let first = samples
            .first()
            .ok_or_else(|| mismatch("stack of zero tensors"))?;
        let mut dims = first.dims;
        let mut data = Vec::with_capacity(first.len() * samples.len());
        for s in samples {
            if s.dims[1..] != first.dims[1..] {
                return Err(mismatch(format!("stack: {:?} vs {:?}", s.dims, first.dims)));
            }
            data.extend_from_slice(&s.data);
        }
        dims[0] = data.len() / first.sample_len().max(1);
        Ok(Self { dims, data })
    }
}

/// Channel-wise concatenation `[a, b]` (the UNet skip join).
pub fn concat_channels<T: Scalar>(a: &Tensor5<T>, b: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
    if a.batch() != b.batch() || a.spatial() != b.spatial() {
        return Err(mismatch(format!("concat: {:?} vs {:?}", a.dims, b.dims)));
    }
    let (sa, sb) = (a.sample_len(), b.sample_len());
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..a.batch() {
        data.extend_from_slice(&a.data[n * sa..(n + 1) * sa]);
        data.extend_from_slice(&b.data[n * sb..(n + 1) * sb]);
    }
    let mut dims = a.dims;
    dims[1] += b.channels();
    Ok(Tensor5 { dims, data })
}

/// Inverse of [`concat_channels`]: splits after the first `first_channels`.
pub fn split_channels<T: Scalar>(
    g: &Tensor5<T>,
    first_channels: usize,
) -> Result<(Tensor5<T>, Tensor5<T>), TensorError> {
    if first_channels > g.channels() {
        return Err(mismatch("split beyond channel count"));
    }
    let v = g.volume();
    let (ca, cb) = (first_channels, g.channels() - first_channels);
    let mut a = Vec::with_capacity(g.batch() * ca * v);
    let mut b = Vec::with_capacity(g.batch() * cb * v);
    for n in 0..g.batch() {
        let s = g.sample(n);
        a.extend_from_slice(&s[..ca * v]);
        b.extend_from_slice(&s[ca * v..]);
    }
    let mut da = g.dims;
    da[1] = ca;
    let mut db = g.dims;
    db[1] = cb;
    Ok((Tensor5 { dims: da, data: a }, Tensor5 { dims: db, data: b }))
}

/// Whether a forward pass should cache for backward and use batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A layer with a forward pass, a matching backward pass, and named state.
pub trait Layer<T: Scalar> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError>;

    /// Propagates `grad` (w.r.t. the last training forward output) to the
    /// input, accumulating parameter gradients along the way.
    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError>;

    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut Parameter<T>)) {}

    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&mut Buffer<T>)) {}
}

#[cfg(test)]
pub(crate) mod testutil;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor5::<f64>::from_fn([2, 1, 1, 2, 2], |i| i as f64);
        let b = Tensor5::<f64>::from_fn([2, 2, 1, 2, 2], |i| 100.0 + i as f64);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), [2, 3, 1, 2, 2]);
        assert_eq!(c.at(1, 0, 0, 0, 0), 4.0);
        assert_eq!(c.at(1, 1, 0, 0, 0), 108.0);
        let (a2, b2) = split_channels(&c, 1).unwrap();
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn gemm_strided() {
        // [1 2; 3 4] * [5; 6]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0];
        let mut c = [0.0f64; 2];
        f64::gemm(2, 2, 1, 1.0, &a, 2, 1, &b, 1, 1, 0.0, &mut c, 1, 1);
        assert_eq!(c, [17.0, 39.0]);
    }
}
