//! 3-D cross-correlation and its transpose, lowered to GEMM via im2col.
//!
//! Work is split per batch sample and, within a sample, into fixed depth
//! chunks sized only from the layer shape. Reductions across samples run in
//! index order, so results do not depend on the worker count.

use serde::{Deserialize, Serialize};

use super::{mismatch, InitRng, Layer, Mode, Parameter, Scalar, Tensor5, TensorError};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// Cubic kernel `k`, stride `s`, padding `p` on every axis.
    pub fn cubic(in_channels: usize, out_channels: usize, k: usize, s: usize, p: usize) -> Self {
        Self::new(in_channels, out_channels, [k; 3], [s; 3], [p; 3])
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the im2col matrix: `C_in * kd * kh * kw`.
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_volume()
    }

    /// `floor((in + 2p - k) / s) + 1` per axis.
    pub fn conv_output(&self, input: [usize; 3]) -> Result<[usize; 3], TensorError> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if self.stride[a] == 0 || self.kernel[a] == 0 || padded < self.kernel[a] {
                return Err(mismatch(format!(
                    "conv axis {a}: input {} padding {} kernel {} stride {}",
                    input[a], self.padding[a], self.kernel[a], self.stride[a]
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// `(in - 1) * s - 2p + k` per axis.
    pub fn deconv_output(&self, input: [usize; 3]) -> Result<[usize; 3], TensorError> {
        let mut out = [0; 3];
        for a in 0..3 {
            let full = input[a].saturating_sub(1) * self.stride[a] + self.kernel[a];
            if input[a] == 0 || full <= 2 * self.padding[a] {
                return Err(mismatch(format!("deconv axis {a}: non-positive output")));
            }
            out[a] = full - 2 * self.padding[a];
        }
        Ok(out)
    }

    fn conv_weight_dims(&self) -> [usize; 5] {
        [self.out_channels, self.in_channels, self.kernel[0], self.kernel[1], self.kernel[2]]
    }

    /// The convolution whose input gradient is this layer's transposed convolution.
    fn transposed(&self) -> Self {
        Self {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..*self
        }
    }

    /// Learnable element count of the layer, bias included.
    pub fn param_count(&self, bias: bool) -> usize {
        self.in_channels * self.out_channels * self.kernel_volume() + if bias { self.out_channels } else { 0 }
    }
}

const COL_BUDGET: usize = 1 << 22;

/// Output depth planes per im2col chunk.
fn depth_chunk(spec: &ConvSpec, out: [usize; 3]) -> usize {
    let per_plane = spec.patch_len() * out[1] * out[2];
    (COL_BUDGET / per_plane.max(1)).clamp(1, out[0].max(1))
}

/// Fills `col` (`patch_len x P`, row-major) for output depths `d0..d1` of one sample.
fn im2col<T: Scalar>(x: &[T], inp: [usize; 3], spec: &ConvSpec, out: [usize; 3], d0: usize, d1: usize, col: &mut [T]) {
    let p = (d1 - d0) * out[1] * out[2];
    let [kd, kh, kw] = spec.kernel;
    let in_vol = inp[0] * inp[1] * inp[2];
    par::for_each_chunk_mut(&mut col[..spec.patch_len() * p], p, |r, row| {
        let ci = r / (kd * kh * kw);
        let a = (r / (kh * kw)) % kd;
        let b = (r / kw) % kh;
        let c = r % kw;
        let xc = &x[ci * in_vol..(ci + 1) * in_vol];
        let mut q = 0;
        for od in d0..d1 {
            let id = (od * spec.stride[0] + a) as isize - spec.padding[0] as isize;
            for oh in 0..out[1] {
                let ih = (oh * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                let dst = &mut row[q..q + out[2]];
                q += out[2];
                if id < 0 || id >= inp[0] as isize || ih < 0 || ih >= inp[1] as isize {
                    dst.iter_mut().for_each(|v| *v = T::zero());
                    continue;
                }
                let base = (id as usize * inp[1] + ih as usize) * inp[2];
                for (ow, v) in dst.iter_mut().enumerate() {
                    let iw = (ow * spec.stride[2] + c) as isize - spec.padding[2] as isize;
                    *v = if iw < 0 || iw >= inp[2] as isize {
                        T::zero()
                    } else {
                        xc[base + iw as usize]
                    };
                }
            }
        }
    });
}

/// Scatter-adds `col` back onto the sample gradient `gx` (inverse of [`im2col`]).
fn col2im<T: Scalar>(col: &[T], inp: [usize; 3], spec: &ConvSpec, out: [usize; 3], d0: usize, d1: usize, gx: &mut [T]) {
    let p = (d1 - d0) * out[1] * out[2];
    let [kd, kh, kw] = spec.kernel;
    let kvol = kd * kh * kw;
    let in_vol = inp[0] * inp[1] * inp[2];
    par::for_each_chunk_mut(gx, in_vol, |ci, gc| {
        for k in 0..kvol {
            let (a, b, c) = (k / (kh * kw), (k / kw) % kh, k % kw);
            let row = &col[(ci * kvol + k) * p..(ci * kvol + k + 1) * p];
            let mut q = 0;
            for od in d0..d1 {
                let id = (od * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                for oh in 0..out[1] {
                    let ih = (oh * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                    let src = &row[q..q + out[2]];
                    q += out[2];
                    if id < 0 || id >= inp[0] as isize || ih < 0 || ih >= inp[1] as isize {
                        continue;
                    }
                    let base = (id as usize * inp[1] + ih as usize) * inp[2];
                    for (ow, &v) in src.iter().enumerate() {
                        let iw = (ow * spec.stride[2] + c) as isize - spec.padding[2] as isize;
                        if iw >= 0 && iw < inp[2] as isize {
                            gc[base + iw as usize] += v;
                        }
                    }
                }
            }
        }
    });
}

fn check_conv_operands<T: Scalar>(x: &Tensor5<T>, w: &Tensor5<T>, spec: &ConvSpec) -> Result<[usize; 3], TensorError> {
    if x.channels() != spec.in_channels {
        return Err(mismatch(format!(
            "input has {} channels, layer expects {}",
            x.channels(),
            spec.in_channels
        )));
    }
    w.expect_dims(spec.conv_weight_dims(), "conv weight")?;
    spec.conv_output(x.spatial())
}

fn conv_forward_raw<T: Scalar>(x: &Tensor5<T>, w: &Tensor5<T>, bias: Option<&[T]>, spec: &ConvSpec) -> Result<Tensor5<T>, TensorError> {
    let out = check_conv_operands(x, w, spec)?;
    let inp = x.spatial();
    let n = x.batch();
    let cout = spec.out_channels;
    let k = spec.patch_len();
    let plane = out[1] * out[2];
    let out_vol = out[0] * plane;
    let chunk = depth_chunk(spec, out);
    let mut y = Tensor5::zeros([n, cout, out[0], out[1], out[2]]);
    par::for_each_chunk_mut(y.data_mut(), cout * out_vol, |s, yn| {
        let xn = x.sample(s);
        let mut col = vec![T::zero(); k * chunk * plane];
        for d0 in (0..out[0]).step_by(chunk) {
            let d1 = (d0 + chunk).min(out[0]);
            let p = (d1 - d0) * plane;
            im2col(xn, inp, spec, out, d0, d1, &mut col);
            T::gemm(cout, k, p, T::one(), w.data(), k, 1, &col, p, 1, T::zero(), &mut yn[d0 * plane..], out_vol, 1);
        }
        if let Some(b) = bias {
            for (co, ych) in yn.chunks_exact_mut(out_vol).enumerate() {
                ych.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    });
    Ok(y)
}

/// Input gradient of a convolution, i.e. the transposed convolution of `gy`.
fn conv_backward_input_raw<T: Scalar>(gy: &Tensor5<T>, w: &Tensor5<T>, spec: &ConvSpec, input: [usize; 3]) -> Result<Tensor5<T>, TensorError> {
    w.expect_dims(spec.conv_weight_dims(), "conv weight")?;
    let out = spec.conv_output(input)?;
    if gy.channels() != spec.out_channels || gy.spatial() != out {
        return Err(mismatch(format!(
            "gradient {:?} does not match conv output {out:?} x {}",
            gy.dims(),
            spec.out_channels
        )));
    }
    let n = gy.batch();
    let cout = spec.out_channels;
    let k = spec.patch_len();
    let plane = out[1] * out[2];
    let out_vol = out[0] * plane;
    let in_vol = input[0] * input[1] * input[2];
    let chunk = depth_chunk(spec, out);
    let mut gx = Tensor5::zeros([n, spec.in_channels, input[0], input[1], input[2]]);
    par::for_each_chunk_mut(gx.data_mut(), spec.in_channels * in_vol, |s, gxn| {
        let gyn = gy.sample(s);
        let mut gcol = vec![T::zero(); k * chunk * plane];
        for d0 in (0..out[0]).step_by(chunk) {
            let d1 = (d0 + chunk).min(out[0]);
            let p = (d1 - d0) * plane;
            T::gemm(k, cout, p, T::one(), w.data(), 1, k, &gyn[d0 * plane..], out_vol, 1, T::zero(), &mut gcol, p, 1);
            col2im(&gcol, input, spec, out, d0, d1, gxn);
        }
    });
    Ok(gx)
}

/// Weight gradient `sum_n gy_n * im2col(x_n)^T`, summed over samples in order.
fn conv_backward_weight_raw<T: Scalar>(gy: &Tensor5<T>, x: &Tensor5<T>, spec: &ConvSpec) -> Result<Vec<T>, TensorError> {
    let inp = x.spatial();
    let out = spec.conv_output(inp)?;
    if x.channels() != spec.in_channels || gy.channels() != spec.out_channels || gy.spatial() != out || gy.batch() != x.batch() {
        return Err(mismatch(format!("weight gradient operands {:?} / {:?}", gy.dims(), x.dims())));
    }
    let cout = spec.out_channels;
    let k = spec.patch_len();
    let plane = out[1] * out[2];
    let out_vol = out[0] * plane;
    let chunk = depth_chunk(spec, out);
    let partials = par::map_range(x.batch(), |s| {
        let (xn, gyn) = (x.sample(s), gy.sample(s));
        let mut acc = vec![T::zero(); cout * k];
        let mut col = vec![T::zero(); k * chunk * plane];
        for d0 in (0..out[0]).step_by(chunk) {
            let d1 = (d0 + chunk).min(out[0]);
            let p = (d1 - d0) * plane;
            im2col(xn, inp, spec, out, d0, d1, &mut col);
            T::gemm(cout, p, k, T::one(), &gyn[d0 * plane..], out_vol, 1, &col, 1, p, T::one(), &mut acc, k, 1);
        }
        acc
    });
    let mut total = vec![T::zero(); cout * k];
    for part in partials {
        total.iter_mut().zip(part).for_each(|(t, v)| *t += v);
    }
    Ok(total)
}

/// Per-channel sum of `gy` over batch and space.
fn channel_sums<T: Scalar>(gy: &Tensor5<T>) -> Vec<T> {
    let vol = gy.volume();
    let mut sums = vec![T::zero(); gy.channels()];
    for s in 0..gy.batch() {
        for (c, ch) in gy.sample(s).chunks_exact(vol.max(1)).enumerate() {
            let mut acc = T::zero();
            for &v in ch {
                acc += v;
            }
            sums[c] += acc;
        }
    }
    sums
}

fn check_bias<T: Scalar>(bias: Option<&Parameter<T>>, channels: usize) -> Result<(), TensorError> {
    match bias {
        Some(b) if b.value.len() != channels => Err(mismatch(format!("bias has {} entries, expected {channels}", b.value.len()))),
        _ => Ok(()),
    }
}

/// Cross-correlation with zero padding: `y = W * x + b`.
pub fn conv3d_forward<T: Scalar>(x: &Tensor5<T>, weight: &Parameter<T>, bias: Option<&Parameter<T>>, spec: &ConvSpec) -> Result<Tensor5<T>, TensorError> {
    check_bias(bias, spec.out_channels)?;
    conv_forward_raw(x, &weight.value, bias.map(|b| b.value.data()), spec)
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn conv3d_backward<T: Scalar>(
    grad_out: &Tensor5<T>,
    cached_input: &Tensor5<T>,
    weight: &mut Parameter<T>,
    bias: Option<&mut Parameter<T>>,
    spec: &ConvSpec,
) -> Result<Tensor5<T>, TensorError> {
    check_bias(bias.as_deref(), spec.out_channels)?;
    let gx = conv_backward_input_raw(grad_out, &weight.value, spec, cached_input.spatial())?;
    let gw = conv_backward_weight_raw(grad_out, cached_input, spec)?;
    weight.grad.data_mut().iter_mut().zip(gw).for_each(|(g, v)| *g += v);
    if let Some(b) = bias {
        b.grad.data_mut().iter_mut().zip(channel_sums(grad_out)).for_each(|(g, v)| *g += v);
    }
    Ok(gx)
}

/// Transposed convolution. `weight` has dims `(C_in, C_out, kd, kh, kw)`.
pub fn deconv3d_forward<T: Scalar>(x: &Tensor5<T>, weight: &Parameter<T>, bias: Option<&Parameter<T>>, spec: &ConvSpec) -> Result<Tensor5<T>, TensorError> {
    check_bias(bias, spec.out_channels)?;
    if x.channels() != spec.in_channels {
        return Err(mismatch(format!("deconv input has {} channels, expected {}", x.channels(), spec.in_channels)));
    }
    let out = spec.deconv_output(x.spatial())?;
    let mut y = conv_backward_input_raw(x, &weight.value, &spec.transposed(), out)?;
    if let Some(b) = bias {
        let vol = y.volume();
        let c = y.channels();
        for (i, ych) in y.data_mut().chunks_exact_mut(vol).enumerate() {
            let bv = b.value.data()[i % c];
            ych.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(y)
}

pub fn deconv3d_backward<T: Scalar>(
    grad_out: &Tensor5<T>,
    cached_input: &Tensor5<T>,
    weight: &mut Parameter<T>,
    bias: Option<&mut Parameter<T>>,
    spec: &ConvSpec,
) -> Result<Tensor5<T>, TensorError> {
    check_bias(bias.as_deref(), spec.out_channels)?;
    let t = spec.transposed();
    let gx = conv_forward_raw(grad_out, &weight.value, None, &t)?;
    let gw = conv_backward_weight_raw(cached_input, grad_out, &t)?;
    weight.grad.data_mut().iter_mut().zip(gw).for_each(|(g, v)| *g += v);
    if let Some(b) = bias {
        b.grad.data_mut().iter_mut().zip(channel_sums(grad_out)).for_each(|(g, v)| *g += v);
    }
    Ok(gx)
}

/// Convolution layer owning its parameters and the cached training input.
#[derive(Debug, Clone)]
pub struct Conv3d<T: Scalar = f32> {
    pub spec: ConvSpec,
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    cache: Option<Tensor5<T>>,
}

impl<T: Scalar> Conv3d<T> {
    pub fn new(name: &str, spec: ConvSpec, bias: bool, rng: &mut InitRng) -> Self {
        let dims = spec.conv_weight_dims();
        let weight = Parameter::new(format!("{name}.weight"), super::kaiming_uniform(rng, dims, spec.patch_len()), true, 5);
        let bias = bias.then(|| Parameter::vector(format!("{name}.bias"), spec.out_channels, T::zero(), false));
        Self {
            spec,
            weight,
            bias,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Conv3d<T> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        let y = conv3d_forward(x, &self.weight, self.bias.as_ref(), &self.spec)?;
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let x = self.cache.take().ok_or(TensorError::MissingCache("conv3d"))?;
        conv3d_backward(grad, &x, &mut self.weight, self.bias.as_mut(), &self.spec)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Deconv3d<T: Scalar = f32> {
    pub spec: ConvSpec,
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    cache: Option<Tensor5<T>>,
}

impl<T: Scalar> Deconv3d<T> {
    pub fn new(name: &str, spec: ConvSpec, bias: bool, rng: &mut InitRng) -> Self {
        let dims = [spec.in_channels, spec.out_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2]];
        let fan_in = spec.in_channels * spec.kernel_volume();
        let weight = Parameter::new(format!("{name}.weight"), super::kaiming_uniform(rng, dims, fan_in), true, 5);
        let bias = bias.then(|| Parameter::vector(format!("{name}.bias"), spec.out_channels, T::zero(), false));
        Self {
            spec,
            weight,
            bias,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Deconv3d<T> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        let y = deconv3d_forward(x, &self.weight, self.bias.as_ref(), &self.spec)?;
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let x = self.cache.take().ok_or(TensorError::MissingCache("deconv3d"))?;
        deconv3d_backward(grad, &x, &mut self.weight, self.bias.as_mut(), &self.spec)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}
