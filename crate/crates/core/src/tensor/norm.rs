use super::{Buffer, Layer, Mode, Parameter, Scalar, Tensor5, TensorError};

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

/// Per-channel standardization over `(N, D, H, W)` with learnable gain and
/// shift. Training uses batch statistics and updates running averages;
/// evaluation uses the running averages.
#[derive(Debug, Clone)]
pub struct BatchNorm3d<T: Scalar = f32> {
    pub gain: Parameter<T>,
    pub shift: Parameter<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    cache: Option<NormCache>,
}

#[derive(Debug, Clone)]
struct NormCache {
    dims: [usize; 5],
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
}

impl<T: Scalar> BatchNorm3d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gain: Parameter::vector(format!("{name}.gain"), channels, T::one(), false),
            shift: Parameter::vector(format!("{name}.shift"), channels, T::zero(), false),
            running_mean: Buffer::vector(format!("{name}.running_mean"), channels, T::zero()),
            running_var: Buffer::vector(format!("{name}.running_var"), channels, T::one()),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.value.len()
    }

    fn check(&self, x: &Tensor5<T>) -> Result<(), TensorError> {
        if x.channels() != self.channels() {
            return Err(super::mismatch(format!(
                "norm over {} channels got {:?}",
                self.channels(),
                x.dims()
            )));
        }
        if x.batch() * x.volume() == 0 {
            return Err(TensorError::ZeroBatchVolume);
        }
        Ok(())
    }
}

/// Visits `(n, channel slice)` pairs for channel `c`.
fn channel_slices<T>(data: &[T], dims: [usize; 5], c: usize) -> impl Iterator<Item = &[T]> {
    let vol = dims[2] * dims[3] * dims[4];
    let per_sample = dims[1] * vol;
    (0..dims[0]).map(move |n| &data[n * per_sample + c * vol..n * per_sample + (c + 1) * vol])
}

impl<T: Scalar> Layer<T> for BatchNorm3d<T> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        self.check(x)?;
        let dims = x.dims();
        let channels = self.channels();
        let count = (x.batch() * x.volume()) as f64;
        let mut mean = vec![0.0; channels];
        let mut inv_std = vec![0.0; channels];
        match mode {
            Mode::Train => {
                for c in 0..channels {
                    let s: f64 = channel_slices(x.data(), dims, c).flatten().map(|v| v.as_f64()).sum();
                    let m = s / count;
                    let var = channel_slices(x.data(), dims, c)
                        .flatten()
                        .map(|v| (v.as_f64() - m).powi(2))
                        .sum::<f64>()
                        / count;
                    mean[c] = m;
                    inv_std[c] = 1.0 / (var + NORM_EPS).sqrt();
                    let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                    let rm = &mut self.running_mean.value.data_mut()[c];
                    *rm = T::from_f64_lossy((1.0 - NORM_MOMENTUM) * rm.as_f64() + NORM_MOMENTUM * m);
                    let rv = &mut self.running_var.value.data_mut()[c];
                    *rv = T::from_f64_lossy((1.0 - NORM_MOMENTUM) * rv.as_f64() + NORM_MOMENTUM * unbiased);
                }
            }
            Mode::Eval => {
                for c in 0..channels {
                    mean[c] = self.running_mean.value.data()[c].as_f64();
                    inv_std[c] = 1.0 / (self.running_var.value.data()[c].as_f64() + NORM_EPS).sqrt();
                }
            }
        }
        let vol = x.volume();
        let mut normalized = vec![0.0; x.len()];
        let mut y = Tensor5::zeros(dims);
        for (i, (&v, out)) in x.data().iter().zip(y.data_mut()).enumerate() {
            let c = (i / vol) % channels;
            let z = (v.as_f64() - mean[c]) * inv_std[c];
            normalized[i] = z;
            *out = T::from_f64_lossy(self.gain.value.data()[c].as_f64() * z + self.shift.value.data()[c].as_f64());
        }
        self.cache = (mode == Mode::Train).then_some(NormCache {
            dims,
            normalized,
            inv_std,
        });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let cache = self.cache.take().ok_or(TensorError::MissingCache("norm"))?;
        grad.expect_dims(cache.dims, "norm gradient")?;
        let dims = cache.dims;
        let channels = self.channels();
        let vol = dims[2] * dims[3] * dims[4];
        let count = (dims[0] * vol) as f64;
        let mut sum_g = vec![0.0; channels];
        let mut sum_gz = vec![0.0; channels];
        for (i, g) in grad.data().iter().enumerate() {
            let c = (i / vol) % channels;
            let g = g.as_f64();
            sum_g[c] += g;
            sum_gz[c] += g * cache.normalized[i];
        }
        let mut gx = Tensor5::zeros(dims);
        for (i, (g, out)) in grad.data().iter().zip(gx.data_mut()).enumerate() {
            let c = (i / vol) % channels;
            let gain = self.gain.value.data()[c].as_f64();
            let z = cache.normalized[i];
            let v = gain * cache.inv_std[c] / count * (count * g.as_f64() - sum_g[c] - z * sum_gz[c]);
            *out = T::from_f64_lossy(v);
        }
        for c in 0..channels {
            self.gain.grad.data_mut()[c] += T::from_f64_lossy(sum_gz[c]);
            self.shift.grad.data_mut()[c] += T::from_f64_lossy(sum_g[c]);
        }
        Ok(gx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.gain);
        f(&mut self.shift);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
