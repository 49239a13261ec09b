use serde::{Deserialize, Serialize};

use super::{Layer, Mode, Scalar, Tensor5, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl PoolSpec {
    pub fn cubic(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: [kernel; 3],
            stride: [stride; 3],
            padding: [padding; 3],
        }
    }

    pub fn output(&self, spatial: [usize; 3]) -> Result<[usize; 3], TensorError> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = spatial[a] + 2 * self.padding[a];
            if self.stride[a] == 0 || self.kernel[a] == 0 || padded < self.kernel[a] || self.padding[a] >= self.kernel[a] {
                return Err(super::mismatch(format!("pool {self:?} on {spatial:?}")));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

/// Max pooling; padded cells never win. Ties go to the first cell in scan
/// order, which is also where the gradient is routed.
#[derive(Debug, Clone)]
pub struct MaxPool3d {
    pub spec: PoolSpec,
    cache: Option<([usize; 5], Vec<usize>)>,
}

impl MaxPool3d {
    pub fn new(spec: PoolSpec) -> Self {
        Self { spec, cache: None }
    }

    fn pool<T: Scalar>(&self, x: &Tensor5<T>) -> Result<(Tensor5<T>, Vec<usize>), TensorError> {
        let [d, h, w] = x.spatial();
        let o = self.spec.output([d, h, w])?;
        let (k, s, p) = (self.spec.kernel, self.spec.stride, self.spec.padding);
        let mut dims = x.dims();
        dims[2..].copy_from_slice(&o);
        let mut y = Tensor5::zeros(dims);
        let mut argmax = vec![0usize; y.len()];
        let planes = x.batch() * x.channels();
        let mut out_idx = 0;
        for plane in 0..planes {
            let base = plane * d * h * w;
            for od in 0..o[0] {
                for oh in 0..o[1] {
                    for ow in 0..o[2] {
                        let mut best: Option<(T, usize)> = None;
                        for kd in 0..k[0] {
                            let Some(id) = (od * s[0] + kd).checked_sub(p[0]).filter(|&v| v < d) else { continue };
                            for kh in 0..k[1] {
                                let Some(ih) = (oh * s[1] + kh).checked_sub(p[1]).filter(|&v| v < h) else { continue };
                                for kw in 0..k[2] {
                                    let Some(iw) = (ow * s[2] + kw).checked_sub(p[2]).filter(|&v| v < w) else { continue };
                                    let idx = base + (id * h + ih) * w + iw;
                                    let v = x.data()[idx];
                                    if best.map_or(true, |(b, _)| v > b) {
                                        best = Some((v, idx));
                                    }
                                }
                            }
                        }
                        let (v, idx) = best.expect("padding < kernel keeps every window non-empty");
                        y.data_mut()[out_idx] = v;
                        argmax[out_idx] = idx;
                        out_idx += 1;
                    }
                }
            }
        }
        Ok((y, argmax))
    }
}

impl<T: Scalar> Layer<T> for MaxPool3d {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        let (y, argmax) = self.pool(x)?;
        self.cache = (mode == Mode::Train).then_some((x.dims(), argmax));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let (dims, argmax) = self.cache.take().ok_or(TensorError::MissingCache("maxpool"))?;
        if grad.len() != argmax.len() {
            return Err(super::mismatch("maxpool gradient"));
        }
        let mut gx = Tensor5::zeros(dims);
        for (&g, &i) in grad.data().iter().zip(&argmax) {
            gx.data_mut()[i] += g;
        }
        Ok(gx)
    }
}
