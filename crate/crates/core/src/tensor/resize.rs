use super::{Layer, Mode, Scalar, Tensor5, TensorError};

/// Source index for output position `i` when mapping `from` cells onto `to`.
fn source_index(i: usize, from: usize, to: usize) -> usize {
    i * from / to
}

fn source_offsets(src: [usize; 3], target: [usize; 3]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(target.iter().product());
    for d in 0..target[0] {
        let sd = source_index(d, src[0], target[0]);
        for h in 0..target[1] {
            let sh = source_index(h, src[1], target[1]);
            for w in 0..target[2] {
                let sw = source_index(w, src[2], target[2]);
                offsets.push((sd * src[1] + sh) * src[2] + sw);
            }
        }
    }
    offsets
}

fn check_target(x_spatial: [usize; 3], target: [usize; 3]) -> Result<(), TensorError> {
    if target.contains(&0) || x_spatial.contains(&0) {
        return Err(super::mismatch(format!("resize {x_spatial:?} -> {target:?}")));
    }
    Ok(())
}

/// Nearest-neighbour resampling: output cell `i` along an axis reads source
/// cell `floor(i * D / D')`.
pub fn adaptive_resize<T: Scalar>(x: &Tensor5<T>, target: [usize; 3]) -> Result<Tensor5<T>, TensorError> {
    check_target(x.spatial(), target)?;
    let offsets = source_offsets(x.spatial(), target);
    let mut dims = x.dims();
    dims[2..].copy_from_slice(&target);
    let vol = x.volume();
    let mut data = Vec::with_capacity(dims.iter().product());
    for plane in x.data().chunks(vol.max(1)).take(x.batch() * x.channels()) {
        data.extend(offsets.iter().map(|&o| plane[o]));
    }
    Tensor5::from_vec(dims, data)
}

/// Adds each output gradient into the source cell it was read from.
pub fn adaptive_resize_backward<T: Scalar>(
    grad: &Tensor5<T>,
    input_dims: [usize; 5],
) -> Result<Tensor5<T>, TensorError> {
    let src = [input_dims[2], input_dims[3], input_dims[4]];
    check_target(src, grad.spatial())?;
    if grad.batch() != input_dims[0] || grad.channels() != input_dims[1] {
        return Err(super::mismatch(format!("resize gradient {:?} for {input_dims:?}", grad.dims())));
    }
    let offsets = source_offsets(src, grad.spatial());
    let mut gx = Tensor5::zeros(input_dims);
    let vol: usize = src.iter().product();
    for (plane_out, plane_in) in gx.data_mut().chunks_mut(vol).zip(grad.data().chunks(offsets.len())) {
        for (&o, &g) in offsets.iter().zip(plane_in) {
            plane_out[o] += g;
        }
    }
    Ok(gx)
}

#[derive(Debug, Clone)]
pub struct AdaptiveResize {
    pub target: [usize; 3],
    cache: Option<[usize; 5]>,
}

impl AdaptiveResize {
    pub fn new(target: [usize; 3]) -> Self {
        Self { target, cache: None }
    }
}

impl<T: Scalar> Layer<T> for AdaptiveResize {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        self.cache = (mode == Mode::Train).then_some(x.dims());
        adaptive_resize(x, self.target)
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let dims = self.cache.take().ok_or(TensorError::MissingCache("resize"))?;
        adaptive_resize_backward(grad, dims)
    }
}
