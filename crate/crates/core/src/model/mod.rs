//! The event-frame-to-voxel network: a residual 3-D encoder feeding a
//! UNet-style decoder, plus the binary cross-entropy objective.

mod blocks;
mod config;
mod loss;

pub use config::{DecoderConfig, EncoderConfig, ModelConfig, NormKind, StageConfig, StemConfig};
pub use loss::{bce_loss, BCE_CLAMP};

use std::collections::HashSet;

use thiserror::Error;

use crate::events::FrameStack;
use crate::tensor::{
    concat_channels, split_channels, AdaptiveResize, Buffer, CheckpointEntry, ConvSpec, InitRng, Layer, MaxPool3d,
    Mode, Parameter, Scalar, Sigmoid, Tensor5, TensorError,
};
use crate::voxel::{ProbGrid, VoxelGrid};
use blocks::{Bottleneck, Unit};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder<T: Scalar> {
    stem: Unit<T>,
    pool: Option<MaxPool3d>,
    blocks: Vec<Bottleneck<T>>,
    resize: AdaptiveResize,
}

impl<T: Scalar> Encoder<T> {
    fn new(cfg: &EncoderConfig, norm: NormKind, rng: &mut InitRng) -> Self {
        let s = &cfg.stem;
        let padding = s.kernel.map(|k| k / 2);
        let stem = Unit::conv(
            "encoder.stem",
            ConvSpec::new(cfg.in_channels, s.channels, s.kernel, s.stride, padding),
            norm,
            true,
            rng,
        );
        let mut blocks = Vec::new();
        let mut channels = s.channels;
        for (si, stage) in cfg.stages.iter().enumerate() {
            let out = stage.channels * cfg.expansion;
            for bi in 0..stage.blocks {
                let stride = if bi == 0 { stage.stride } else { [1; 3] };
                let name = format!("encoder.stage{}.block{bi}", si + 1);
                blocks.push(Bottleneck::new(&name, channels, stage.channels, out, stride, norm, rng));
                channels = out;
            }
        }
        Self {
            stem,
            pool: s.pool.map(MaxPool3d::new),
            blocks,
            resize: AdaptiveResize::new(cfg.hidden_spatial),
        }
    }
}

impl<T: Scalar> Layer<T> for Encoder<T> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        let mut y = self.stem.forward(x, mode)?;
        if let Some(p) = &mut self.pool {
            y = p.forward(&y, mode)?;
        }
        for b in &mut self.blocks {
            y = b.forward(&y, mode)?;
        }
        Layer::<T>::forward(&mut self.resize, &y, mode)
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let mut g = Layer::<T>::backward(&mut self.resize, grad)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        if let Some(p) = &mut self.pool {
            g = p.backward(&g)?;
        }
        self.stem.backward(&g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.stem.visit_params(f);
        for b in &mut self.blocks {
            b.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.stem.visit_buffers(f);
        for b in &mut self.blocks {
            b.visit_buffers(f);
        }
    }
}

#[derive(Debug, Clone)]
struct UpLevel<T: Scalar> {
    up: Unit<T>,
    fuse: Unit<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct Decoder<T: Scalar> {
    entry: Unit<T>,
    downs: Vec<Unit<T>>,
    /// Coarsest first.
    ups: Vec<UpLevel<T>>,
    pub(crate) head: Unit<T>,
    sigmoid: Sigmoid<T>,
}

impl<T: Scalar> Decoder<T> {
    fn new(cfg: &DecoderConfig, in_channels: usize, norm: NormKind, rng: &mut InitRng) -> Self {
        let ch = &cfg.channels;
        let entry = Unit::conv("decoder.entry", ConvSpec::cubic(in_channels, ch[0], 1, 1, 0), norm, true, rng);
        let downs = (1..ch.len())
            .map(|l| Unit::conv(&format!("decoder.down{l}"), ConvSpec::cubic(ch[l - 1], ch[l], 3, 2, 1), norm, true, rng))
            .collect();
        let ups = (1..ch.len())
            .rev()
            .map(|l| UpLevel {
                up: Unit::deconv(&format!("decoder.up{l}"), ConvSpec::cubic(ch[l], ch[l - 1], 2, 2, 0), norm, true, rng),
                fuse: Unit::conv(
                    &format!("decoder.fuse{l}"),
                    ConvSpec::cubic(2 * ch[l - 1], ch[l - 1], 3, 1, 1),
                    norm,
                    true,
                    rng,
                ),
            })
            .collect();
        let head = Unit::conv("decoder.head", ConvSpec::cubic(ch[0], 1, cfg.head_kernel, 1, cfg.head_kernel / 2), NormKind::None, false, rng);
        Self {
            entry,
            downs,
            ups,
            head,
            sigmoid: Sigmoid::new(),
        }
    }
}

impl<T: Scalar> Layer<T> for Decoder<T> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        let mut y = self.entry.forward(x, mode)?;
        let mut skips = Vec::with_capacity(self.downs.len());
        for d in &mut self.downs {
            let next = d.forward(&y, mode)?;
            skips.push(y);
            y = next;
        }
        for level in &mut self.ups {
            let skip = skips.pop().expect("one skip per level");
            let u = level.up.forward(&y, mode)?;
            y = level.fuse.forward(&concat_channels(&u, &skip)?, mode)?;
        }
        let logits = self.head.forward(&y, mode)?;
        self.sigmoid.forward(&logits, mode)
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let g = self.sigmoid.backward(grad)?;
        let mut g = self.head.backward(&g)?;
        let mut skip_grads = Vec::with_capacity(self.ups.len());
        for level in self.ups.iter_mut().rev() {
            let gc = level.fuse.backward(&g)?;
            let up_channels = level.up.op.spec().out_channels;
            let (gu, gs) = split_channels(&gc, up_channels)?;
            g = level.up.backward(&gu)?;
            skip_grads.push(gs);
        }
        // skip_grads now runs finest-last; downs are visited coarsest first
        for (d, gs) in self.downs.iter_mut().rev().zip(skip_grads.into_iter().rev()) {
            g = d.backward(&g)?;
            g.add_assign(&gs)?;
        }
        self.entry.backward(&g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.entry.visit_params(f);
        for d in &mut self.downs {
            d.visit_params(f);
        }
        for u in &mut self.ups {
            u.up.visit_params(f);
            u.fuse.visit_params(f);
        }
        self.head.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.entry.visit_buffers(f);
        for d in &mut self.downs {
            d.visit_buffers(f);
        }
        for u in &mut self.ups {
            u.up.visit_buffers(f);
            u.fuse.visit_buffers(f);
        }
    }
}

/// Encoder and decoder with a shared parameter registry. Outputs are
/// occupancy probabilities clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
#[derive(Debug, Clone)]
pub struct E2VModel<T: Scalar = f32> {
    config: ModelConfig,
    pub(crate) encoder: Encoder<T>,
    pub(crate) decoder: Decoder<T>,
    clamp_mask: Option<Vec<bool>>,
}

impl<T: Scalar> E2VModel<T> {
    pub fn build(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = InitRng::new(config.seed);
        let encoder = Encoder::new(&config.encoder, config.norm, &mut rng);
        let decoder = Decoder::new(&config.decoder, config.encoder.hidden_channels(), config.norm, &mut rng);
        let mut model = Self {
            config: config.clone(),
            encoder,
            decoder,
            clamp_mask: None,
        };
        let mut seen = HashSet::new();
        let mut dup = None;
        model.visit_state(&mut |name, _| {
            if !seen.insert(name.to_string()) {
                dup = Some(name.to_string());
            }
        });
        if let Some(name) = dup {
            return Err(ModelError::Config(format!("duplicate parameter name {name}")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor5<T>) -> Result<(), ModelError> {
        if x.channels() != self.config.encoder.in_channels {
            return Err(TensorError::ShapeMismatch(format!(
                "model expects {} input channels, got {:?}",
                self.config.encoder.in_channels,
                x.dims()
            ))
            .into());
        }
        Ok(())
    }

    pub fn encode(&mut self, frames: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, ModelError> {
        self.check_input(frames)?;
        Ok(self.encoder.forward(frames, mode)?)
    }

    pub fn decode(&mut self, hidden: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, ModelError> {
        let c = self.config.encoder.hidden_channels();
        if hidden.channels() != c {
            return Err(ModelError::ChannelMismatch(format!("decoder expects {c} channels, got {:?}", hidden.dims())));
        }
        let p = self.decoder.forward(hidden, mode)?;
        let lo = T::from_f64_lossy(BCE_CLAMP);
        let hi = T::from_f64_lossy(1.0 - BCE_CLAMP);
        let mut mask = Vec::with_capacity(if mode == Mode::Train { p.len() } else { 0 });
        let clamped = p.map(|v| v.max(lo).min(hi));
        if mode == Mode::Train {
            mask.extend(p.data().iter().zip(clamped.data()).map(|(a, b)| a != b));
            self.clamp_mask = Some(mask);
        }
        Ok(clamped)
    }

    /// Probabilities shaped `N x 1 x R x R x R`.
    pub fn predict(&mut self, frames: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, ModelError> {
        let h = self.encode(frames, mode)?;
        self.decode(&h, mode)
    }

    /// Back-propagates a gradient w.r.t. the last training `predict` output.
    pub fn backward_from_output(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, ModelError> {
        let mask = self.clamp_mask.take().ok_or(TensorError::MissingCache("model"))?;
        if mask.len() != grad.len() {
            return Err(TensorError::ShapeMismatch("model output gradient".into()).into());
        }
        let g = Tensor5::from_vec(
            grad.dims(),
            grad.data().iter().zip(&mask).map(|(&g, &m)| if m { T::zero() } else { g }).collect(),
        )?;
        let g = self.decoder.backward(&g)?;
        Ok(self.encoder.backward(&g)?)
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn count_parameters(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.numel());
        n
    }

    pub fn parameter_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |p| names.push(p.name.clone()));
        names
    }

    /// Every parameter then every buffer, with its logical dims.
    fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut Tensor5<T>)) {
        self.visit_params(&mut |p| f(&p.name, &mut p.value));
        self.visit_buffers(&mut |b| f(&b.name, &mut b.value));
    }

    pub fn to_checkpoint(&mut self) -> Vec<CheckpointEntry> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| {
            out.push(CheckpointEntry::new(
                p.name.clone(),
                p.logical_dims(),
                p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
            ))
        });
        self.visit_buffers(&mut |b| {
            out.push(CheckpointEntry::new(
                b.name.clone(),
                b.logical_dims(),
                b.value.data().iter().map(|v| v.as_f64() as f32).collect(),
            ))
        });
        out
    }

    /// Loads values by name; the entry set must match the model exactly.
    pub fn load_checkpoint(&mut self, entries: &[CheckpointEntry]) -> Result<(), ModelError> {
        let mut expected = Vec::new();
        self.visit_params(&mut |p| expected.push((p.name.clone(), p.logical_dims())));
        self.visit_buffers(&mut |b| expected.push((b.name.clone(), b.logical_dims())));
        if expected.len() != entries.len() {
            return Err(ModelError::CheckpointMismatch(format!(
                "model has {} tensors, checkpoint has {}",
                expected.len(),
                entries.len()
            )));
        }
        for ((name, dims), e) in expected.iter().zip(entries) {
            if *name != e.name || *dims != e.shape {
                return Err(ModelError::CheckpointMismatch(format!(
                    "expected {name} {dims:?}, found {} {:?}",
                    e.name, e.shape
                )));
            }
        }
        let mut it = entries.iter();
        self.visit_state(&mut |_, t| {
            let e = it.next().expect("counts checked");
            for (dst, &src) in t.data_mut().iter_mut().zip(&e.data) {
                *dst = T::from_f64_lossy(src as f64);
            }
        });
        Ok(())
    }
}

impl<T: Scalar> Layer<T> for E2VModel<T> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        self.predict(x, mode).map_err(|e| match e {
            ModelError::Tensor(t) => t,
            other => TensorError::ShapeMismatch(other.to_string()),
        })
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        self.backward_from_output(grad).map_err(|e| match e {
            ModelError::Tensor(t) => t,
            other => TensorError::ShapeMismatch(other.to_string()),
        })
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.encoder.visit_params(f);
        self.decoder.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.encoder.visit_buffers(f);
        self.decoder.visit_buffers(f);
    }
}

/// Lifts frame stacks to an `N x 1 x D x H x W` tensor of zeros and ones.
pub fn frames_to_tensor<T: Scalar>(stacks: &[&FrameStack]) -> Result<Tensor5<T>, ModelError> {
    let first = stacks
        .first()
        .ok_or_else(|| ModelError::Tensor(TensorError::ShapeMismatch("no frame stacks".into())))?;
    let dims = [stacks.len(), 1, first.depth(), first.height(), first.width()];
    let mut data = Vec::with_capacity(dims.iter().product());
    for s in stacks {
        if [s.depth(), s.height(), s.width()] != [first.depth(), first.height(), first.width()] {
            return Err(TensorError::ShapeMismatch("frame stacks differ in shape".into()).into());
        }
        data.extend(s.cells().iter().map(|&c| if c != 0 { T::one() } else { T::zero() }));
    }
    Ok(Tensor5::from_vec(dims, data)?)
}

/// Voxel labels as an `N x 1 x R x R x R` tensor; grid `(i, j, k)` maps to `(w, h, d)`.
pub fn voxels_to_tensor<T: Scalar>(grids: &[&VoxelGrid]) -> Result<Tensor5<T>, ModelError> {
    let r = grids
        .first()
        .ok_or_else(|| ModelError::ResolutionMismatch("no voxel grids".into()))?
        .resolution();
    let mut data = Vec::with_capacity(grids.len() * r * r * r);
    for g in grids {
        if g.resolution() != r {
            return Err(ModelError::ResolutionMismatch(format!("{} vs {r}", g.resolution())));
        }
        data.extend(g.cells().iter().map(|&c| if c { T::one() } else { T::zero() }));
    }
    Ok(Tensor5::from_vec([grids.len(), 1, r, r, r], data)?)
}

pub fn tensor_to_probs<T: Scalar>(p: &Tensor5<T>) -> Result<Vec<ProbGrid>, ModelError> {
    let [_, c, d, h, w] = p.dims();
    if c != 1 || d != h || d != w {
        return Err(ModelError::ResolutionMismatch(format!("{:?} is not N x 1 x R^3", p.dims())));
    }
    (0..p.batch())
        .map(|n| {
            ProbGrid::new(d, p.sample(n).iter().map(|v| v.as_f64()).collect())
                .map_err(|e| ModelError::ResolutionMismatch(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests;
