use crate::tensor::{
    BatchNorm3d, Buffer, Conv3d, ConvSpec, Deconv3d, InitRng, Layer, Mode, Parameter, Relu, Scalar, Tensor5,
    TensorError,
};

use super::NormKind;

#[derive(Debug, Clone)]
pub(crate) enum Op<T: Scalar> {
    Conv(Conv3d<T>),
    Deconv(Deconv3d<T>),
}

impl<T: Scalar> Op<T> {
    pub(crate) fn spec(&self) -> &ConvSpec {
        match self {
            Op::Conv(c) => &c.spec,
            Op::Deconv(c) => &c.spec,
        }
    }

    fn layer(&mut self) -> &mut dyn Layer<T> {
        match self {
            Op::Conv(c) => c,
            Op::Deconv(c) => c,
        }
    }
}

/// Convolution (or transposed convolution), then optional norm and ReLU.
/// The convolution carries a bias only when no norm follows it.
#[derive(Debug, Clone)]
pub(crate) struct Unit<T: Scalar> {
    pub(crate) op: Op<T>,
    norm: Option<BatchNorm3d<T>>,
    relu: Option<Relu<T>>,
}

impl<T: Scalar> Unit<T> {
    pub(crate) fn conv(name: &str, spec: ConvSpec, norm: NormKind, relu: bool, rng: &mut InitRng) -> Self {
        let op = Op::Conv(Conv3d::new(&format!("{name}.conv"), spec, norm == NormKind::None, rng));
        Self::wrap(name, op, norm, relu)
    }

    pub(crate) fn deconv(name: &str, spec: ConvSpec, norm: NormKind, relu: bool, rng: &mut InitRng) -> Self {
        let op = Op::Deconv(Deconv3d::new(&format!("{name}.deconv"), spec, norm == NormKind::None, rng));
        Self::wrap(name, op, norm, relu)
    }

    fn wrap(name: &str, op: Op<T>, norm: NormKind, relu: bool) -> Self {
        let channels = op.spec().out_channels;
        Self {
            op,
            norm: (norm == NormKind::Batch).then(|| BatchNorm3d::new(&format!("{name}.norm"), channels)),
            relu: relu.then(Relu::new),
        }
    }
}

impl<T: Scalar> Layer<T> for Unit<T> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        let mut y = self.op.layer().forward(x, mode)?;
        if let Some(n) = &mut self.norm {
            y = n.forward(&y, mode)?;
        }
        if let Some(r) = &mut self.relu {
            y = r.forward(&y, mode)?;
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let mut g = match &mut self.relu {
            Some(r) => r.backward(grad)?,
            None => grad.clone(),
        };
        if let Some(n) = &mut self.norm {
            g = n.backward(&g)?;
        }
        self.op.layer().backward(&g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.op.layer().visit_params(f);
        if let Some(n) = &mut self.norm {
            n.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        if let Some(n) = &mut self.norm {
            n.visit_buffers(f);
        }
    }
}

/// Residual bottleneck: 1x1 reduce, 3x3x3 strided, 1x1 expand, added to an
/// identity or projected shortcut, then ReLU.
#[derive(Debug, Clone)]
pub(crate) struct Bottleneck<T: Scalar> {
    reduce: Unit<T>,
    spatial: Unit<T>,
    expand: Unit<T>,
    shortcut: Option<Unit<T>>,
    out_relu: Relu<T>,
}

impl<T: Scalar> Bottleneck<T> {
    pub(crate) fn new(
        name: &str,
        in_channels: usize,
        width: usize,
        out_channels: usize,
        stride: [usize; 3],
        norm: NormKind,
        rng: &mut InitRng,
    ) -> Self {
        let reduce = Unit::conv(&format!("{name}.reduce"), ConvSpec::cubic(in_channels, width, 1, 1, 0), norm, true, rng);
        let spatial = Unit::conv(
            &format!("{name}.spatial"),
            ConvSpec::new(width, width, [3; 3], stride, [1; 3]),
            norm,
            true,
            rng,
        );
        let expand = Unit::conv(&format!("{name}.expand"), ConvSpec::cubic(width, out_channels, 1, 1, 0), norm, false, rng);
        let shortcut = (in_channels != out_channels || stride != [1; 3]).then(|| {
            Unit::conv(
                &format!("{name}.shortcut"),
                ConvSpec::new(in_channels, out_channels, [1; 3], stride, [0; 3]),
                norm,
                false,
                rng,
            )
        });
        Self {
            reduce,
            spatial,
            expand,
            shortcut,
            out_relu: Relu::new(),
        }
    }
}

impl<T: Scalar> Layer<T> for Bottleneck<T> {
    fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, TensorError> {
        let a = self.reduce.forward(x, mode)?;
        let b = self.spatial.forward(&a, mode)?;
        let mut y = self.expand.forward(&b, mode)?;
        match &mut self.shortcut {
            Some(s) => y.add_assign(&s.forward(x, mode)?)?,
            None => y.add_assign(x)?,
        }
        self.out_relu.forward(&y, mode)
    }

    fn backward(&mut self, grad: &Tensor5<T>) -> Result<Tensor5<T>, TensorError> {
        let g = self.out_relu.backward(grad)?;
        let gb = self.expand.backward(&g)?;
        let ga = self.spatial.backward(&gb)?;
        let mut gx = self.reduce.backward(&ga)?;
        match &mut self.shortcut {
            Some(s) => gx.add_assign(&s.backward(&g)?)?,
            None => gx.add_assign(&g)?,
        }
        Ok(gx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.reduce.visit_params(f);
        self.spatial.visit_params(f);
        self.expand.visit_params(f);
        if let Some(s) = &mut self.shortcut {
            s.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.reduce.visit_buffers(f);
        self.spatial.visit_buffers(f);
        self.expand.visit_buffers(f);
        if let Some(s) = &mut self.shortcut {
            s.visit_buffers(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_layer_gradients, random_tensor};

    #[test]
    fn bottleneck_gradients_both_shortcuts() {
        for (seed, (cin, stride)) in [(4, [1, 1, 1]), (3, [1, 2, 2])].into_iter().enumerate() {
            let seed = seed as u64;
            let mut rng = InitRng::new(seed);
            let mut block = Bottleneck::<f64>::new("b", cin, 2, 4, stride, NormKind::Batch, &mut rng);
            let x = random_tensor([2, cin, 3, 4, 4], seed + 10);
            let err = check_layer_gradients(&mut block, &x, seed, 1e-6);
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn identity_shortcut_only_when_shapes_allow() {
        let mut rng = InitRng::new(0);
        assert!(Bottleneck::<f32>::new("b", 8, 2, 8, [1; 3], NormKind::None, &mut rng).shortcut.is_none());
        assert!(Bottleneck::<f32>::new("b", 8, 2, 8, [1, 2, 2], NormKind::None, &mut rng).shortcut.is_some());
        assert!(Bottleneck::<f32>::new("b", 4, 2, 8, [1; 3], NormKind::None, &mut rng).shortcut.is_some());
    }
}
