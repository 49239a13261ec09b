use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensor::{CheckpointEntry, Layer, Parameter, Scalar, Tensor5};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_decay() -> f64 {
    0.01
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_decay(),
        }
    }

    pub fn paper() -> Self {
        Self::with_lr(1e-5)
    }

    pub fn toy() -> Self {
        Self::with_lr(1e-3)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.lr > 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates per parameter, in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T: Scalar = f32> {
    pub step: u64,
    names: Vec<String>,
    m: Vec<Tensor5<T>>,
    v: Vec<Tensor5<T>>,
}

impl<T: Scalar> OptState<T> {
    pub fn new(model: &mut impl Layer<T>) -> Self {
        let mut names = Vec::new();
        let mut m = Vec::new();
        model.visit_params(&mut |p| {
            names.push(p.name.clone());
            m.push(Tensor5::zeros(p.value.dims()));
        });
        Self {
            step: 0,
            names,
            v: m.clone(),
            m,
        }
    }

    pub fn first_moments(&self) -> &[Tensor5<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor5<T>] {
        &self.v
    }

    /// Moments as checkpoint entries named `m.<param>` and `v.<param>`.
    pub fn to_entries(&self) -> Vec<CheckpointEntry> {
        let entry = |prefix: &str, name: &str, t: &Tensor5<T>| {
            CheckpointEntry::new(
                format!("{prefix}.{name}"),
                t.dims().to_vec(),
                t.data().iter().map(|v| v.as_f64() as f32).collect(),
            )
        };
        let mut out = Vec::with_capacity(2 * self.names.len());
        for (i, name) in self.names.iter().enumerate() {
            out.push(entry("m", name, &self.m[i]));
            out.push(entry("v", name, &self.v[i]));
        }
        out
    }

    /// Restores moments saved by [`OptState::to_entries`] for the same registry.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry], step: u64) -> Result<(), TrainError> {
        if entries.len() != 2 * self.names.len() {
            return Err(TrainError::StateShapeMismatch(format!(
                "{} optimizer tensors for {} parameters",
                entries.len(),
                self.names.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            for (k, (prefix, slot)) in [("m", &mut self.m[i]), ("v", &mut self.v[i])].into_iter().enumerate() {
                let e = &entries[2 * i + k];
                if e.name != format!("{prefix}.{name}") || e.shape != slot.dims().to_vec() {
                    return Err(TrainError::StateShapeMismatch(format!("unexpected entry {} {:?}", e.name, e.shape)));
                }
                for (dst, &src) in slot.data_mut().iter_mut().zip(&e.data) {
                    *dst = T::from_f64_lossy(src as f64);
                }
            }
        }
        self.step = step;
        Ok(())
    }
}

fn update<T: Scalar>(p: &mut Parameter<T>, m: &mut Tensor5<T>, v: &mut Tensor5<T>, cfg: &AdamWConfig, step: u64) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    let shrink = if p.decay { 1.0 - cfg.lr * cfg.weight_decay } else { 1.0 };
    let grads = p.grad.data();
    for (((theta, &g), mi), vi) in p
        .value
        .data_mut()
        .iter_mut()
        .zip(grads)
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        let g = g.as_f64();
        let m_new = cfg.beta1 * mi.as_f64() + (1.0 - cfg.beta1) * g;
        let v_new = cfg.beta2 * vi.as_f64() + (1.0 - cfg.beta2) * g * g;
        *mi = T::from_f64_lossy(m_new);
        *vi = T::from_f64_lossy(v_new);
        let m_hat = mi.as_f64() / c1;
        let v_hat = vi.as_f64() / c2;
        *theta = T::from_f64_lossy(theta.as_f64() * shrink - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
    }
}

/// One decoupled-weight-decay Adam update over every parameter, after which
/// gradients are zeroed. Decay is skipped for parameters with `decay == false`.
pub fn adamw_step<T: Scalar>(model: &mut impl Layer<T>, state: &mut OptState<T>, cfg: &AdamWConfig) -> Result<(), TrainError> {
    let mut i = 0;
    let mut bad = None;
    model.visit_params(&mut |p| {
        let ok = i < state.names.len() && state.names[i] == p.name && state.m[i].dims() == p.value.dims();
        if !ok && bad.is_none() {
            bad = Some(p.name.clone());
        }
        i += 1;
    });
    if let Some(name) = bad.or_else(|| (i != state.names.len()).then(|| "parameter count".to_string())) {
        return Err(TrainError::StateShapeMismatch(name));
    }
    state.step += 1;
    let step = state.step;
    let mut i = 0;
    model.visit_params(&mut |p| {
        update(p, &mut state.m[i], &mut state.v[i], cfg, step);
        p.zero_grad();
        i += 1;
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Buffer, Mode, TensorError};

    struct Scalars {
        params: Vec<Parameter<f32>>,
    }

    impl Scalars {
        fn new(values: &[(f32, bool)]) -> Self {
            Self {
                params: values
                    .iter()
                    .enumerate()
                    .map(|(i, &(v, decay))| Parameter::new(format!("p{i}"), Tensor5::filled([1, 1, 1, 1, 1], v), decay, 1))
                    .collect(),
            }
        }

        fn set_grads(&mut self, g: f32) {
            for p in &mut self.params {
                p.grad.data_mut()[0] = g;
            }
        }

        fn value(&self, i: usize) -> f32 {
            self.params[i].value.data()[0]
        }
    }

    impl Layer<f32> for Scalars {
        fn forward(&mut self, x: &Tensor5<f32>, _: Mode) -> Result<Tensor5<f32>, TensorError> {
            Ok(x.clone())
        }

        fn backward(&mut self, g: &Tensor5<f32>) -> Result<Tensor5<f32>, TensorError> {
            Ok(g.clone())
        }

        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter<f32>)) {
            self.params.iter_mut().for_each(f);
        }

        fn visit_buffers(&mut self, _: &mut dyn FnMut(&mut Buffer<f32>)) {}
    }

    #[test]
    fn zero_gradient_no_decay_is_fixed_point() {
        let mut model = Scalars::new(&[(0.7, true), (-2.0, false)]);
        let mut state = OptState::new(&mut model);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::toy()
        };
        for _ in 0..3 {
            adamw_step(&mut model, &mut state, &cfg).unwrap();
        }
        assert_eq!((model.value(0), model.value(1)), (0.7, -2.0));
    }

    #[test]
    fn first_step_closed_form() {
        let mut model = Scalars::new(&[(1.0, true)]);
        model.set_grads(1.0);
        let mut state = OptState::new(&mut model);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::with_lr(0.001)
        };
        adamw_step(&mut model, &mut state, &cfg).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expect = 1.0f64 - 0.001 / (1.0 + 1e-8);
        assert!((model.value(0) as f64 - expect).abs() < 1e-7);
        assert_eq!(model.params[0].grad.data()[0], 0.0);
    }

    #[test]
    fn pure_decay_is_exact_and_skips_exempt() {
        let mut model = Scalars::new(&[(0.37, true), (0.37, false)]);
        let mut state = OptState::new(&mut model);
        let cfg = AdamWConfig::toy();
        adamw_step(&mut model, &mut state, &cfg).unwrap();
        assert_eq!(model.value(0), (0.37f32 as f64 * (1.0 - 1e-3 * 0.01)) as f32);
        assert_eq!(model.value(1), 0.37);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut model = Scalars::new(&[(0.0, true), (0.0, true)]);
        let mut state = OptState::new(&mut model);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::toy()
        };
        let mut prev = (0.0, 0.0);
        for _ in 0..20 {
            model.params[0].grad.data_mut()[0] = 0.5;
            model.params[1].grad.data_mut()[0] = -3.0;
            adamw_step(&mut model, &mut state, &cfg).unwrap();
            assert!(model.value(0) < prev.0 && model.value(1) > prev.1);
            prev = (model.value(0), model.value(1));
        }
        assert!(state.second_moments().iter().all(|v| v.data().iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn state_round_trips_and_detects_mismatch() {
        let mut model = Scalars::new(&[(1.0, true), (2.0, false)]);
        let mut state = OptState::new(&mut model);
        model.set_grads(0.3);
        adamw_step(&mut model, &mut state, &AdamWConfig::toy()).unwrap();
        let entries = state.to_entries();
        let mut restored = OptState::new(&mut model);
        restored.load_entries(&entries, state.step).unwrap();
        assert_eq!(restored, state);

        let mut other = Scalars::new(&[(1.0, true)]);
        let mut small = OptState::new(&mut other);
        assert!(matches!(small.load_entries(&entries, 1), Err(TrainError::StateShapeMismatch(_))));
        assert!(matches!(
            adamw_step(&mut model, &mut small, &AdamWConfig::toy()),
            Err(TrainError::StateShapeMismatch(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(AdamWConfig::with_lr(0.0).validate().is_err());
        assert!(AdamWConfig { beta1: 1.0, ..AdamWConfig::toy() }.validate().is_err());
        assert!(AdamWConfig::paper().validate().is_ok());
    }
}
