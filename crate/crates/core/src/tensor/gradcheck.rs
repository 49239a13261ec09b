//! Finite-difference gradient checking for layers in 64-bit mode.

use rand::seq::index::sample;

use super::{InitRng, Layer, Mode, Parameter, Scalar, Tensor5};

/// Uniform `[-1, 1)` entries from a seeded generator.
pub fn random_tensor<T: Scalar>(dims: [usize; 5], seed: u64) -> Tensor5<T> {
    let mut rng = InitRng::new(seed ^ 0x5eed_0000);
    Tensor5::from_fn(dims, |_| T::from_f64_lossy(rng.uniform(-1.0, 1.0)))
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `L = <layer(x), r>` against the analytic backward,
/// for the input and every parameter. Returns the worst relative error.
pub fn check_layer_gradients<L: Layer<f64>>(layer: &mut L, x: &Tensor5<f64>, seed: u64, h: f64) -> f64 {
    check_layer_gradients_sampled(layer, x, seed, h, usize::MAX)
}

fn with_param<L: Layer<f64>>(layer: &mut L, index: usize, f: &mut dyn FnMut(&mut Parameter<f64>)) {
    let mut k = 0;
    layer.visit_params(&mut |p| {
        if k == index {
            f(p);
        }
        k += 1;
    });
}

fn coordinates(len: usize, limit: usize, rng: &mut InitRng) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        let mut idx = sample(rng.inner(), len, limit).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Like [`check_layer_gradients`] but compares at most `per_tensor` seeded
/// coordinates of the input and of each parameter.
pub fn check_layer_gradients_sampled<L: Layer<f64>>(
    layer: &mut L,
    x: &Tensor5<f64>,
    seed: u64,
    h: f64,
    per_tensor: usize,
) -> f64 {
    let y = layer.forward(x, Mode::Train).unwrap();
    let r = random_tensor::<f64>(y.dims(), seed.wrapping_add(777));
    layer.visit_params(&mut |p| p.zero_grad());
    let gx = layer.backward(&r).unwrap();
    let mut analytic: Vec<Vec<f64>> = vec![gx.data().to_vec()];
    layer.visit_params(&mut |p| analytic.push(p.grad.data().to_vec()));

    let loss = |layer: &mut L, x: &Tensor5<f64>| layer.forward(x, Mode::Train).unwrap().dot(&r).unwrap();
    let mut rng = InitRng::new(seed.wrapping_add(4242));
    let mut worst = 0.0f64;

    let coords = coordinates(x.len(), per_tensor, &mut rng);
    let mut xs = x.clone();
    let mut numeric = Vec::with_capacity(coords.len());
    for &i in &coords {
        let orig = xs.data()[i];
        xs.data_mut()[i] = orig + h;
        let lp = loss(layer, &xs);
        xs.data_mut()[i] = orig - h;
        let lm = loss(layer, &xs);
        xs.data_mut()[i] = orig;
        numeric.push((lp - lm) / (2.0 * h));
    }
    let picked: Vec<f64> = coords.iter().map(|&i| analytic[0][i]).collect();
    worst = worst.max(rel_err(&picked, &numeric));

    for (pi, grads) in analytic.iter().enumerate().skip(1) {
        let pi = pi - 1;
        let coords = coordinates(grads.len(), per_tensor, &mut rng);
        let mut numeric = Vec::with_capacity(coords.len());
        for &i in &coords {
            let mut orig = 0.0;
            with_param(layer, pi, &mut |p| {
                orig = p.value.data()[i];
                p.value.data_mut()[i] = orig + h;
            });
            let lp = loss(layer, x);
            with_param(layer, pi, &mut |p| p.value.data_mut()[i] = orig - h);
            let lm = loss(layer, x);
            with_param(layer, pi, &mut |p| p.value.data_mut()[i] = orig);
            numeric.push((lp - lm) / (2.0 * h));
        }
        let picked: Vec<f64> = coords.iter().map(|&i| grads[i]).collect();
        worst = worst.max(rel_err(&picked, &numeric));
    }
    worst
}
