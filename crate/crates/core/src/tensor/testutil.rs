//! Independent oracles shared by the layer unit tests.

pub use super::gradcheck::{check_layer_gradients, random_tensor};
use super::{ConvSpec, Tensor5};

/// Seven nested loops over (n, co, od, oh, ow, ci, kernel) with zero padding.
pub fn naive_conv(x: &Tensor5<f64>, w: &Tensor5<f64>, bias: &[f64], spec: &ConvSpec) -> Tensor5<f64> {
    let out = spec.conv_output(x.spatial()).unwrap();
    let [kd, kh, kw] = spec.kernel;
    let mut y = Tensor5::zeros([x.batch(), spec.out_channels, out[0], out[1], out[2]]);
    for n in 0..x.batch() {
        for co in 0..spec.out_channels {
            for od in 0..out[0] {
                for oh in 0..out[1] {
                    for ow in 0..out[2] {
                        let mut acc = bias[co];
                        for ci in 0..spec.in_channels {
                            for a in 0..kd {
                                for b in 0..kh {
                                    for c in 0..kw {
                                        let id = (od * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                                        let ih = (oh * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                                        let iw = (ow * spec.stride[2] + c) as isize - spec.padding[2] as isize;
                                        let [d, h, ww] = x.spatial();
                                        if id < 0 || ih < 0 || iw < 0 || id >= d as isize || ih >= h as isize || iw >= ww as isize {
                                            continue;
                                        }
                                        acc += x.at(n, ci, id as usize, ih as usize, iw as usize) * w.at(co, ci, a, b, c);
                                    }
                                }
                            }
                        }
                        let off = y.offset(n, co, od, oh, ow);
                        y.data_mut()[off] = acc;
                    }
                }
            }
        }
    }
    y
}

