use super::*;
use crate::tensor::gradcheck::{check_layer_gradients, check_layer_gradients_sampled, random_tensor};

fn micro_config(seed: u64) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            in_channels: 1,
            stem: StemConfig {
                kernel: [1, 3, 3],
                stride: [1, 2, 2],
                channels: 2,
                pool: None,
            },
            stages: vec![
                StageConfig {
                    blocks: 1,
                    channels: 2,
                    stride: [1, 1, 1],
                },
                StageConfig {
                    blocks: 1,
                    channels: 2,
                    stride: [1, 2, 2],
                },
            ],
            expansion: 2,
            hidden_spatial: [4, 4, 4],
        },
        decoder: DecoderConfig {
            levels: 2,
            channels: vec![2, 3],
            head_kernel: 3,
        },
        norm: NormKind::Batch,
        seed,
    }
}

#[test]
fn toy_shapes_follow_layer_formulas() {
    let mut m = E2VModel::<f32>::build(&ModelConfig::toy()).unwrap();
    let x = random_tensor::<f32>([1, 1, 10, 32, 32], 1).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    // stem (3,7,7)/(1,2,2) pad (1,3,3): 10x32x32 -> 10x16x16; stage 2 halves H, W: 10x8x8; resize: 8^3
    let h = m.encode(&x, Mode::Eval).unwrap();
    assert_eq!(h.dims(), [1, 64, 8, 8, 8]);
    let p = m.decode(&h, Mode::Eval).unwrap();
    assert_eq!(p.dims(), [1, 1, 8, 8, 8]);
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn toy_parameter_count_matches_table() {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k;
    let norm = |c: usize| 2 * c;
    let table = [
        conv(1, 8, 3 * 7 * 7) + norm(8),
        conv(8, 8, 1) + norm(8),
        conv(8, 8, 27) + norm(8),
        conv(8, 32, 1) + norm(32),
        conv(8, 32, 1) + norm(32),
        conv(32, 16, 1) + norm(16),
        conv(16, 16, 27) + norm(16),
        conv(16, 64, 1) + norm(64),
        conv(32, 64, 1) + norm(64),
        conv(64, 8, 1) + norm(8),
        conv(8, 16, 27) + norm(16),
        conv(16, 8, 8) + norm(8),
        conv(16, 8, 27) + norm(8),
        conv(8, 1, 27) + 1,
    ];
    let mut m = E2VModel::<f32>::build(&ModelConfig::toy()).unwrap();
    assert_eq!(m.count_parameters(), table.iter().sum::<usize>());
}

#[test]
fn single_conv_counts_two() {
    let spec = ConvSpec::cubic(1, 1, 1, 1, 0);
    assert_eq!(spec.param_count(true), 2);
}

#[test]
fn names_unique_and_stable() {
    let mut m = E2VModel::<f32>::build(&ModelConfig::toy()).unwrap();
    let names = m.parameter_names();
    let set: HashSet<_> = names.iter().collect();
    assert_eq!(set.len(), names.len());
    assert_eq!(names[0], "encoder.stem.conv.weight");
    assert_eq!(names.last().unwrap(), "decoder.head.conv.bias");
}

#[test]
fn same_seed_same_checkpoint() {
    let a = E2VModel::<f32>::build(&ModelConfig::toy()).unwrap().to_checkpoint();
    let b = E2VModel::<f32>::build(&ModelConfig::toy()).unwrap().to_checkpoint();
    assert_eq!(a, b);
    let mut cfg = ModelConfig::toy();
    cfg.seed = 1;
    assert_ne!(a, E2VModel::<f32>::build(&cfg).unwrap().to_checkpoint());
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let mut src = E2VModel::<f32>::build(&micro_config(3)).unwrap();
    let x = random_tensor::<f32>([2, 1, 4, 8, 8], 0);
    src.predict(&x, Mode::Train).unwrap();
    let ckp = src.to_checkpoint();
    let mut dst = E2VModel::<f32>::build(&micro_config(9)).unwrap();
    dst.load_checkpoint(&ckp).unwrap();
    assert_eq!(dst.to_checkpoint(), ckp);
    assert_eq!(dst.predict(&x, Mode::Eval).unwrap(), src.predict(&x, Mode::Eval).unwrap());

    let mut other = E2VModel::<f32>::build(&ModelConfig::toy()).unwrap();
    assert!(matches!(other.load_checkpoint(&ckp), Err(ModelError::CheckpointMismatch(_))));
}

#[test]
fn zeroed_head_gives_half() {
    let mut m = E2VModel::<f32>::build(&ModelConfig::toy()).unwrap();
    m.decoder.head.visit_params(&mut |p| p.value.data_mut().iter_mut().for_each(|v| *v = 0.0));
    let h = random_tensor::<f32>([2, 64, 8, 8, 8], 4);
    let p = m.decode(&h, Mode::Eval).unwrap();
    assert!(p.data().iter().all(|&v| v == 0.5));
}

#[test]
fn forward_is_deterministic() {
    let mut m = E2VModel::<f32>::build(&ModelConfig::toy()).unwrap();
    let x = random_tensor::<f32>([2, 1, 10, 32, 32], 8);
    let a = m.predict(&x, Mode::Eval).unwrap();
    let b = m.predict(&x, Mode::Eval).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_validation() {
    let mut cfg = ModelConfig::toy();
    cfg.decoder.channels = vec![8];
    assert!(matches!(E2VModel::<f32>::build(&cfg), Err(ModelError::ChannelMismatch(_))));
    let mut cfg = ModelConfig::toy();
    cfg.encoder.hidden_spatial = [9, 9, 9];
    assert!(matches!(E2VModel::<f32>::build(&cfg), Err(ModelError::Config(_))));
    let json = ModelConfig::toy().to_json();
    assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), ModelConfig::toy());
    assert!(serde_json::from_str::<ModelConfig>(&json.replacen("\"seed\"", "\"sed\"", 1)).is_err());
}

#[test]
fn wrong_input_channels_rejected() {
    let mut m = E2VModel::<f32>::build(&micro_config(0)).unwrap();
    assert!(m.predict(&Tensor5::zeros([1, 2, 4, 8, 8]), Mode::Eval).is_err());
    let h = Tensor5::zeros([1, 3, 4, 4, 4]);
    assert!(matches!(m.decode(&h, Mode::Eval), Err(ModelError::ChannelMismatch(_))));
}

#[test]
fn full_model_gradients() {
    for seed in 0..3 {
        let mut m = E2VModel::<f64>::build(&micro_config(seed)).unwrap();
        let x = random_tensor::<f64>([2, 1, 4, 8, 8], seed + 50);
        let err = check_layer_gradients(&mut m, &x, seed, 1e-6);
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn encoder_and_decoder_gradients() {
    let cfg = micro_config(5);
    let mut rng = InitRng::new(5);
    let mut enc = Encoder::<f64>::new(&cfg.encoder, NormKind::Batch, &mut rng);
    let x = random_tensor::<f64>([2, 1, 4, 8, 8], 1);
    assert!(check_layer_gradients(&mut enc, &x, 1, 1e-6) < 1e-6);
    let mut dec = Decoder::<f64>::new(&cfg.decoder, 4, NormKind::Batch, &mut rng);
    let h = random_tensor::<f64>([2, 4, 4, 4, 4], 2);
    assert!(check_layer_gradients(&mut dec, &h, 2, 1e-6) < 1e-6);
}

#[test]
fn toy_model_gradients_sampled() {
    let mut cfg = ModelConfig::toy();
    cfg.norm = NormKind::None;
    let mut m = E2VModel::<f64>::build(&cfg).unwrap();
    // zero biases put ReLUs fed by all-zero patches exactly on the kink
    let mut k = 0;
    m.visit_params(&mut |p| {
        if p.name.ends_with(".bias") {
            k += 1;
            let noise = random_tensor::<f64>(p.value.dims(), 900 + k);
            p.value.add_assign(&noise.scale(0.1)).unwrap();
        }
    });
    let x = random_tensor::<f64>([1, 1, 10, 32, 32], 3);
    let err = check_layer_gradients_sampled(&mut m, &x, 3, 1e-6, 6);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn voxel_tensor_layout() {
    let mut g = VoxelGrid::empty(4);
    g.set(1, 2, 3, true);
    let t = voxels_to_tensor::<f32>(&[&g]).unwrap();
    assert_eq!(t.at(0, 0, 3, 2, 1), 1.0);
    assert_eq!(t.data().iter().sum::<f32>(), 1.0);
    let probs = tensor_to_probs(&t).unwrap();
    assert_eq!(probs[0].values()[g.index(1, 2, 3)], 1.0);
}
