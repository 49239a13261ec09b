use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::PoolSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Batch,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemConfig {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub channels: usize,
    #[serde(default)]
    pub pool: Option<PoolSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: usize,
    /// Bottleneck width; the stage emits `channels * expansion`.
    pub channels: usize,
    pub stride: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stem: StemConfig,
    pub stages: Vec<StageConfig>,
    pub expansion: usize,
    pub hidden_spatial: [usize; 3],
}

impl EncoderConfig {
    /// Channel count `C` of the hidden volume.
    pub fn hidden_channels(&self) -> usize {
        self.stages
            .last()
            .map_or(self.stem.channels, |s| s.channels * self.expansion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    /// Resolutions in the UNet, the full one included.
    pub levels: usize,
    /// Feature channels at each resolution, finest first.
    pub channels: Vec<usize>,
    /// Cubic kernel of the final one-channel convolution (odd).
    #[serde(default = "default_head_kernel")]
    pub head_kernel: usize,
}

fn default_head_kernel() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub norm: NormKind,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale network for a `1 x 10 x 32 x 32` frame stack and 8^3 output.
    pub fn toy() -> Self {
        Self {
            encoder: EncoderConfig {
                in_channels: 1,
                stem: StemConfig {
                    kernel: [3, 7, 7],
                    stride: [1, 2, 2],
                    channels: 8,
                    pool: None,
                },
                stages: vec![
                    StageConfig {
                        blocks: 1,
                        channels: 8,
                        stride: [1, 1, 1],
                    },
                    StageConfig {
                        blocks: 1,
                        channels: 16,
                        stride: [1, 2, 2],
                    },
                ],
                expansion: 4,
                hidden_spatial: [8, 8, 8],
            },
            decoder: DecoderConfig {
                levels: 2,
                channels: vec![8, 16],
                head_kernel: 3,
            },
            norm: NormKind::Batch,
            seed: 0,
        }
    }

    /// 3-D bottleneck network with the (3, 8, 36, 3) stage pattern, mapping
    /// `1 x 100 x 256 x 256` frames to a `C x 32^3` hidden volume.
    pub fn paper() -> Self {
        let stage = |blocks, channels, s| StageConfig {
            blocks,
            channels,
            stride: [s; 3],
        };
        Self {
            encoder: EncoderConfig {
                in_channels: 1,
                stem: StemConfig {
                    kernel: [7, 7, 7],
                    stride: [2, 2, 2],
                    channels: 64,
                    pool: Some(PoolSpec::cubic(3, 2, 1)),
                },
                stages: vec![stage(3, 64, 1), stage(8, 128, 2), stage(36, 256, 2), stage(3, 512, 2)],
                expansion: 4,
                hidden_spatial: [32, 32, 32],
            },
            decoder: DecoderConfig {
                levels: 3,
                channels: vec![64, 128, 256],
                head_kernel: 1,
            },
            norm: NormKind::Batch,
            seed: 0,
        }
    }

    /// Side length of the cubic output grid.
    pub fn output_resolution(&self) -> usize {
        self.encoder.hidden_spatial[0]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let e = &self.encoder;
        let cfg = |msg: String| Err(ModelError::Config(msg));
        if e.in_channels == 0 || e.stem.channels == 0 || e.expansion == 0 {
            return cfg("encoder channel counts must be positive".into());
        }
        if e.stem.kernel.contains(&0) || e.stem.stride.contains(&0) {
            return cfg("stem kernel and stride must be positive".into());
        }
        for (i, s) in e.stages.iter().enumerate() {
            if s.blocks == 0 || s.channels == 0 || s.stride.contains(&0) {
                return cfg(format!("stage {i} needs positive blocks, channels and stride"));
            }
        }
        let [d, h, w] = e.hidden_spatial;
        if d == 0 || d != h || d != w {
            return cfg(format!("hidden_spatial {:?} must be a positive cube", e.hidden_spatial));
        }
        let dec = &self.decoder;
        if dec.levels == 0 || dec.channels.len() != dec.levels {
            return Err(ModelError::ChannelMismatch(format!(
                "decoder declares {} levels but {} channel counts",
                dec.levels,
                dec.channels.len()
            )));
        }
        if dec.channels.contains(&0) {
            return Err(ModelError::ChannelMismatch("decoder channels must be positive".into()));
        }
        if dec.head_kernel % 2 == 0 {
            return cfg(format!("head_kernel {} must be odd", dec.head_kernel));
        }
        let factor = 1usize << (dec.levels - 1);
        if d % factor != 0 {
            return cfg(format!("hidden size {d} not divisible by {factor} for {} decoder levels", dec.levels));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
