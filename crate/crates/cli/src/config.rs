use std::path::Path;

use e2v_core::events::{BinningConfig, BinningMode};
use e2v_core::model::ModelConfig;
use e2v_core::sim::SimConfig;
use e2v_core::train::{AdamWConfig, TrainRun};
use e2v_core::voxel::{DEFAULT_FSCORE_DISTANCE, DEFAULT_IOU_THRESHOLD};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningSettings {
    pub window: f64,
    pub mode: BinningMode,
    /// OR-pooling factor applied to each frame after binning.
    pub downscale: usize,
}

impl BinningSettings {
    pub fn config(&self) -> Result<BinningConfig, CliError> {
        Ok(BinningConfig::new(self.window, self.mode)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSettings {
    pub threshold: f64,
    pub distance: f64,
}

/// Every tunable of the pipeline in one strict JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub binning: BinningSettings,
    pub model: ModelConfig,
    pub optimizer: AdamWConfig,
    pub train: TrainRun,
    pub metrics: MetricSettings,
    /// Train, validation and test proportions.
    pub split: [u32; 3],
}

impl RunConfig {
    /// 512^2 sensor, 100 frames of 256^2, 32^3 labels and the full network.
    pub fn paper() -> Self {
        Self {
            sim: SimConfig::default(),
            binning: BinningSettings {
                window: 0.005,
                mode: BinningMode::Uniform,
                downscale: 2,
            },
            model: ModelConfig::paper(),
            optimizer: AdamWConfig::paper(),
            train: TrainRun::paper(),
            metrics: MetricSettings {
                threshold: DEFAULT_IOU_THRESHOLD,
                distance: DEFAULT_FSCORE_DISTANCE,
            },
            split: [8, 1, 1],
        }
    }

    /// 64^2 sensor binned into 10 frames of 32^2, 8^3 labels.
    pub fn toy() -> Self {
        let mut cfg = Self::paper();
        cfg.sim = SimConfig::toy();
        cfg.binning.window = 0.05;
        cfg.model = ModelConfig::toy();
        cfg.optimizer = AdamWConfig::toy();
        cfg.train.epochs = 100;
        cfg
    }

    /// Defaults (toy or paper) overlaid with the JSON file at `path`, if any.
    /// Objects merge key by key; any other value replaces the default.
    pub fn load(path: Option<&Path>, toy: bool) -> Result<Self, CliError> {
        let base = if toy { Self::toy() } else { Self::paper() };
        let Some(path) = path else {
            base.validate()?;
            return Ok(base);
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let overlay: Value = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
        })?;
        let mut merged = serde_json::to_value(&base).expect("config serializes");
        merge(&mut merged, overlay);
        let cfg: Self =
            serde_json::from_value(merged).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.binning.config()?;
        let ds = self.binning.downscale;
        if ds == 0 || self.sim.camera.width % ds != 0 || self.sim.camera.height % ds != 0 {
            return Err(CliError::Config(format!(
                "downscale {ds} does not divide the {}x{} sensor",
                self.sim.camera.width, self.sim.camera.height
            )));
        }
        self.model.validate()?;
        if self.model.output_resolution() != self.sim.label_resolution {
            return Err(CliError::Config(format!(
                "model predicts {}^3 but labels are {}^3",
                self.model.output_resolution(),
                self.sim.label_resolution
            )));
        }
        self.optimizer.validate()?;
        self.train.validate()?;
        let m = &self.metrics;
        if !(m.threshold > 0.0 && m.threshold < 1.0 && m.distance > 0.0 && m.distance <= 1.0) {
            return Err(CliError::Config("metrics need 0 < threshold < 1 and 0 < distance <= 1".into()));
        }
        if self.split.iter().sum::<u32>() == 0 {
            return Err(CliError::Config("split proportions sum to zero".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn defaults_validate() {
        RunConfig::paper().validate().unwrap();
        RunConfig::toy().validate().unwrap();
    }

    #[test]
    fn overlay_merges_nested_keys() {
        let f = write(r#"{"train": {"epochs": 7}, "sim": {"trajectory": {"fps": 120}}}"#);
        let cfg = RunConfig::load(Some(f.path()), true).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.batch_size, 5);
        assert_eq!(cfg.sim.trajectory.fps, 120.0);
        assert_eq!(cfg.sim.trajectory.duration, 0.5);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let f = write(r#"{"train": {"epoch": 7}}"#);
        assert!(matches!(RunConfig::load(Some(f.path()), true), Err(CliError::Config(_))));
        let f = write("{\n  \"train\": \n}");
        let err = RunConfig::load(Some(f.path()), true).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
        let f = write(r#"{"binning": {"downscale": 3}}"#);
        assert!(matches!(RunConfig::load(Some(f.path()), true), Err(CliError::Config(_))));
        let f = write(r#"{"sim": {"label_resolution": 16}}"#);
        assert!(matches!(RunConfig::load(Some(f.path()), true), Err(CliError::Config(_))));
    }
}
