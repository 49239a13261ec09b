//! Synthetic event data: an orbiting camera renders a scene, and a per-pixel
//! contrast-threshold model turns the video into events. Labels come from the
//! same scene description.

mod render;
mod scene;
mod synth;
mod trajectory;

pub use render::{default_lights, render_frame, CameraIntrinsics, DirectionalLight, Image, BACKGROUND};
pub use scene::{random_scene, Hit, MeshSpec, Primitive, Scene, SceneMesh, SceneSpec, CATEGORIES};
pub use synth::{video_to_events, EventSynth};
pub use trajectory::{camera_pose, Pose, TrajectoryConfig};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventError, EventStream};
use crate::voxel::{VoxelError, VoxelGrid};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time {t} outside [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("contrast threshold must be positive, got {0}")]
    ContrastNonPositive(f64),
    #[error("frame is {found:?}, expected {expected:?} (width, height)")]
    FrameDimMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("need at least two frames, got {0}")]
    TooFewFrames(usize),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error(transparent)]
    Event(#[from] EventError),
}

/// Everything besides the scene that shapes a generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub trajectory: TrajectoryConfig,
    pub camera: CameraIntrinsics,
    pub contrast: f64,
    pub eps_log: f64,
    pub label_resolution: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryConfig::default(),
            camera: CameraIntrinsics::default(),
            contrast: 0.2,
            eps_log: 1e-3,
            label_resolution: 32,
        }
    }
}

impl SimConfig {
    /// 64 x 64 sensor with 8^3 labels, matching the toy network.
    pub fn toy() -> Self {
        Self {
            camera: CameraIntrinsics::desk(),
            label_resolution: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.trajectory.validate()?;
        if self.camera.width == 0 || self.camera.height == 0 {
            return Err(SimError::Config("camera resolution must be positive".into()));
        }
        if !(self.camera.focal_mm > 0.0 && self.camera.sensor_width_mm > 0.0) {
            return Err(SimError::Config("focal length and sensor width must be positive".into()));
        }
        if !(self.contrast > 0.0) {
            return Err(SimError::ContrastNonPositive(self.contrast));
        }
        if !(self.eps_log > 0.0) {
            return Err(SimError::Config("eps_log must be positive".into()));
        }
        if self.label_resolution == 0 {
            return Err(SimError::Voxel(VoxelError::ResolutionZero));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub events: EventStream,
    pub label: VoxelGrid,
    pub video_frames: usize,
}

/// Renders `floor(T * fps)` frames along the orbit, converts them to events
/// and computes the occupancy label.
pub fn generate_sample(scene: &Scene, cfg: &SimConfig) -> Result<Sample, SimError> {
    cfg.validate()?;
    let traj = &cfg.trajectory;
    let video_frames = traj.frame_count();
    if video_frames < 2 {
        return Err(SimError::TooFewFrames(video_frames));
    }
    let lights = default_lights();
    let cam = &cfg.camera;
    let mut synth = EventSynth::new(cam.width, cam.height, traj.fps, cfg.contrast, cfg.eps_log)?;
    for n in 0..video_frames {
        let pose = camera_pose(traj, traj.frame_time(n))?;
        synth.push(&render_frame(scene, &pose, cam, &lights))?;
    }
    Ok(Sample {
        events: synth.finish()?,
        label: scene.label(cfg.label_resolution)?,
        video_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::validate_stream;

    fn small() -> SimConfig {
        SimConfig {
            camera: CameraIntrinsics {
                width: 32,
                height: 32,
                ..CameraIntrinsics::default()
            },
            label_resolution: 16,
            ..SimConfig::default()
        }
    }

    #[test]
    fn empty_scene_sample() {
        let s = generate_sample(&Scene::empty(), &small()).unwrap();
        assert!(s.events.is_empty());
        assert!(s.label.is_empty());
        assert_eq!(s.video_frames, 120);
        assert!((s.events.duration() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sphere_sample() {
        let scene = Scene {
            primitives: vec![Primitive::Sphere {
                center: [0.0; 3],
                radius: 0.5,
                albedo: 0.8,
            }],
            mesh: None,
        };
        let s = generate_sample(&scene, &small()).unwrap();
        let analytic = std::f64::consts::PI / 6.0 * 16f64.powi(3);
        assert!((s.label.count() as f64 - analytic).abs() / analytic < 0.05);
        assert!(!s.events.is_empty());
        let raw = s.events.events().to_vec();
        assert!(validate_stream(raw, 32, 32, 0.5).is_ok());
        assert_eq!(generate_sample(&scene, &small()).unwrap(), s);
    }

    #[test]
    fn config_json_is_strict() {
        let cfg: SimConfig = serde_json::from_str(r#"{"contrast": 0.3}"#).unwrap();
        assert_eq!(cfg.trajectory.fps, 240.0);
        assert!(serde_json::from_str::<SimConfig>(r#"{"contrast": 0.3, "colour": 1}"#).is_err());
        let bad = SimConfig {
            contrast: -1.0,
            ..SimConfig::default()
        };
        assert!(matches!(bad.validate(), Err(SimError::ContrastNonPositive(_))));
    }
}
