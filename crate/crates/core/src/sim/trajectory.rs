use std::f64::consts::TAU;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::SimError;

/// Orbit around the origin: the camera descends linearly in z while its
/// horizontal radius widens from `r_min` at the ends to `r_max` at `z = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub duration: f64,
    pub fps: f64,
    pub z_start: f64,
    pub z_end: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub revolutions: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            duration: 0.5,
            fps: 240.0,
            z_start: 2.0,
            z_end: -2.0,
            r_min: 4.0,
            r_max: 6.0,
            revolutions: 1.0,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive");
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max) {
            return bad("radii must satisfy 0 < r_min <= r_max");
        }
        if !(self.z_start.abs() > 0.0 && self.z_end.abs() <= self.z_start.abs()) {
            return bad("z_start must be non-zero with |z_end| <= |z_start|");
        }
        if !self.revolutions.is_finite() {
            return bad("revolutions must be finite");
        }
        Ok(())
    }

    /// Number of rendered video frames, `floor(T * fps)`.
    pub fn frame_count(&self) -> usize {
        // guard against 0.5 * 240 landing a hair under 120
        (self.duration * self.fps + 1e-9).floor() as usize
    }

    pub fn frame_time(&self, n: usize) -> f64 {
        n as f64 / self.fps
    }

    pub fn z(&self, t: f64) -> f64 {
        self.z_start + (self.z_end - self.z_start) * t / self.duration
    }

    pub fn radius(&self, t: f64) -> f64 {
        let z = self.z(t);
        self.r_min + (self.r_max - self.r_min) * (1.0 - z.abs() / self.z_start.abs())
    }

    pub fn angle(&self, t: f64) -> f64 {
        TAU * self.revolutions * t / self.duration
    }
}

/// Camera placement. The rotation's columns are the camera's right, up and
/// forward axes in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Point3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    /// Looks from `position` at `target` keeping world +z as the up hint
    /// (world +y when the view is vertical).
    pub fn look_at(position: Point3<f64>, target: Point3<f64>) -> Self {
        let forward = (target - position).normalize();
        let mut right = forward.cross(&Vector3::z());
        if right.norm() < 1e-12 {
            right = forward.cross(&Vector3::y());
        }
        let right = right.normalize();
        let up = right.cross(&forward);
        Self {
            position,
            rotation: Matrix3::from_columns(&[right, up, forward]),
        }
    }

    pub fn right(&self) -> Vector3<f64> {
        self.rotation.column(0).into()
    }

    pub fn up(&self) -> Vector3<f64> {
        self.rotation.column(1).into()
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(2).into()
    }
}

pub fn camera_pose(cfg: &TrajectoryConfig, t: f64) -> Result<Pose, SimError> {
    if !(t >= 0.0 && t <= cfg.duration) {
        return Err(SimError::TimeOutOfRange { t, duration: cfg.duration });
    }
    let (r, theta) = (cfg.radius(t), cfg.angle(t));
    let position = Point3::new(r * theta.cos(), r * theta.sin(), cfg.z(t));
    Ok(Pose::look_at(position, Point3::origin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        let cfg = TrajectoryConfig::default();
        let p0 = camera_pose(&cfg, 0.0).unwrap().position;
        assert_eq!((p0.x, p0.y, p0.z), (4.0, 0.0, 2.0));
        assert_eq!((cfg.z(0.25), cfg.radius(0.25)), (0.0, 6.0));
        let p1 = camera_pose(&cfg, 0.5).unwrap().position;
        assert!((p1 - Point3::new(4.0, 0.0, -2.0)).norm() < 1e-12);
        assert_eq!(cfg.angle(0.5), TAU);
        assert_eq!(cfg.frame_count(), 120);
    }

    #[test]
    fn out_of_range_time() {
        let cfg = TrajectoryConfig::default();
        assert!(matches!(camera_pose(&cfg, 0.6), Err(SimError::TimeOutOfRange { .. })));
        assert!(camera_pose(&cfg, -1e-9).is_err());
    }

    #[test]
    fn vertical_view_falls_back() {
        let p = Pose::look_at(Point3::new(0.0, 0.0, 3.0), Point3::origin());
        let r = p.rotation;
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn pose_is_orthonormal_and_aimed(t in 0.0f64..=0.5) {
            let cfg = TrajectoryConfig::default();
            let pose = camera_pose(&cfg, t).unwrap();
            let r = pose.rotation;
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            let to_origin = (-pose.position.coords).normalize();
            prop_assert!((pose.forward() - to_origin).norm() < 1e-12);
            prop_assert!(pose.up().z >= 0.0);
            let dist = pose.position.coords.norm();
            let expected = (cfg.radius(t).powi(2) + cfg.z(t).powi(2)).sqrt();
            prop_assert!((dist - expected).abs() < 1e-12);
        }
    }
}
