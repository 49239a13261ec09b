use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use super::trajectory::Pose;
use crate::par;

/// Pinhole camera with square pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraIntrinsics {
    pub focal_mm: f64,
    pub sensor_width_mm: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            focal_mm: 80.0,
            sensor_width_mm: 36.0,
            width: 512,
            height: 512,
        }
    }
}

impl CameraIntrinsics {
    /// 64 x 64 sensor with the same field of view.
    pub fn desk() -> Self {
        Self {
            width: 64,
            height: 64,
            ..Self::default()
        }
    }

    pub fn focal_pixels(&self) -> f64 {
        self.focal_mm / self.sensor_width_mm * self.width as f64
    }

    pub fn horizontal_fov(&self) -> f64 {
        2.0 * (0.5 * self.sensor_width_mm / self.focal_mm).atan()
    }

    /// Unnormalized world direction through the centre of pixel `(u, v)`;
    /// `v` grows downwards.
    pub fn ray(&self, pose: &Pose, u: usize, v: usize) -> Vector3<f64> {
        let a = u as f64 + 0.5 - 0.5 * self.width as f64;
        let b = v as f64 + 0.5 - 0.5 * self.height as f64;
        pose.forward() * self.focal_pixels() + pose.right() * a - pose.up() * b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalLight {
    /// Unit vector pointing towards the light.
    pub direction: Vector3<f64>,
    pub intensity: f64,
}

/// Top and bottom lights plus an oblique fill in the x-z plane. An
/// unoccluded surface collects at most 0.9.
pub fn default_lights() -> Vec<DirectionalLight> {
    vec![
        DirectionalLight {
            direction: Vector3::z(),
            intensity: 0.5,
        },
        DirectionalLight {
            direction: -Vector3::z(),
            intensity: 0.5,
        },
        DirectionalLight {
            direction: Vector3::new(1.0, 0.0, 1.0).normalize(),
            intensity: 0.4,
        },
    ]
}

pub const BACKGROUND: f64 = 1.0;

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }
}

/// Casts one ray per pixel; hits are shaded `albedo * sum max(0, n.l) * I`.
pub fn render_frame(scene: &Scene, pose: &Pose, cam: &CameraIntrinsics, lights: &[DirectionalLight]) -> Image {
    let rows = par::map_range(cam.height, |v| {
        (0..cam.width)
            .map(|u| {
                let d = cam.ray(pose, u, v);
                match scene.intersect(pose.position, d) {
                    None => BACKGROUND,
                    Some(hit) => {
                        let diffuse: f64 = lights
                            .iter()
                            .map(|l| hit.normal.dot(&l.direction).max(0.0) * l.intensity)
                            .sum();
                        (hit.albedo * diffuse).clamp(0.0, 1.0)
                    }
                }
            })
            .collect::<Vec<_>>()
    });
    Image {
        width: cam.width,
        height: cam.height,
        data: rows.concat(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::Primitive;
    use nalgebra::Point3;

    #[test]
    fn empty_scene_is_background() {
        let pose = Pose::look_at(Point3::new(4.0, 0.0, 2.0), Point3::origin());
        let img = render_frame(&Scene::empty(), &pose, &CameraIntrinsics::desk(), &default_lights());
        assert!(img.data.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn fov_matches_focal_length() {
        let cam = CameraIntrinsics::default();
        assert_eq!(cam.focal_pixels(), 80.0 / 36.0 * 512.0);
        assert!((cam.horizontal_fov().to_degrees() - 25.36).abs() < 0.01);
    }

    #[test]
    fn centre_ray_hits_at_closed_form_distance() {
        // even-sized sensors have no pixel on the optical axis, so use 63 x 63
        let cam = CameraIntrinsics {
            width: 63,
            height: 63,
            ..CameraIntrinsics::desk()
        };
        let pose = Pose::look_at(Point3::new(4.0, 0.0, 0.0), Point3::origin());
        let scene = Scene {
            primitives: vec![Primitive::Sphere {
                center: [0.0; 3],
                radius: 0.5,
                albedo: 1.0,
            }],
            mesh: None,
        };
        let d = cam.ray(&pose, 31, 31).normalize();
        let hit = scene.intersect(pose.position, d).unwrap();
        assert!((hit.t - 3.5).abs() < 1e-12);
        // surface faces +x: only the fill light contributes
        let img = render_frame(&scene, &pose, &cam, &default_lights());
        assert!((img.get(31, 31) - 0.4 * std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn mirrored_scene_gives_mirrored_image() {
        let flip = |c: [f64; 3]| [c[0], -c[1], c[2]];
        let prims = vec![
            Primitive::Box {
                center: [0.1, 0.2, -0.1],
                half_extents: [0.2, 0.1, 0.25],
                albedo: 0.7,
            },
            Primitive::Cylinder {
                center: [-0.1, -0.15, 0.1],
                axis: [0.3, 0.4, 1.0],
                radius: 0.15,
                half_height: 0.2,
                albedo: 0.9,
            },
        ];
        let mirrored = prims
            .iter()
            .map(|p| match *p {
                Primitive::Box {
                    center,
                    half_extents,
                    albedo,
                } => Primitive::Box {
                    center: flip(center),
                    half_extents,
                    albedo,
                },
                Primitive::Cylinder {
                    center,
                    axis,
                    radius,
                    half_height,
                    albedo,
                } => Primitive::Cylinder {
                    center: flip(center),
                    axis: flip(axis),
                    radius,
                    half_height,
                    albedo,
                },
                ref s => s.clone(),
            })
            .collect();
        let cam = CameraIntrinsics::desk();
        let a = Scene { primitives: prims, mesh: None };
        let b = Scene { primitives: mirrored, mesh: None };
        let pa = Pose::look_at(Point3::new(3.0, 2.5, 1.0), Point3::origin());
        let pb = Pose::look_at(Point3::new(3.0, -2.5, 1.0), Point3::origin());
        let ia = render_frame(&a, &pa, &cam, &default_lights());
        let ib = render_frame(&b, &pb, &cam, &default_lights());
        assert!(ia.data.iter().any(|&p| p < 1.0));
        for v in 0..cam.height {
            for u in 0..cam.width {
                assert_eq!(ia.get(u, v), ib.get(cam.width - 1 - u, v), "({u}, {v})");
            }
        }
        assert_eq!(ia, render_frame(&a, &pa, &cam, &default_lights()));
    }
}
