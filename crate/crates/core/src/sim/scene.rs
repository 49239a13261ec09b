use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::voxel::{normalize_mesh, parse_obj, voxelize, TriMesh, VoxelGrid};

const HIT_EPS: f64 = 1e-9;

fn default_albedo() -> f64 {
    0.8
}

/// Solid primitive in world coordinates (metres, object near the origin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default = "default_albedo")]
        albedo: f64,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default = "default_albedo")]
        albedo: f64,
    },
    Cylinder {
        center: [f64; 3],
        axis: [f64; 3],
        radius: f64,
        half_height: f64,
        #[serde(default = "default_albedo")]
        albedo: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Unit normal facing the incoming ray.
    pub normal: Vector3<f64>,
    pub albedo: f64,
}

fn v(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Smallest root of `a t^2 + b t + c` above `HIT_EPS`.
fn nearest_root(a: f64, b: f64, c: f64) -> Option<f64> {
    let disc = b * b - 4.0 * a * c;
    if a == 0.0 || disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // numerically stable pair
    let q = -0.5 * (b + b.signum() * s);
    let (mut t0, mut t1) = (q / a, if q != 0.0 { c / q } else { q / a });
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    [t0, t1].into_iter().find(|&t| t > HIT_EPS)
}

impl Primitive {
    pub fn albedo(&self) -> f64 {
        match *self {
            Primitive::Sphere { albedo, .. } | Primitive::Box { albedo, .. } | Primitive::Cylinder { albedo, .. } => {
                albedo
            }
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = match self {
            Primitive::Sphere { radius, .. } => *radius > 0.0,
            Primitive::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            Primitive::Cylinder {
                axis,
                radius,
                half_height,
                ..
            } => *radius > 0.0 && *half_height > 0.0 && v(*axis).norm() > 0.0,
        };
        let a = self.albedo();
        if ok && (0.0..=1.0).contains(&a) {
            Ok(())
        } else {
            Err(SimError::InvalidScene(format!("bad primitive {self:?}")))
        }
    }

    pub fn contains(&self, p: Point3<f64>) -> bool {
        match self {
            Primitive::Sphere { center, radius, .. } => (p.coords - v(*center)).norm_squared() <= radius * radius,
            Primitive::Box {
                center, half_extents, ..
            } => (0..3).all(|a| (p[a] - center[a]).abs() <= half_extents[a]),
            Primitive::Cylinder {
                center,
                axis,
                radius,
                half_height,
                ..
            } => {
                let a = v(*axis).normalize();
                let d = p.coords - v(*center);
                let along = d.dot(&a);
                along.abs() <= *half_height && (d - a * along).norm_squared() <= radius * radius
            }
        }
    }

    /// First intersection with the ray `o + t d` for `t > 0`.
    pub fn intersect(&self, o: Point3<f64>, d: Vector3<f64>) -> Option<Hit> {
        let albedo = self.albedo();
        let (t, normal) = match self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = o.coords - v(*center);
                let t = nearest_root(d.dot(&d), 2.0 * oc.dot(&d), oc.dot(&oc) - radius * radius)?;
                (t, (oc + d * t) / *radius)
            }
            Primitive::Box {
                center, half_extents, ..
            } => {
                let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis_near = 0;
                for a in 0..3 {
                    let rel = o[a] - center[a];
                    if d[a] == 0.0 {
                        if rel.abs() > half_extents[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-half_extents[a] - rel) / d[a];
                    let t2 = (half_extents[a] - rel) / d[a];
                    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                    if lo > t_near {
                        t_near = lo;
                        axis_near = a;
                    }
                    t_far = t_far.min(hi);
                }
                if t_near > t_far || t_far <= HIT_EPS {
                    return None;
                }
                if t_near > HIT_EPS {
                    let mut n = Vector3::zeros();
                    n[axis_near] = -d[axis_near].signum();
                    (t_near, n)
                } else {
                    // origin inside the box: report the exit face
                    let p = o.coords + d * t_far - v(*center);
                    let a = (0..3)
                        .max_by(|&i, &j| {
                            (p[i].abs() / half_extents[i]).total_cmp(&(p[j].abs() / half_extents[j]))
                        })
                        .unwrap_or(0);
                    let mut n = Vector3::zeros();
                    n[a] = -d[a].signum();
                    (t_far, n)
                }
            }
            Primitive::Cylinder {
                center,
                axis,
                radius,
                half_height,
                ..
            } => {
                let a = v(*axis).normalize();
                let oc = o.coords - v(*center);
                let (o_par, d_par) = (oc.dot(&a), d.dot(&a));
                let (o_perp, d_perp) = (oc - a * o_par, d - a * d_par);
                let mut best: Option<(f64, Vector3<f64>)> = None;
                let mut consider = |t: f64, n: Vector3<f64>| {
                    if t > HIT_EPS && best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, n));
                    }
                };
                let qa = d_perp.dot(&d_perp);
                let (qb, qc) = (2.0 * o_perp.dot(&d_perp), o_perp.dot(&o_perp) - radius * radius);
                let disc = qb * qb - 4.0 * qa * qc;
                if qa > 0.0 && disc >= 0.0 {
                    let s = disc.sqrt();
                    for t in [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)] {
                        if (o_par + t * d_par).abs() <= *half_height {
                            consider(t, (o_perp + d_perp * t) / *radius);
                        }
                    }
                }
                if d_par != 0.0 {
                    for side in [-1.0, 1.0] {
                        let t = (side * half_height - o_par) / d_par;
                        if (o_perp + d_perp * t).norm_squared() <= radius * radius {
                            consider(t, a * side);
                        }
                    }
                }
                best?
            }
        };
        let normal = if normal.dot(&d) > 0.0 { -normal } else { normal };
        Some(Hit { t, normal, albedo })
    }
}

/// Triangle mesh placed in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMesh {
    /// Normalized into the unit cube `[0, 1]^3`.
    pub normalized: TriMesh,
    pub albedo: f64,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl SceneMesh {
    /// Normalizes `mesh` and centres it on the origin.
    pub fn new(mesh: &TriMesh, albedo: f64) -> Result<Self, SimError> {
        let normalized = normalize_mesh(mesh)?;
        let (lo, hi) = normalized.bounds().expect("normalized mesh has vertices");
        Ok(Self {
            normalized,
            albedo,
            lo: v(lo).add_scalar(-0.5),
            hi: v(hi).add_scalar(-0.5),
        })
    }

    fn hits_bounds(&self, o: Point3<f64>, d: Vector3<f64>) -> bool {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            let inv = 1.0 / d[a];
            let (mut lo, mut hi) = ((self.lo[a] - 1e-9 - o[a]) * inv, (self.hi[a] + 1e-9 - o[a]) * inv);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        t0 <= t1 && t1 > 0.0
    }

    /// Nearest triangle hit (Moller-Trumbore), two-sided.
    pub fn intersect(&self, o: Point3<f64>, d: Vector3<f64>) -> Option<Hit> {
        if !self.hits_bounds(o, d) {
            return None;
        }
        let mut best: Option<(f64, Vector3<f64>)> = None;
        for n in 0..self.normalized.triangles().len() {
            let [a, b, c] = self.normalized.triangle(n).map(|p| v(p).add_scalar(-0.5));
            let (e1, e2) = (b - a, c - a);
            let pv = d.cross(&e2);
            let det = e1.dot(&pv);
            if det.abs() < 1e-14 {
                continue;
            }
            let inv = 1.0 / det;
            let tv = o.coords - a;
            let u = tv.dot(&pv) * inv;
            if !(0.0..=1.0).contains(&u) {
                continue;
            }
            let qv = tv.cross(&e1);
            let w = d.dot(&qv) * inv;
            if w < 0.0 || u + w > 1.0 {
                continue;
            }
            let t = e2.dot(&qv) * inv;
            if t > HIT_EPS && best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, e1.cross(&e2)));
            }
        }
        let (t, n) = best?;
        let n = n.normalize();
        let normal = if n.dot(&d) > 0.0 { -n } else { n };
        Some(Hit {
            t,
            normal,
            albedo: self.albedo,
        })
    }
}

/// Union of primitives, optionally with one imported mesh.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub mesh: Option<SceneMesh>,
}

impl Scene {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn intersect(&self, o: Point3<f64>, d: Vector3<f64>) -> Option<Hit> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(o, d))
            .chain(self.mesh.as_ref().and_then(|m| m.intersect(o, d)))
            .min_by(|a, b| a.t.total_cmp(&b.t))
    }

    /// Occupancy of the cube `[-0.5, 0.5]^3` at `resolution^3`: cell centres
    /// tested against the primitives, unioned with the voxelized mesh.
    pub fn label(&self, resolution: usize) -> Result<VoxelGrid, SimError> {
        let mut grid = match &self.mesh {
            Some(m) => voxelize(&m.normalized, resolution, true)?,
            None if resolution == 0 => return Err(SimError::Voxel(crate::voxel::VoxelError::ResolutionZero)),
            None => VoxelGrid::empty(resolution),
        };
        let r = resolution as f64;
        let c = |i: usize| (i as f64 + 0.5) / r - 0.5;
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    let p = Point3::new(c(i), c(j), c(k));
                    if self.primitives.iter().any(|s| s.contains(p)) {
                        grid.set(i, j, k, true);
                    }
                }
            }
        }
        Ok(grid)
    }

    /// Builds a scene from its JSON description; mesh paths resolve against `base`.
    pub fn from_spec(spec: &SceneSpec, base: &Path) -> Result<Self, SimError> {
        for p in &spec.primitives {
            p.validate()?;
        }
        let mesh = match &spec.mesh {
            None => None,
            Some(m) => {
                let path = base.join(&m.path);
                let text = std::fs::read_to_string(&path).map_err(|source| SimError::Io { path: path.clone(), source })?;
                Some(SceneMesh::new(&parse_obj(&text)?, m.albedo)?)
            }
        };
        Ok(Self {
            primitives: spec.primitives.clone(),
            mesh,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub path: String,
    #[serde(default = "default_albedo")]
    pub albedo: f64,
}

/// JSON form of a scene.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub mesh: Option<MeshSpec>,
}

pub const CATEGORIES: [&str; 4] = ["sphere", "box", "cylinder", "compound"];

/// Draws a procedural scene inside the unit-diameter region around the origin.
pub fn random_scene(seed: u64) -> SceneSpec {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let category = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
    let albedo = rng.gen_range(0.6..0.9);
    let jitter = |rng: &mut Xoshiro256PlusPlus, s: f64| [0, 1, 2].map(|_| rng.gen_range(-s..s));
    let sphere = |rng: &mut Xoshiro256PlusPlus, jit: [f64; 3]| {
        let radius = rng.gen_range(0.2..0.4);
        let room = 0.5 - radius;
        Primitive::Sphere {
            center: jit.map(|c| c.clamp(-room, room)),
            radius,
            albedo,
        }
    };
    let boxed = |rng: &mut Xoshiro256PlusPlus, jit: [f64; 3]| {
        let half_extents = [0, 1, 2].map(|_| rng.gen_range(0.12..0.35));
        Primitive::Box {
            center: [0, 1, 2].map(|a| jit[a].clamp(half_extents[a] - 0.5, 0.5 - half_extents[a])),
            half_extents,
            albedo,
        }
    };
    let primitives = match category {
        "sphere" => {
            let j = jitter(&mut rng, 0.1);
            vec![sphere(&mut rng, j)]
        }
        "box" => {
            let j = jitter(&mut rng, 0.1);
            vec![boxed(&mut rng, j)]
        }
        "cylinder" => {
            let axis = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 1.0];
            let radius = rng.gen_range(0.15..0.3);
            // keep the whole solid inside a sphere of radius 0.5
            let half_height = (0.25f64 - radius * radius).sqrt() * rng.gen_range(0.7..0.95);
            vec![Primitive::Cylinder {
                center: [0.0; 3],
                axis,
                radius,
                half_height,
                albedo,
            }]
        }
        _ => {
            let j1 = jitter(&mut rng, 0.15);
            let j2 = jitter(&mut rng, 0.15);
            vec![boxed(&mut rng, j1), sphere(&mut rng, j2)]
        }
    };
    SceneSpec {
        category: Some(category.to_string()),
        primitives,
        mesh: None,
    }
}
