use std::collections::HashMap;

use super::{binarize, ProbGrid, VoxelError, VoxelGrid};
use crate::par;

/// Intersection over union of `binarize(pred, t)` and `gt`.
/// Two empty sets score 1.
pub fn iou(pred: &ProbGrid, gt: &VoxelGrid, t: f64) -> Result<f64, VoxelError> {
    if pred.resolution() != gt.resolution() {
        return Err(VoxelError::ResolutionMismatch(pred.resolution(), gt.resolution()));
    }
    let b = binarize(pred, t)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in b.cells().iter().zip(gt.cells()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    points: Vec<[f64; 3]>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Option<Self> {
        points
            .iter()
            .flatten()
            .all(|c| (0.0..=1.0).contains(c))
            .then_some(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Centers of occupied cells, in storage order.
pub fn voxel_to_points(grid: &VoxelGrid) -> PointSet {
    let r = grid.resolution() as f64;
    PointSet {
        points: grid
            .occupied()
            .map(|(i, j, k)| [(i as f64 + 0.5) / r, (j as f64 + 0.5) / r, (k as f64 + 0.5) / r])
            .collect(),
    }
}

/// Uniform bucket grid with cell size `d`; a point within `d` of a query lies
/// in one of the 27 buckets around it.
struct Buckets<'a> {
    d: f64,
    map: HashMap<[i64; 3], Vec<&'a [f64; 3]>>,
}

impl<'a> Buckets<'a> {
    fn new(points: &'a [[f64; 3]], d: f64) -> Self {
        let mut map: HashMap<[i64; 3], Vec<&[f64; 3]>> = HashMap::new();
        for p in points {
            map.entry(Self::key(p, d)).or_default().push(p);
        }
        Self { d, map }
    }

    fn key(p: &[f64; 3], d: f64) -> [i64; 3] {
        [
            (p[0] / d).floor() as i64,
            (p[1] / d).floor() as i64,
            (p[2] / d).floor() as i64,
        ]
    }

    fn any_within(&self, q: &[f64; 3]) -> bool {
        let [a, b, c] = Self::key(q, self.d);
        for da in -1..=1 {
            for db in -1..=1 {
                for dc in -1..=1 {
                    if let Some(bucket) = self.map.get(&[a + da, b + db, c + dc]) {
                        let hit = bucket.iter().any(|p| {
                            let dx = p[0] - q[0];
                            let dy = p[1] - q[1];
                            let dz = p[2] - q[2];
                            (dx * dx + dy * dy + dz * dz).sqrt() < self.d
                        });
                        if hit {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

fn fraction_within(from: &[[f64; 3]], to: &Buckets<'_>) -> f64 {
    let hits = par::map_slice(from, |q| to.any_within(q) as usize);
    hits.iter().sum::<usize>() as f64 / from.len() as f64
}

/// F-Score at distance `d`: harmonic mean of the fraction of reconstructed
/// points near the ground truth and the fraction of ground-truth points near
/// the reconstruction. Empty/empty scores 1; exactly one empty set scores 0.
pub fn fscore(rec: &PointSet, gt: &PointSet, d: f64) -> Result<f64, VoxelError> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(VoxelError::NonPositiveDistance(d));
    }
    match (rec.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let precision = fraction_within(&rec.points, &Buckets::new(&gt.points, d));
    let recall = fraction_within(&gt.points, &Buckets::new(&rec.points, d));
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}
