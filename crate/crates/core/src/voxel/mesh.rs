use std::fmt::Write as _;

use super::{VoxelError, VoxelGrid};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Validates indices and drops triangles that repeat a vertex.
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self, VoxelError> {
        let count = vertices.len();
        if let Some(&bad) = triangles.iter().flatten().find(|&&i| i >= count) {
            return Err(VoxelError::IndexOutOfRange {
                line: 0,
                index: bad as i64,
                count,
            });
        }
        let triangles = triangles
            .into_iter()
            .filter(|[a, b, c]| a != b && b != c && a != c)
            .collect();
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, n: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.triangles[n];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (
                [lo[0].min(v[0]), lo[1].min(v[1]), lo[2].min(v[2])],
                [hi[0].max(v[0]), hi[1].max(v[1]), hi[2].max(v[2])],
            )
        }))
    }

    /// Closed axis-aligned box with outward-wound faces.
    pub fn cuboid(lo: [f64; 3], hi: [f64; 3]) -> Self {
        let mut m = Self::default();
        m.push_cuboid(lo, hi);
        m
    }

    fn push_cuboid(&mut self, lo: [f64; 3], hi: [f64; 3]) {
        let base = self.vertices.len();
        for n in 0..8 {
            self.vertices.push([
                if n & 1 == 0 { lo[0] } else { hi[0] },
                if n & 2 == 0 { lo[1] } else { hi[1] },
                if n & 4 == 0 { lo[2] } else { hi[2] },
            ]);
        }
        const FACES: [[usize; 4]; 6] = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        for [a, b, c, d] in FACES {
            self.triangles.push([base + a, base + b, base + c]);
            self.triangles.push([base + a, base + c, base + d]);
        }
    }

    /// Latitude/longitude sphere with `rings` bands and `segments` meridians.
    pub fn uv_sphere(center: [f64; 3], radius: f64, segments: usize, rings: usize) -> Self {
        let segments = segments.max(3);
        let rings = rings.max(2);
        let mut vertices = vec![[center[0], center[1], center[2] + radius]];
        for r in 1..rings {
            let phi = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..segments {
                let theta = std::f64::consts::TAU * s as f64 / segments as f64;
                vertices.push([
                    center[0] + radius * phi.sin() * theta.cos(),
                    center[1] + radius * phi.sin() * theta.sin(),
                    center[2] + radius * phi.cos(),
                ]);
            }
        }
        vertices.push([center[0], center[1], center[2] - radius]);
        let south = vertices.len() - 1;
        let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
        let mut triangles = Vec::new();
        for s in 0..segments {
            triangles.push([0, ring(1, s), ring(1, s + 1)]);
            triangles.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b) = (ring(r, s), ring(r, s + 1));
                let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
        Self {
            vertices,
            triangles,
        }
    }
}

fn malformed(line: usize, msg: impl Into<String>) -> VoxelError {
    VoxelError::MalformedLine {
        line,
        msg: msg.into(),
    }
}

/// Reads `v` and `f` records from Wavefront OBJ text. Polygons are
/// fan-triangulated; texture/normal references and other records are ignored.
pub fn parse_obj(text: &str) -> Result<TriMesh, VoxelError> {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut triangles = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0f64; 3];
                for c in &mut xyz {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| malformed(line, "vertex needs three coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| malformed(line, format!("non-numeric coordinate {tok:?}")))?;
                    if !(*c).is_finite() {
                        return Err(malformed(line, "non-finite coordinate"));
                    }
                }
                vertices.push(xyz);
            }
            Some("f") => {
                let idx = tokens
                    .map(|tok| resolve_index(tok, vertices.len(), line))
                    .collect::<Result<Vec<_>, _>>()?;
                if idx.len() < 3 {
                    return Err(malformed(line, "face needs at least three vertices"));
                }
                for w in 1..idx.len() - 1 {
                    let tri = [idx[0], idx[w], idx[w + 1]];
                    if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                        triangles.push(tri);
                    }
                }
            }
            _ => {}
        }
    }
    // A document with no geometry at all (e.g. an exported empty grid) is an
    // empty mesh; vertices without any surviving face are an error.
    if triangles.is_empty() && !vertices.is_empty() {
        return Err(VoxelError::EmptyMesh);
    }
    Ok(TriMesh {
        vertices,
        triangles,
    })
}

fn resolve_index(tok: &str, count: usize, line: usize) -> Result<usize, VoxelError> {
    let head = tok.split('/').next().unwrap_or("");
    let raw: i64 = head
        .parse()
        .map_err(|_| malformed(line, format!("bad face index {tok:?}")))?;
    let resolved = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        -1
    };
    if resolved < 0 || resolved >= count as i64 {
        return Err(VoxelError::IndexOutOfRange {
            line,
            index: raw,
            count,
        });
    }
    Ok(resolved as usize)
}

/// Uniformly scales and translates so the longest bounding-box side is 1 and
/// the box is centered at `(0.5, 0.5, 0.5)`.
pub fn normalize_mesh(mesh: &TriMesh) -> Result<TriMesh, VoxelError> {
    let (lo, hi) = mesh.bounds().ok_or(VoxelError::EmptyMesh)?;
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(VoxelError::DegenerateExtent);
    }
    let scale = 1.0 / extent;
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| {
            [
                (v[0] - center[0]) * scale + 0.5,
                (v[1] - center[1]) * scale + 0.5,
                (v[2] - center[2]) * scale + 0.5,
            ]
        })
        .collect();
    Ok(TriMesh {
        vertices,
        triangles: mesh.triangles.clone(),
    })
}

/// Sub-cells per axis used when filling solids.
const FILL_SUPERSAMPLE: usize = 4;
/// Samples per cell length along each triangle edge.
const SAMPLES_PER_CELL: f64 = 4.0;

/// Marks every cell of a `res^3` lattice over the unit cube touched by a
/// point sample of some triangle.
fn mark_surface(mesh: &TriMesh, res: usize) -> Vec<bool> {
    let mut cells = vec![false; res.pow(3)];
    let scale = res as f64;
    let clamp = |x: f64| (x.floor().max(0.0) as usize).min(res - 1);
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(t);
        let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let bc = [c[0] - b[0], c[1] - b[1], c[2] - b[2]];
        let longest = [ab, ac, bc]
            .iter()
            .map(|e| (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt())
            .fold(0.0, f64::max);
        let steps = ((longest * scale * SAMPLES_PER_CELL).ceil() as usize).max(1);
        let inv = 1.0 / steps as f64;
        for u in 0..=steps {
            for v in 0..=steps - u {
                let (fu, fv) = (u as f64 * inv, v as f64 * inv);
                let p = [
                    a[0] + ab[0] * fu + ac[0] * fv,
                    a[1] + ab[1] * fu + ac[1] * fv,
                    a[2] + ab[2] * fu + ac[2] * fv,
                ];
                let (i, j, k) = (clamp(p[0] * scale), clamp(p[1] * scale), clamp(p[2] * scale));
                cells[(k * res + j) * res + i] = true;
            }
        }
    }
    cells
}

/// Cells reachable from the lattice boundary through unmarked cells (6-connected).
fn exterior(marked: &[bool], res: usize) -> Vec<bool> {
    let mut outside = vec![false; marked.len()];
    let mut stack = Vec::new();
    let idx = |i: usize, j: usize, k: usize| (k * res + j) * res + i;
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let on_boundary = [i, j, k].iter().any(|&c| c == 0 || c == res - 1);
                let n = idx(i, j, k);
                if on_boundary && !marked[n] && !outside[n] {
                    outside[n] = true;
                    stack.push((i, j, k));
                }
            }
        }
    }
    while let Some((i, j, k)) = stack.pop() {
        let mut visit = |i: usize, j: usize, k: usize| {
            let n = idx(i, j, k);
            if !marked[n] && !outside[n] {
                outside[n] = true;
                stack.push((i, j, k));
            }
        };
        if i > 0 {
            visit(i - 1, j, k);
        }
        if i + 1 < res {
            visit(i + 1, j, k);
        }
        if j > 0 {
            visit(i, j - 1, k);
        }
        if j + 1 < res {
            visit(i, j + 1, k);
        }
        if k > 0 {
            visit(i, j, k - 1);
        }
        if k + 1 < res {
            visit(i, j, k + 1);
        }
    }
    outside
}

/// Voxelizes a mesh that lies in the unit cube.
///
/// Without `fill_interior`, every cell touched by the surface is occupied.
/// With it, the solid is computed on a lattice `FILL_SUPERSAMPLE` times finer
/// (surface plus everything not reachable from the boundary) and a cell is
/// occupied when at least half of its sub-cells are solid.
pub fn voxelize(mesh: &TriMesh, resolution: usize, fill_interior: bool) -> Result<VoxelGrid, VoxelError> {
    if resolution == 0 {
        return Err(VoxelError::ResolutionZero);
    }
    if !fill_interior {
        let cells = mark_surface(mesh, resolution);
        return Ok(VoxelGrid::from_cells(resolution, cells).expect("lattice size"));
    }
    let s = FILL_SUPERSAMPLE;
    let fine = resolution * s;
    let surface = mark_surface(mesh, fine);
    let outside = exterior(&surface, fine);
    let mut counts = vec![0usize; resolution.pow(3)];
    for k in 0..fine {
        for j in 0..fine {
            for i in 0..fine {
                if !outside[(k * fine + j) * fine + i] {
                    counts[((k / s) * resolution + j / s) * resolution + i / s] += 1;
                }
            }
        }
    }
    let half = s.pow(3).div_ceil(2);
    let cells = counts.into_iter().map(|c| c >= half).collect();
    Ok(VoxelGrid::from_cells(resolution, cells).expect("lattice size"))
}

/// One closed cube (8 vertices, 12 triangles) per occupied voxel.
pub fn cubes_to_obj(grid: &VoxelGrid) -> String {
    let r = grid.resolution() as f64;
    let mut out = String::new();
    let _ = writeln!(out, "# {} occupied voxels at resolution {}", grid.count(), grid.resolution());
    let mut faces = String::new();
    for (n, (i, j, k)) in grid.occupied().enumerate() {
        let lo = [i as f64 / r, j as f64 / r, k as f64 / r];
        let hi = [(i + 1) as f64 / r, (j + 1) as f64 / r, (k + 1) as f64 / r];
        let cube = TriMesh::cuboid(lo, hi);
        for v in cube.vertices() {
            let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in cube.triangles() {
            let base = n * 8 + 1;
            let _ = writeln!(faces, "f {} {} {}", t[0] + base, t[1] + base, t[2] + base);
        }
    }
    out.push_str(&faces);
    out
}
