use std::io::{Read, Write};

use super::VoxelError;
use crate::events::{pack_bits, unpack_bits};

/// Binary occupancy over an `R^3` lattice, x fastest then y then z.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    resolution: usize,
    cells: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(resolution: usize) -> Self {
        Self {
            resolution,
            cells: vec![false; resolution.pow(3)],
        }
    }

    pub fn full(resolution: usize) -> Self {
        Self {
            resolution,
            cells: vec![true; resolution.pow(3)],
        }
    }

    pub fn from_cells(resolution: usize, cells: Vec<bool>) -> Option<Self> {
        (cells.len() == resolution.pow(3)).then_some(Self { resolution, cells })
    }

    pub fn from_fn(resolution: usize, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(resolution.pow(3));
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    cells.push(f(i, j, k));
                }
            }
        }
        Self { resolution, cells }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.cells[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.index(i, j, k);
        self.cells[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    /// Occupied cells as `(i, j, k)` in storage order.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let r = self.resolution;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(move |(n, _)| (n % r, (n / r) % r, n / (r * r)))
    }
}

/// Per-cell occupancy probabilities, same layout as [`VoxelGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrid {
    resolution: usize,
    values: Vec<f64>,
}

impl ProbGrid {
    pub fn new(resolution: usize, values: Vec<f64>) -> Result<Self, VoxelError> {
        if values.len() != resolution.pow(3) {
            return Err(VoxelError::Format(format!(
                "{} values for resolution {resolution}",
                values.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(VoxelError::ProbabilityOutOfRange(bad));
        }
        Ok(Self { resolution, values })
    }

    pub fn filled(resolution: usize, value: f64) -> Result<Self, VoxelError> {
        Self::new(resolution, vec![value; resolution.pow(3)])
    }

    /// Probability 1 where `grid` is occupied, 0 elsewhere.
    pub fn from_voxels(grid: &VoxelGrid) -> Self {
        Self {
            resolution: grid.resolution(),
            values: grid.cells().iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub(super) fn check_threshold(t: f64) -> Result<(), VoxelError> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(VoxelError::ThresholdOutOfRange(t))
    }
}

/// Occupied iff `p > t` (strict).
pub fn binarize(p: &ProbGrid, t: f64) -> Result<VoxelGrid, VoxelError> {
    check_threshold(t)?;
    Ok(VoxelGrid {
        resolution: p.resolution,
        cells: p.values.iter().map(|&v| v > t).collect(),
    })
}

pub const VOX_MAGIC: &[u8; 8] = b"E2VVOX1\0";

/// `VOX1` layout: magic, u16 resolution, then `R^3` bits packed little-endian.
pub fn write_voxels<W: Write>(grid: &VoxelGrid, mut out: W) -> Result<(), VoxelError> {
    let r = u16::try_from(grid.resolution)
        .map_err(|_| VoxelError::Format("resolution exceeds u16".into()))?;
    let cells: Vec<u8> = grid.cells.iter().map(|&c| c as u8).collect();
    let mut buf = Vec::with_capacity(10 + cells.len() / 8 + 1);
    buf.extend_from_slice(VOX_MAGIC);
    buf.extend_from_slice(&r.to_le_bytes());
    buf.extend_from_slice(&pack_bits(&cells));
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_voxels<R: Read>(mut input: R) -> Result<VoxelGrid, VoxelError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 10 || &bytes[..8] != VOX_MAGIC {
        return Err(VoxelError::Format("bad magic".into()));
    }
    let r = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let n = r.pow(3);
    if bytes.len() - 10 != n.div_ceil(8) {
        return Err(VoxelError::Format(format!(
            "expected {} payload bytes for R={r}, found {}",
            n.div_ceil(8),
            bytes.len() - 10
        )));
    }
    let cells = unpack_bits(&bytes[10..], n).into_iter().map(|b| b != 0).collect();
    Ok(VoxelGrid {
        resolution: r,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binarize_rules() {
        let p = ProbGrid::filled(2, 0.9).unwrap();
        assert_eq!(binarize(&p, 0.3).unwrap().count(), 8);
        let p = ProbGrid::filled(2, 0.3).unwrap();
        assert_eq!(binarize(&p, 0.3).unwrap().count(), 0);
        assert!(matches!(
            binarize(&p, 1.0),
            Err(VoxelError::ThresholdOutOfRange(_))
        ));
        assert!(matches!(
            binarize(&p, 0.0),
            Err(VoxelError::ThresholdOutOfRange(_))
        ));
    }

    #[test]
    fn prob_grid_rejects_out_of_range() {
        assert!(ProbGrid::new(1, vec![1.5]).is_err());
        assert!(ProbGrid::new(1, vec![f64::NAN]).is_err());
        assert!(ProbGrid::new(2, vec![0.5]).is_err());
    }

    #[test]
    fn vox_layout_is_x_fastest() {
        let mut g = VoxelGrid::empty(2);
        g.set(1, 0, 0, true);
        g.set(0, 0, 1, true);
        let mut buf = Vec::new();
        write_voxels(&g, &mut buf).unwrap();
        assert_eq!(&buf[..8], VOX_MAGIC);
        assert_eq!(&buf[8..10], &[2, 0]);
        assert_eq!(buf[10], 0b0001_0010);
        assert_eq!(buf.len(), 11);
    }

    #[test]
    fn vox_reader_rejects_bad_length() {
        let mut buf = Vec::new();
        write_voxels(&VoxelGrid::full(3), &mut buf).unwrap();
        buf.push(0);
        assert!(read_voxels(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn binarize_matches_loop(vals in proptest::collection::vec(0.0f64..=1.0, 512), t in 0.01f64..0.99) {
            let p = ProbGrid::new(8, vals.clone()).unwrap();
            let b = binarize(&p, t).unwrap();
            for k in 0..8 { for j in 0..8 { for i in 0..8 {
                let v = vals[i + 8 * j + 64 * k];
                prop_assert_eq!(b.get(i, j, k), v > t);
            }}}
        }

        #[test]
        fn vox_round_trip(r in 1usize..7, seed in any::<u64>()) {
            let g = VoxelGrid::from_fn(r, |i, j, k| (seed >> ((i + 3 * j + 5 * k) % 64)) & 1 == 1);
            let mut buf = Vec::new();
            write_voxels(&g, &mut buf).unwrap();
            prop_assert_eq!(read_voxels(&buf[..]).unwrap(), g);
        }
    }
}
