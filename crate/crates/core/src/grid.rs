use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{QsmError, Result};

/// Spatial axis of a volume. `X` is the fastest-varying axis in linear order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(format!("unknown axis `{other}` (expected x, y or z)")),
        }
    }
}

/// Sampling lattice shared by all volumes: extents in voxels and voxel size in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(QsmError::InvalidGrid(format!(
                "every extent must be >= 1, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(QsmError::InvalidGrid(format!(
                "every spacing must be finite and > 0, got {spacing:?}"
            )));
        }
        Ok(Self { dims, spacing })
    }

    /// Cube with isotropic spacing.
    pub fn cube(n: usize, spacing: f64) -> Result<Self> {
        Self::new([n; 3], [spacing; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_compatible(&self, other: &VolumeGrid) -> bool {
        self == other
    }

    pub fn ensure_compatible(&self, other: &VolumeGrid) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(QsmError::GridMismatch {
                left: *self,
                right: *other,
            })
        }
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Physical frequency (cycles/mm) of FFT bin `index` along `axis`.
    pub fn freq_coord(&self, axis: Axis, index: usize) -> Result<f64> {
        let a = axis.index();
        let n = self.dims[a];
        if index >= n {
            return Err(QsmError::IndexOutOfRange { index, len: n });
        }
        Ok(signed_index(index, n) as f64 / (n as f64 * self.spacing[a]))
    }

    /// All frequencies along one axis, in FFT order.
    pub fn freq_axis(&self, axis: Axis) -> Vec<f64> {
        let a = axis.index();
        let n = self.dims[a];
        (0..n)
            .map(|i| signed_index(i, n) as f64 / (n as f64 * self.spacing[a]))
            .collect()
    }

    /// Linear index of the point mirrored through the origin in FFT order.
    #[inline]
    pub fn mirror_index(&self, idx: usize) -> usize {
        let [i, j, k] = self.coords(idx);
        let [nx, ny, nz] = self.dims;
        self.linear_index((nx - i) % nx, (ny - j) % ny, (nz - k) % nz)
    }
}

impl fmt::Display for VolumeGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [nx, ny, nz] = self.dims;
        let [dx, dy, dz] = self.spacing;
        write!(f, "{nx}x{ny}x{nz} @ {dx}x{dy}x{dz} mm")
    }
}

/// FFT-ordered signed index: `index` below ceil(n/2), else `index - n`.
#[inline]
pub fn signed_index(index: usize, n: usize) -> i64 {
    if index < n.div_ceil(2) {
        index as i64
    } else {
        index as i64 - n as i64
    }
}

/// Free-function form of [`VolumeGrid::freq_coord`].
pub fn freq_coords(grid: &VolumeGrid, axis: Axis, index: usize) -> Result<f64> {
    grid.freq_coord(axis, index)
}
