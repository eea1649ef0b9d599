use num_complex::Complex64;

use crate::error::{QsmError, Result};
use crate::grid::VolumeGrid;

/// Real-valued field on a grid, x-fastest linear order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    grid: VolumeGrid,
    data: Vec<f64>,
}

impl ScalarVolume {
    /// Builds a volume, rejecting wrong sample counts and non-finite samples.
    pub fn new(grid: VolumeGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(QsmError::SampleCount {
                expected: grid.len(),
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(QsmError::NonFinite(i));
        }
        Ok(Self { grid, data })
    }

    pub(crate) fn from_raw(grid: VolumeGrid, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self { grid, data }
    }

    pub fn zeros(grid: VolumeGrid) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn filled(grid: VolumeGrid, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self {
            grid,
            data: vec![value; grid.len()],
        }
    }

    /// Evaluates `f(i, j, k)` at every voxel. Panics if `f` returns a non-finite value.
    pub fn from_fn(grid: VolumeGrid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let data: Vec<f64> = (0..grid.len())
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                f(i, j, k)
            })
            .collect();
        assert!(data.iter().all(|v| v.is_finite()), "from_fn produced a non-finite sample");
        Self { grid, data }
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.linear_index(i, j, k)]
    }

    /// Panics if `f` yields a non-finite sample.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map produced a non-finite sample");
        Self::from_raw(self.grid, data)
    }

    /// Element-wise combination of two volumes on compatible grids.
    pub fn zip_map(&self, other: &ScalarVolume, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.ensure_compatible(&other.grid)?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(QsmError::NonFinite(i));
        }
        Ok(Self::from_raw(self.grid, data))
    }

    pub fn add(&self, other: &ScalarVolume) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarVolume) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarVolume) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn dot(&self, other: &ScalarVolume) -> Result<f64> {
        self.grid.ensure_compatible(&other.grid)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Errors unless every sample is exactly 0 or 1.
    pub fn ensure_binary(&self) -> Result<()> {
        match self
            .data
            .iter()
            .position(|&v| v != 0.0 && v != 1.0)
        {
            Some(index) => Err(QsmError::NonBinaryMask {
                index,
                value: self.data[index],
            }),
            None => Ok(()),
        }
    }

    /// Number of voxels with a non-zero sample.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Mean over voxels where `mask` is non-zero (0 for an empty mask).
    pub fn masked_mean(&self, mask: &ScalarVolume) -> Result<f64> {
        self.grid.ensure_compatible(&mask.grid)?;
        let (sum, n) = self
            .data
            .iter()
            .zip(&mask.data)
            .filter(|(_, &m)| m != 0.0)
            .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    /// Sets voxels outside `mask` to zero.
    pub fn masked(&self, mask: &ScalarVolume) -> Result<Self> {
        self.zip_map(mask, |v, m| if m != 0.0 { v } else { 0.0 })
    }

    /// Subtracts the in-mask mean and zeroes voxels outside the mask.
    pub fn demeaned_in_mask(&self, mask: &ScalarVolume) -> Result<Self> {
        let mean = self.masked_mean(mask)?;
        self.zip_map(mask, |v, m| if m != 0.0 { v - mean } else { 0.0 })
    }
}

/// Complex-valued field on a grid; used for k-space intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume {
    grid: VolumeGrid,
    data: Vec<Complex64>,
}

impl ComplexVolume {
    pub fn new(grid: VolumeGrid, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(QsmError::SampleCount {
                expected: grid.len(),
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(QsmError::NonFinite(i));
        }
        Ok(Self { grid, data })
    }

    pub(crate) fn from_raw(grid: VolumeGrid, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self { grid, data }
    }

    pub fn zeros(grid: VolumeGrid) -> Self {
        Self::from_raw(grid, vec![Complex64::new(0.0, 0.0); grid.len()])
    }

    pub fn from_real(v: &ScalarVolume) -> Self {
        Self::from_raw(
            v.grid,
            v.data.iter().map(|&re| Complex64::new(re, 0.0)).collect(),
        )
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn real(&self) -> ScalarVolume {
        ScalarVolume::from_raw(self.grid, self.data.iter().map(|c| c.re).collect())
    }

    pub fn imag(&self) -> ScalarVolume {
        ScalarVolume::from_raw(self.grid, self.data.iter().map(|c| c.im).collect())
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Multiplies every sample by the matching real value of `weights`.
    pub fn mul_real(&self, weights: &ScalarVolume) -> Result<Self> {
        self.grid.ensure_compatible(&weights.grid)?;
        Ok(Self::from_raw(
            self.grid,
            self.data
                .iter()
                .zip(&weights.data)
                .map(|(c, &w)| c * w)
                .collect(),
        ))
    }
}
