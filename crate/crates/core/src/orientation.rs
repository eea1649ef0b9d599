use serde::{Deserialize, Serialize};

use crate::error::{QsmError, Result};
use crate::volume::ScalarVolume;

const UNIT_TOLERANCE: f64 = 1e-9;

/// B0 direction expressed in the volume frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Orientation([f64; 3]);

impl Orientation {
    /// Accepts only vectors with unit norm (within 1e-9).
    pub fn new(b: [f64; 3]) -> Result<Self> {
        let norm = norm(b);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(QsmError::NonUnitOrientation(norm));
        }
        Ok(Self(b))
    }

    /// Rescales any non-zero finite vector to unit length.
    pub fn normalized(b: [f64; 3]) -> Result<Self> {
        let n = norm(b);
        if !(n.is_finite() && n > 0.0) {
            return Err(QsmError::NonUnitOrientation(n));
        }
        Ok(Self([b[0] / n, b[1] / n, b[2] / n]))
    }

    #[cfg(test)]
    pub(crate) fn unchecked(b: [f64; 3]) -> Self {
        Self(b)
    }

    pub fn x() -> Self {
        Self([1.0, 0.0, 0.0])
    }

    pub fn y() -> Self {
        Self([0.0, 1.0, 0.0])
    }

    pub fn z() -> Self {
        Self([0.0, 0.0, 1.0])
    }

    pub fn vector(&self) -> [f64; 3] {
        self.0
    }

    pub fn negated(&self) -> Self {
        Self([-self.0[0], -self.0[1], -self.0[2]])
    }

    /// Right-handed rotation about the x axis by `degrees`.
    pub fn rotated_about_x(&self, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let [x, y, z] = self.0;
        Self([x, c * y - s * z, s * y + c * z])
    }

    /// Right-handed rotation about the y axis by `degrees`.
    pub fn rotated_about_y(&self, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let [x, y, z] = self.0;
        Self([c * x + s * z, y, -s * x + c * z])
    }
}

impl TryFrom<[f64; 3]> for Orientation {
    type Error = QsmError;

    fn try_from(b: [f64; 3]) -> Result<Self> {
        Self::new(b)
    }
}

impl From<Orientation> for [f64; 3] {
    fn from(o: Orientation) -> Self {
        o.0
    }
}

fn norm(b: [f64; 3]) -> f64 {
    (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt()
}

/// Phase and magnitude acquired under one head orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationEntry {
    pub phase: ScalarVolume,
    pub magnitude: ScalarVolume,
    pub orientation: Orientation,
}

/// Co-registered multi-orientation data sharing one grid and one binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationDataset {
    entries: Vec<OrientationEntry>,
    mask: ScalarVolume,
}

impl OrientationDataset {
    pub fn new(entries: Vec<OrientationEntry>, mask: ScalarVolume) -> Result<Self> {
        if entries.is_empty() {
            return Err(QsmError::EmptyDataset);
        }
        mask.ensure_binary()?;
        let grid = *mask.grid();
        for e in &entries {
            grid.ensure_compatible(e.phase.grid())?;
            grid.ensure_compatible(e.magnitude.grid())?;
            if let Some(i) = e.magnitude.data().iter().position(|&m| m < 0.0) {
                return Err(QsmError::NegativeMagnitude(i));
            }
        }
        Ok(Self { entries, mask })
    }

    pub fn entries(&self) -> &[OrientationEntry] {
        &self.entries
    }

    pub fn mask(&self) -> &ScalarVolume {
        &self.mask
    }

    pub fn grid(&self) -> &crate::grid::VolumeGrid {
        self.mask.grid()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps the first `n` orientations.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.entries.iter().take(n).cloned().collect(), self.mask.clone())
    }

    /// Replaces every phase volume by `f(phase)`, keeping magnitudes and orientations.
    pub fn map_phases(&self, f: impl Fn(&ScalarVolume) -> ScalarVolume) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|e| OrientationEntry {
                phase: f(&e.phase),
                magnitude: e.magnitude.clone(),
                orientation: e.orientation,
            })
            .collect();
        Self::new(entries, self.mask.clone())
    }

    pub fn with_mask(&self, mask: ScalarVolume) -> Result<Self> {
        Self::new(self.entries.clone(), mask)
    }
}
