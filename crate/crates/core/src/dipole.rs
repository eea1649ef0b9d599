//! Unit dipole kernel `d(k) = 1/3 - (k·b)^2 / |k|^2` and the field operator it defines.

use crate::error::{QsmError, Result};
use crate::fft::apply_real_multiplier;
use crate::grid::{Axis, VolumeGrid};
use crate::orientation::Orientation;
use crate::volume::ScalarVolume;

/// Dipole kernel sampled on a grid in FFT order. The DC value is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleKernel {
    values: ScalarVolume,
    orientation: Orientation,
}

impl DipoleKernel {
    pub fn grid(&self) -> &VolumeGrid {
        self.values.grid()
    }

    pub fn values(&self) -> &ScalarVolume {
        &self.values
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// Applies the kernel as a k-space multiplier to `v`.
    pub fn apply(&self, v: &ScalarVolume) -> Result<ScalarVolume> {
        self.grid().ensure_compatible(v.grid())?;
        Ok(apply_real_multiplier(v, self.values.data()))
    }
}

/// `d(k) = 1/3 − (k·b)²/|k|²` at physical frequencies `k` (cycles/mm), with `d(0) = 0`.
/// Components on the Nyquist bin of an even-length axis are sign-averaged.
pub fn dipole_kernel(grid: &VolumeGrid, orientation: &Orientation) -> Result<DipoleKernel> {
    let b = orientation.vector();
    let n = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(QsmError::NonUnitOrientation(n));
    }
    let dims = grid.dims();
    let axes = [Axis::X, Axis::Y, Axis::Z].map(|a| grid.freq_axis(a));
    let nyquist = |a: usize, i: usize| dims[a].is_multiple_of(2) && i == dims[a] / 2;
    let values = ScalarVolume::from_fn(*grid, |i, j, k| {
        let idx = [i, j, k];
        let kv = [axes[0][i], axes[1][j], axes[2][k]];
        let k2 = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
        if k2 == 0.0 {
            return 0.0;
        }
        // On even-length axes ±N/2 alias to one bin; averaging (k·b)² over both signs
        // keeps the kernel even. The cross terms with those components cancel.
        let mut regular = 0.0;
        let mut aliased = 0.0;
        for a in 0..3 {
            let p = kv[a] * b[a];
            if nyquist(a, idx[a]) {
                aliased += p * p;
            } else {
                regular += p;
            }
        }
        1.0 / 3.0 - (regular * regular + aliased) / k2
    });
    Ok(DipoleKernel {
        values,
        orientation: *orientation,
    })
}

/// Field produced by susceptibility `chi`: real part of `ifft3(d ⊙ fft3(chi))`.
pub fn forward_field(chi: &ScalarVolume, kernel: &DipoleKernel) -> Result<ScalarVolume> {
    kernel.apply(chi)
}

/// Transpose of [`forward_field`]. The kernel is real and even, so this is the same operator.
pub fn adjoint_field(phi: &ScalarVolume, kernel: &DipoleKernel) -> Result<ScalarVolume> {
    kernel.apply(phi)
}
