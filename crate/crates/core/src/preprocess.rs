//! Laplacian phase unwrapping and spherical-mean-value background removal.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fft::{apply_real_multiplier, forward_in_place, inverse_in_place};
use crate::grid::{Axis, VolumeGrid};
use crate::morphology::{ball_offsets, mask_erode};
use crate::volume::ScalarVolume;

/// `|k|^2` in (cycles/mm)^2 for every lattice point, FFT order.
pub(crate) fn k_squared(grid: &VolumeGrid) -> Vec<f64> {
    let kx = grid.freq_axis(Axis::X);
    let ky = grid.freq_axis(Axis::Y);
    let kz = grid.freq_axis(Axis::Z);
    (0..grid.len())
        .map(|idx| {
            let [i, j, k] = grid.coords(idx);
            kx[i] * kx[i] + ky[j] * ky[j] + kz[k] * kz[k]
        })
        .collect()
}

/// Recovers continuous phase from wrapped phase through
/// `∇²φ = cos φ · ∇² sin φ − sin φ · ∇² cos φ`, solved spectrally.
///
/// The result has zero mean inside `mask` and is zero outside it.
pub fn laplacian_unwrap(wrapped: &ScalarVolume, mask: &ScalarVolume) -> Result<ScalarVolume> {
    mask.ensure_binary()?;
    wrapped.grid().ensure_compatible(mask.grid())?;
    let grid = *wrapped.grid();
    let k2 = k_squared(&grid);
    let laplacian: Vec<f64> = k2.iter().map(|&k| -4.0 * PI * PI * k).collect();
    let inverse_laplacian: Vec<f64> = laplacian
        .iter()
        .map(|&l| if l == 0.0 { 0.0 } else { 1.0 / l })
        .collect();

    let sin = wrapped.map(f64::sin);
    let cos = wrapped.map(f64::cos);
    let lap_sin = apply_real_multiplier(&sin, &laplacian);
    let lap_cos = apply_real_multiplier(&cos, &laplacian);
    let lap_phase: Vec<f64> = (0..grid.len())
        .map(|i| cos.data()[i] * lap_sin.data()[i] - sin.data()[i] * lap_cos.data()[i])
        .collect();
    let unwrapped = apply_real_multiplier(&ScalarVolume::new(grid, lap_phase)?, &inverse_laplacian);
    unwrapped.demeaned_in_mask(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmvConfig {
    pub radius_mm: f64,
    pub tsvd_threshold: f64,
}

impl Default for SmvConfig {
    fn default() -> Self {
        Self {
            radius_mm: 5.0,
            tsvd_threshold: 0.05,
        }
    }
}

impl SmvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_mm.is_finite() && self.radius_mm > 0.0) {
            return Err(invalid("smv radius_mm", format!("must be > 0, got {}", self.radius_mm)));
        }
        if !(self.tsvd_threshold > 0.0 && self.tsvd_threshold < 1.0) {
            return Err(invalid(
                "smv tsvd_threshold",
                format!("must be in (0, 1), got {}", self.tsvd_threshold),
            ));
        }
        Ok(())
    }
}

/// Spectrum of the unit-sum sphere of radius `radius_mm` rasterized on the grid.
/// The sphere is symmetric, so the spectrum is real; DC is exactly 1.
pub fn smv_kernel_spectrum(grid: &VolumeGrid, radius_mm: f64) -> Vec<f64> {
    let [nx, ny, nz] = grid.dims();
    let offsets = ball_offsets(grid, radius_mm);
    let weight = 1.0 / offsets.len() as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); grid.len()];
    for [dx, dy, dz] in offsets {
        let i = dx.rem_euclid(nx as i64) as usize;
        let j = dy.rem_euclid(ny as i64) as usize;
        let k = dz.rem_euclid(nz as i64) as usize;
        buf[grid.linear_index(i, j, k)].re += weight;
    }
    forward_in_place(grid, &mut buf);
    let mut s: Vec<f64> = buf.into_iter().map(|c| c.re).collect();
    s[0] = 1.0;
    s
}

/// SHARP-style background removal. Returns `(tissue_phase, reliable_mask)`, where
/// the reliable mask is `mask` eroded by the sphere radius.
pub fn smv_filter(
    phase: &ScalarVolume,
    mask: &ScalarVolume,
    cfg: &SmvConfig,
) -> Result<(ScalarVolume, ScalarVolume)> {
    cfg.validate()?;
    mask.ensure_binary()?;
    phase.grid().ensure_compatible(mask.grid())?;
    let grid = *phase.grid();

    let s = smv_kernel_spectrum(&grid, cfg.radius_mm);
    let high_pass: Vec<f64> = s.iter().map(|&v| 1.0 - v).collect();
    let deconv: Vec<f64> = high_pass
        .iter()
        .map(|&h| if h.abs() > cfg.tsvd_threshold { 1.0 / h } else { 0.0 })
        .collect();

    let filtered = apply_real_multiplier(phase, &high_pass);
    let reliable = mask_erode(mask, cfg.radius_mm)?;
    let mut buf: Vec<Complex64> = filtered
        .data()
        .iter()
        .zip(reliable.data())
        .map(|(&h, &m)| Complex64::new(h * m, 0.0))
        .collect();
    forward_in_place(&grid, &mut buf);
    for (c, &d) in buf.iter_mut().zip(&deconv) {
        *c *= d;
    }
    inverse_in_place(&grid, &mut buf);
    let tissue: Vec<f64> = buf
        .iter()
        .zip(reliable.data())
        .map(|(c, &m)| if m != 0.0 { c.re } else { 0.0 })
        .collect();
    Ok((ScalarVolume::new(grid, tissue)?, reliable))
}
