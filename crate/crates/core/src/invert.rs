//! Closed-form linear dipole inversions: truncated k-space division, COSMOS,
//! and gradient-penalized L2.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dipole::{dipole_kernel, DipoleKernel};
use crate::error::{invalid, Result};
use crate::fft::{apply_real_multiplier, forward_in_place, inverse_in_place};
use crate::grid::VolumeGrid;
use crate::orientation::OrientationDataset;
use crate::volume::ScalarVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TkdConfig {
    pub delta: f64,
}

impl Default for TkdConfig {
    fn default() -> Self {
        Self { delta: 0.2 }
    }
}

impl TkdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta > 0.0 && self.delta <= 2.0 / 3.0 {
            Ok(())
        } else {
            Err(invalid("tkd delta", format!("must be in (0, 2/3], got {}", self.delta)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CosmosConfig {
    /// Minimum combined kernel energy `Σ_r d_r²` for a k-space point to be inverted.
    pub eps: f64,
}

impl Default for CosmosConfig {
    fn default() -> Self {
        Self { eps: 1e-6 }
    }
}

impl CosmosConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_finite() && self.eps > 0.0 {
            Ok(())
        } else {
            Err(invalid("cosmos eps", format!("must be > 0, got {}", self.eps)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct L2Config {
    pub lambda: f64,
}

impl Default for L2Config {
    fn default() -> Self {
        Self { lambda: 0.01 }
    }
}

impl L2Config {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_finite() && self.lambda >= 0.0 {
            Ok(())
        } else {
            Err(invalid("l2 lambda", format!("must be >= 0, got {}", self.lambda)))
        }
    }
}

/// Truncated inverse of one kernel value. `sgn(0)` is taken as 0.
pub fn tkd_multiplier(d: f64, delta: f64) -> f64 {
    if d.abs() > delta {
        1.0 / d
    } else if d == 0.0 {
        0.0
    } else {
        d.signum() / delta
    }
}

pub fn tkd(phase: &ScalarVolume, kernel: &DipoleKernel, cfg: &TkdConfig) -> Result<ScalarVolume> {
    cfg.validate()?;
    kernel.grid().ensure_compatible(phase.grid())?;
    let multiplier: Vec<f64> = kernel
        .values()
        .data()
        .iter()
        .map(|&d| tkd_multiplier(d, cfg.delta))
        .collect();
    Ok(apply_real_multiplier(phase, &multiplier))
}

/// Per-k least squares over all orientations; points with `Σ d_r² <= eps` are set to 0.
pub fn cosmos(dataset: &OrientationDataset, cfg: &CosmosConfig) -> Result<ScalarVolume> {
    cfg.validate()?;
    let grid = *dataset.grid();
    let mut numerator = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut energy = vec![0.0; grid.len()];
    for entry in dataset.entries() {
        let kernel = dipole_kernel(&grid, &entry.orientation)?;
        let mut spectrum: Vec<Complex64> = entry
            .phase
            .data()
            .iter()
            .map(|&p| Complex64::new(p, 0.0))
            .collect();
        forward_in_place(&grid, &mut spectrum);
        for ((num, e), (&d, s)) in numerator
            .iter_mut()
            .zip(energy.iter_mut())
            .zip(kernel.values().data().iter().zip(&spectrum))
        {
            *num += s * d;
            *e += d * d;
        }
    }
    for (num, &e) in numerator.iter_mut().zip(&energy) {
        *num = if e > cfg.eps { *num / e } else { Complex64::new(0.0, 0.0) };
    }
    inverse_in_place(&grid, &mut numerator);
    ScalarVolume::new(grid, numerator.into_iter().map(|c| c.re).collect())
}

/// Fourier symbol of the squared forward-difference gradient:
/// `E(k) = Σ_i |1 − exp(−2πi n_i / N_i)|²`.
pub fn gradient_penalty_symbol(grid: &VolumeGrid) -> Vec<f64> {
    let dims = grid.dims();
    let axis_terms: Vec<Vec<f64>> = dims
        .iter()
        .map(|&n| {
            (0..n)
                .map(|i| {
                    let s = (PI * i as f64 / n as f64).sin();
                    4.0 * s * s
                })
                .collect()
        })
        .collect();
    (0..grid.len())
        .map(|idx| {
            let [i, j, k] = grid.coords(idx);
            axis_terms[0][i] + axis_terms[1][j] + axis_terms[2][k]
        })
        .collect()
}

/// L2 multiplier for one k-point; zero where both the kernel and the penalty vanish.
pub fn l2_multiplier(d: f64, penalty: f64, lambda: f64) -> f64 {
    let denom = d * d + lambda * penalty;
    if denom == 0.0 {
        0.0
    } else {
        d / denom
    }
}

pub fn l2_closedform(phase: &ScalarVolume, kernel: &DipoleKernel, cfg: &L2Config) -> Result<ScalarVolume> {
    cfg.validate()?;
    kernel.grid().ensure_compatible(phase.grid())?;
    let penalty = gradient_penalty_symbol(kernel.grid());
    let multiplier: Vec<f64> = kernel
        .values()
        .data()
        .iter()
        .zip(&penalty)
        .map(|(&d, &e)| l2_multiplier(d, e, cfg.lambda))
        .collect();
    Ok(apply_real_multiplier(phase, &multiplier))
}
