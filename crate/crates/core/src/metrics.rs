//! Reconstruction quality measures, all evaluated inside a mask.

use serde::{Deserialize, Serialize};

use crate::dipole::{dipole_kernel, forward_field};
use crate::error::{invalid, QsmError, Result};
use crate::orientation::OrientationDataset;
use crate::volume::ScalarVolume;

/// `‖x − ref‖₂ / ‖ref‖₂` inside `mask`, after removing each volume's in-mask mean.
pub fn nrmse(x: &ScalarVolume, reference: &ScalarVolume, mask: &ScalarVolume) -> Result<f64> {
    mask.ensure_binary()?;
    let x = x.demeaned_in_mask(mask)?;
    let r = reference.demeaned_in_mask(mask)?;
    let denom = r.norm2();
    if denom == 0.0 {
        return Err(QsmError::ZeroNormReference);
    }
    Ok(x.sub(&r)?.norm2() / denom)
}

/// [`nrmse`] against a fixed reference, for repeated evaluation on raw sample slices.
pub(crate) struct NrmseTracker {
    indices: Vec<usize>,
    reference: Vec<f64>,
    denom: f64,
}

impl NrmseTracker {
    pub(crate) fn new(reference: &ScalarVolume, mask: &ScalarVolume) -> Result<Self> {
        mask.ensure_binary()?;
        let r = reference.demeaned_in_mask(mask)?;
        let denom = r.norm2();
        if denom == 0.0 {
            return Err(QsmError::ZeroNormReference);
        }
        let indices: Vec<usize> = (0..mask.len()).filter(|&i| mask.data()[i] != 0.0).collect();
        let reference = indices.iter().map(|&i| r.data()[i]).collect();
        Ok(Self { indices, reference, denom })
    }

    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        if self.indices.is_empty() {
            return 0.0;
        }
        let mean = self.indices.iter().map(|&i| x[i]).sum::<f64>() / self.indices.len() as f64;
        let err: f64 = self
            .indices
            .iter()
            .zip(&self.reference)
            .map(|(&i, &r)| (x[i] - mean - r).powi(2))
            .sum();
        err.sqrt() / self.denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Defaults to max − min of the reference inside the mask.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(invalid("ssim window", format!("must be odd and >= 3, got {}", self.window)));
        }
        for (name, v) in [
            ("ssim gaussian_sigma", self.gaussian_sigma),
            ("ssim k1", self.k1),
            ("ssim k2", self.k2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if let Some(l) = self.dynamic_range {
            if !(l.is_finite() && l > 0.0) {
                return Err(invalid("ssim dynamic_range", format!("must be > 0, got {l}")));
            }
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        let h = (self.window / 2) as f64;
        let w: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - h).powi(2) / (2.0 * self.gaussian_sigma.powi(2))).exp())
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

/// Separable "valid" convolution: output extent along each axis shrinks by `w.len() - 1`.
fn filter_valid(data: &[f64], dims: [usize; 3], w: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let mut cur = data.to_vec();
    let mut d = dims;
    let m = w.len();
    for axis in 0..3 {
        let mut nd = d;
        nd[axis] = d[axis] + 1 - m;
        let stride = match axis {
            0 => 1,
            1 => d[0],
            _ => d[0] * d[1],
        };
        let mut out = vec![0.0; nd[0] * nd[1] * nd[2]];
        for k in 0..nd[2] {
            for j in 0..nd[1] {
                for i in 0..nd[0] {
                    let base = i + d[0] * (j + d[1] * k);
                    let acc: f64 = w.iter().enumerate().map(|(t, wt)| wt * cur[base + t * stride]).sum();
                    out[i + nd[0] * (j + nd[1] * k)] = acc;
                }
            }
        }
        cur = out;
        d = nd;
    }
    (cur, d)
}

/// Mean structural similarity over in-mask voxels whose Gaussian window lies fully
/// inside the volume.
pub fn ssim3d(x: &ScalarVolume, reference: &ScalarVolume, mask: &ScalarVolume, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    mask.ensure_binary()?;
    let grid = *x.grid();
    grid.ensure_compatible(reference.grid())?;
    grid.ensure_compatible(mask.grid())?;
    let dims = grid.dims();
    let h = cfg.window / 2;
    if dims.iter().any(|&n| n < cfg.window) {
        return Err(QsmError::MaskTooSmall { window: cfg.window });
    }

    let range = match cfg.dynamic_range {
        Some(l) => l,
        None => {
            let (lo, hi) = reference
                .data()
                .iter()
                .zip(mask.data())
                .filter(|(_, &m)| m != 0.0)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
            if !(hi > lo) {
                return Err(invalid("ssim dynamic_range", "reference is constant inside the mask"));
            }
            hi - lo
        }
    };
    let c1 = (cfg.k1 * range).powi(2);
    let c2 = (cfg.k2 * range).powi(2);

    let w = cfg.weights();
    let xs = x.data();
    let ys = reference.data();
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a * b).collect();
    let (mu_x, vd) = filter_valid(xs, dims, &w);
    let (mu_y, _) = filter_valid(ys, dims, &w);
    let (e_xx, _) = filter_valid(&xx, dims, &w);
    let (e_yy, _) = filter_valid(&yy, dims, &w);
    let (e_xy, _) = filter_valid(&xy, dims, &w);

    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..vd[2] {
        for j in 0..vd[1] {
            for i in 0..vd[0] {
                if mask.get(i + h, j + h, k + h) == 0.0 {
                    continue;
                }
                let v = i + vd[0] * (j + vd[1] * k);
                let (mx, my) = (mu_x[v], mu_y[v]);
                let sx = e_xx[v] - mx * mx;
                let sy = e_yy[v] - my * my;
                let sxy = e_xy[v] - mx * my;
                let s = ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                    / ((mx * mx + my * my + c1) * (sx + sy + c2));
                total += s;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(QsmError::MaskTooSmall { window: cfg.window });
    }
    Ok(total / count as f64)
}

/// Normalized residual `sqrt(Σ_r ‖M(D_r χ − φ_r)‖²) / sqrt(Σ_r ‖M φ_r‖²)`.
pub fn data_consistency(chi: &ScalarVolume, dataset: &OrientationDataset) -> Result<f64> {
    let grid = *dataset.grid();
    grid.ensure_compatible(chi.grid())?;
    let mask = dataset.mask().data();
    let mut residual = 0.0;
    let mut signal = 0.0;
    for entry in dataset.entries() {
        let kernel = dipole_kernel(&grid, &entry.orientation)?;
        let field = forward_field(chi, &kernel)?;
        for ((&f, &p), &m) in field.data().iter().zip(entry.phase.data()).zip(mask) {
            if m != 0.0 {
                residual += (f - p).powi(2);
                signal += p * p;
            }
        }
    }
    if signal == 0.0 {
        return Err(QsmError::ZeroNormReference);
    }
    Ok((residual / signal).sqrt())
}
