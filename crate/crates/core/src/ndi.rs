//! Nonlinear dipole inversion.
//!
//! Minimizes `Σ_r ‖W_r (exp(i D_r χ) − exp(i φ_r))‖² + λ‖χ‖²` by fixed-step gradient
//! descent. The data term equals `Σ_r Σ_v 2 w² (1 − cos(D_r χ − φ_r))`, whose gradient
//! is `2 Σ_r D_rᵀ W_r² sin(D_r χ − φ_r)`; the Tikhonov term adds `2λχ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dipole::dipole_kernel;
use crate::error::{invalid, QsmError, Result};
use crate::fft::{half_dims, half_of, irfft3_into, rfft3_into};
use crate::grid::VolumeGrid;
use crate::metrics::NrmseTracker;
use crate::orientation::{OrientationDataset, OrientationEntry};
use crate::volume::ScalarVolume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdiConfig {
    /// Requested step size. Capped at the stability bound of the data term (see
    /// [`stable_step_bound`]); for a single orientation the bound is 2.25.
    pub step_size: f64,
    /// Tikhonov weight relative to max-normalized magnitudes (0.001 = 0.1 %).
    pub lambda: f64,
    pub max_iters: usize,
    pub record_history: bool,
    /// Ground truth for per-iteration NRMSE tracking, evaluated in the dataset mask.
    #[serde(skip)]
    pub reference: Option<ScalarVolume>,
}

impl Default for NdiConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            lambda: 0.001,
            max_iters: 400,
            record_history: true,
            reference: None,
        }
    }
}

impl NdiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(invalid("ndi step_size", format!("must be > 0, got {}", self.step_size)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(invalid("ndi lambda", format!("must be >= 0, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(invalid("ndi max_iters", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdiResult {
    pub chi: ScalarVolume,
    /// Objective (data term plus `λ‖χ‖²`) after each update.
    pub cost_history: Vec<f64>,
    /// NRMSE against `NdiConfig::reference` after each update.
    pub nrmse_history: Option<Vec<f64>>,
    pub iterations: usize,
    pub step_size: f64,
}

/// Per-orientation arrays in the layout the solver iterates over.
struct Problem {
    grid: VolumeGrid,
    kernels: Vec<Vec<f64>>,
    weights_sq: Vec<Vec<f64>>,
    phases: Vec<Vec<f64>>,
}

/// Cost and gradient at one point.
struct Evaluation {
    data_cost: f64,
    gradient: Vec<f64>,
}

impl Problem {
    fn new(dataset: &OrientationDataset) -> Result<Self> {
        let grid = *dataset.grid();
        let mut kernels = Vec::with_capacity(dataset.len());
        let mut weights_sq = Vec::with_capacity(dataset.len());
        let mut phases = Vec::with_capacity(dataset.len());
        for e in dataset.entries() {
            kernels.push(half_of(&grid, dipole_kernel(&grid, &e.orientation)?.values().data()));
            weights_sq.push(e.magnitude.data().iter().map(|w| w * w).collect());
            phases.push(e.phase.data().to_vec());
        }
        Ok(Self {
            grid,
            kernels,
            weights_sq,
            phases,
        })
    }

    fn max_weight_sq(&self) -> f64 {
        self.weights_sq
            .iter()
            .flatten()
            .fold(0.0, |m: f64, &v| m.max(v))
    }

    fn max_kernel_energy(&self) -> f64 {
        (0..self.kernels[0].len())
            .map(|i| self.kernels.iter().map(|d| d[i] * d[i]).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn step_bound(&self) -> f64 {
        1.0 / (self.max_weight_sq() * self.max_kernel_energy())
    }

    fn to_spectrum(&self, v: &[f64]) -> Vec<Complex64> {
        let [hx, ny, nz] = half_dims(&self.grid);
        let mut buf = vec![Complex64::new(0.0, 0.0); hx * ny * nz];
        rfft3_into(&self.grid, v, &mut buf);
        buf
    }

    /// Data cost only; one inverse transform per orientation.
    fn data_cost(&self, chi: &[f64]) -> f64 {
        let spectrum = self.to_spectrum(chi);
        let mut scratch = vec![Complex64::new(0.0, 0.0); spectrum.len()];
        let mut field = vec![0.0; self.grid.len()];
        let mut cost = 0.0;
        for r in 0..self.kernels.len() {
            self.field_into(&spectrum, r, &mut scratch, &mut field);
            cost += self.residual_cost(r, &field);
        }
        cost
    }

    fn field_into(&self, spectrum: &[Complex64], r: usize, scratch: &mut [Complex64], out: &mut [f64]) {
        for ((b, s), &d) in scratch.iter_mut().zip(spectrum).zip(&self.kernels[r]) {
            *b = s * d;
        }
        irfft3_into(&self.grid, scratch, out);
    }

    fn residual_cost(&self, r: usize, field: &[f64]) -> f64 {
        field
            .iter()
            .zip(&self.phases[r])
            .zip(&self.weights_sq[r])
            .filter(|(_, &w2)| w2 != 0.0)
            .map(|((f, &p), &w2)| {
                let half = 0.5 * (f - p);
                // 2 w² (1 − cos x) = 4 w² sin²(x/2), accurate for small residuals
                4.0 * w2 * half.sin().powi(2)
            })
            .sum()
    }

    fn evaluate(&self, chi: &[f64]) -> Evaluation {
        let n = self.grid.len();
        let spectrum = self.to_spectrum(chi);
        let mut scratch = vec![Complex64::new(0.0, 0.0); spectrum.len()];
        let mut accum = vec![Complex64::new(0.0, 0.0); spectrum.len()];
        let mut field = vec![0.0; n];
        let mut data_cost = 0.0;
        for r in 0..self.kernels.len() {
            self.field_into(&spectrum, r, &mut scratch, &mut field);
            for ((f, &p), &w2) in field.iter_mut().zip(&self.phases[r]).zip(&self.weights_sq[r]) {
                if w2 == 0.0 {
                    *f = 0.0;
                    continue;
                }
                // cost 4 w² sin²(x/2); gradient term w² sin x = 2 w² sin(x/2) cos(x/2)
                let (s, c) = (0.5 * (*f - p)).sin_cos();
                data_cost += 4.0 * w2 * s * s;
                *f = 2.0 * w2 * s * c;
            }
            rfft3_into(&self.grid, &field, &mut scratch);
            for ((a, b), &d) in accum.iter_mut().zip(&scratch).zip(&self.kernels[r]) {
                *a += b * d;
            }
        }
        irfft3_into(&self.grid, &mut accum, &mut field);
        field.iter_mut().for_each(|g| *g *= 2.0);
        Evaluation {
            data_cost,
            gradient: field,
        }
    }
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Data term `Σ_r Σ_v 2 w² (1 − cos(D_r χ − φ_r))` using the dataset magnitudes as given.
pub fn ndi_cost(chi: &ScalarVolume, dataset: &OrientationDataset) -> Result<f64> {
    dataset.grid().ensure_compatible(chi.grid())?;
    Ok(Problem::new(dataset)?.data_cost(chi.data()))
}

/// `2 Σ_r D_rᵀ W_r² sin(D_r χ − φ_r) + 2λχ`, using the dataset magnitudes as given.
pub fn ndi_gradient(chi: &ScalarVolume, dataset: &OrientationDataset, lambda: f64) -> Result<ScalarVolume> {
    dataset.grid().ensure_compatible(chi.grid())?;
    let eval = Problem::new(dataset)?.evaluate(chi.data());
    let g = eval
        .gradient
        .iter()
        .zip(chi.data())
        .map(|(g, x)| g + 2.0 * lambda * x)
        .collect();
    ScalarVolume::new(*chi.grid(), g)
}

/// Zeroes magnitudes outside the mask and divides all of them by the largest
/// in-mask magnitude across orientations.
pub fn normalize_weights(dataset: &OrientationDataset) -> Result<OrientationDataset> {
    let mask = dataset.mask();
    let max = dataset
        .entries()
        .iter()
        .flat_map(|e| e.magnitude.data().iter().zip(mask.data()))
        .filter(|(_, &m)| m != 0.0)
        .fold(0.0, |acc: f64, (&w, _)| acc.max(w));
    if max <= 0.0 {
        return Err(invalid("magnitude", "no positive magnitude inside the mask"));
    }
    let entries = dataset
        .entries()
        .iter()
        .map(|e| {
            Ok(OrientationEntry {
                phase: e.phase.clone(),
                magnitude: e.magnitude.zip_map(mask, |w, m| if m != 0.0 { w / max } else { 0.0 })?,
                orientation: e.orientation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    OrientationDataset::new(entries, mask.clone())
}

/// Largest step for which fixed-step descent on the data term is monotone:
/// `1 / (max w² · max_k Σ_r d_r(k)²)`, i.e. `2 / L` for the gradient's Lipschitz bound `L`.
/// Evaluated on the normalized weights that [`ndi_reconstruct`] iterates with.
pub fn stable_step_bound(dataset: &OrientationDataset) -> Result<f64> {
    Ok(Problem::new(&normalize_weights(dataset)?)?.step_bound())
}

/// Gradient descent from χ⁰ = 0 on max-normalized, mask-restricted magnitudes.
///
/// Each iterate is projected onto the mask (χ = 0 outside it). The step is
/// `min(cfg.step_size, stable_step_bound)`; the value used is reported in the result.
pub fn ndi_reconstruct(dataset: &OrientationDataset, cfg: &NdiConfig) -> Result<NdiResult> {
    cfg.validate()?;
    let mask = dataset.mask().clone();
    if let Some(reference) = &cfg.reference {
        reference.grid().ensure_compatible(mask.grid())?;
    }
    let normalized = normalize_weights(dataset)?;
    let problem = Problem::new(&normalized)?;
    let step = cfg.step_size.min(problem.step_bound());
    let lambda = cfg.lambda;
    let grid = problem.grid;

    let mut chi = vec![0.0; grid.len()];
    let mut cost_history = Vec::new();
    let tracker = cfg
        .reference
        .as_ref()
        .map(|r| NrmseTracker::new(r, &mask))
        .transpose()?;
    let mut nrmse_history = tracker.as_ref().map(|_| Vec::new());

    let mut eval = problem.evaluate(&chi);
    for t in 0..cfg.max_iters {
        for ((x, g), &m) in chi.iter_mut().zip(&eval.gradient).zip(mask.data()) {
            *x = if m != 0.0 { *x - step * (g + 2.0 * lambda * *x) } else { 0.0 };
        }
        // The last iterate only needs its cost, not a gradient.
        let last = t + 1 == cfg.max_iters;
        let cost = if last {
            if cfg.record_history {
                problem.data_cost(&chi) + lambda * squared_norm(&chi)
            } else {
                0.0
            }
        } else {
            eval = problem.evaluate(&chi);
            eval.data_cost + lambda * squared_norm(&chi)
        };
        if !cost.is_finite() || chi.iter().any(|x| !x.is_finite()) {
            return Err(QsmError::Diverged { iteration: t + 1 });
        }
        if cfg.record_history {
            cost_history.push(cost);
        }
        if let (Some(history), Some(tracker)) = (nrmse_history.as_mut(), tracker.as_ref()) {
            history.push(tracker.eval(&chi));
        }
    }

    let chi = ScalarVolume::new(grid, chi)?.masked(&mask)?;
    Ok(NdiResult {
        chi,
        cost_history,
        nrmse_history,
        iterations: cfg.max_iters,
        step_size: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orientation::Orientation;

    fn single_voxel_dataset(w: f64, phase: f64) -> OrientationDataset {
        let g = VolumeGrid::cube(1, 1.0).unwrap();
        OrientationDataset::new(
            vec![OrientationEntry {
                phase: ScalarVolume::filled(g, phase),
                magnitude: ScalarVolume::filled(g, w),
                orientation: Orientation::z(),
            }],
            ScalarVolume::filled(g, 1.0),
        )
        .unwrap()
    }

    // On a 1-voxel grid the kernel is only the DC term, so Dχ = 0 and the residual is −φ.
    #[test]
    fn cost_of_half_turn_residual_is_four() {
        let ds = single_voxel_dataset(1.0, std::f64::consts::PI);
        let chi = ScalarVolume::zeros(*ds.grid());
        assert!((ndi_cost(&chi, &ds).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn cost_of_quarter_turn_with_half_weight() {
        let ds = single_voxel_dataset(0.5, std::f64::consts::FRAC_PI_2);
        let chi = ScalarVolume::zeros(*ds.grid());
        assert!((ndi_cost(&chi, &ds).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_leave_only_tikhonov_gradient() {
        let g = VolumeGrid::cube(6, 1.0).unwrap();
        let chi = ScalarVolume::from_fn(g, |i, j, k| (i as f64 - j as f64) * 0.1 + k as f64);
        let ds = OrientationDataset::new(
            vec![OrientationEntry {
                phase: ScalarVolume::from_fn(g, |i, _, _| i as f64 * 0.2),
                magnitude: ScalarVolume::zeros(g),
                orientation: Orientation::z(),
            }],
            ScalarVolume::filled(g, 1.0),
        )
        .unwrap();
        let grad = ndi_gradient(&chi, &ds, 0.5).unwrap();
        assert_eq!(grad, chi);
    }

    #[test]
    fn config_validation() {
        assert!(NdiConfig { step_size: 0.0, ..Default::default() }.validate().is_err());
        assert!(NdiConfig { lambda: -0.1, ..Default::default() }.validate().is_err());
        assert!(NdiConfig { max_iters: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn normalization_uses_global_in_mask_max() {
        let g = VolumeGrid::new([4, 1, 1], [1.0; 3]).unwrap();
        let entry = |m: Vec<f64>| OrientationEntry {
            phase: ScalarVolume::zeros(g),
            magnitude: ScalarVolume::new(g, m).unwrap(),
            orientation: Orientation::z(),
        };
        let mask = ScalarVolume::new(g, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let ds = OrientationDataset::new(
            vec![entry(vec![1.0, 2.0, 1.0, 9.0]), entry(vec![4.0, 2.0, 0.0, 9.0])],
            mask,
        )
        .unwrap();
        let n = normalize_weights(&ds).unwrap();
        assert_eq!(n.entries()[0].magnitude.data(), &[0.25, 0.5, 0.25, 0.0]);
        assert_eq!(n.entries()[1].magnitude.data(), &[1.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn single_orientation_step_bound_is_nine_quarters() {
        let g = VolumeGrid::cube(8, 1.0).unwrap();
        let ds = OrientationDataset::new(
            vec![OrientationEntry {
                phase: ScalarVolume::zeros(g),
                magnitude: ScalarVolume::filled(g, 0.5),
                orientation: Orientation::z(),
            }],
            ScalarVolume::filled(g, 1.0),
        )
        .unwrap();
        assert!((stable_step_bound(&ds).unwrap() - 2.25).abs() < 1e-12);
    }
}
