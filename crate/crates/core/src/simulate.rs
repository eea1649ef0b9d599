//! Susceptibility phantoms and complex-noise acquisition simulation.
//!
//! Noise streams use ChaCha8 seeded with the user seed; orientation `r` draws
//! from ChaCha stream `r`, so every orientation gets an independent,
//! reproducible sequence.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dipole::{dipole_kernel, forward_field};
use crate::error::{invalid, Result};
use crate::grid::{Axis, VolumeGrid};
use crate::orientation::{Orientation, OrientationDataset, OrientationEntry};
use crate::volume::ScalarVolume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere {
        radius: f64,
    },
    /// Finite cylinder with its axis parallel to a grid axis.
    Cylinder {
        radius: f64,
        length: f64,
        #[serde(default = "default_axis")]
        axis: Axis,
    },
    /// Axis-aligned box with edge lengths `size`.
    Cuboid {
        size: [f64; 3],
    },
}

fn default_axis() -> Axis {
    Axis::Z
}

fn default_magnitude() -> f64 {
    1.0
}

/// One primitive. `center` is in mm, measured from the center of voxel (0, 0, 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    #[serde(flatten)]
    pub kind: ShapeKind,
    pub center: [f64; 3],
    pub chi: f64,
    /// Magnitude of the template image inside this shape.
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
}

impl Shape {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [
            p[0] - self.center[0],
            p[1] - self.center[1],
            p[2] - self.center[2],
        ];
        match self.kind {
            ShapeKind::Sphere { radius } => d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius,
            ShapeKind::Cylinder { radius, length, axis } => {
                let a = axis.index();
                let radial: f64 = (0..3).filter(|&i| i != a).map(|i| d[i] * d[i]).sum();
                radial <= radius * radius && d[a].abs() <= length / 2.0
            }
            ShapeKind::Cuboid { size } => (0..3).all(|i| d[i].abs() <= size[i] / 2.0),
        }
    }

    fn validate(&self, i: usize) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("shapes[{i}]: must be > 0, got {v}")))
            }
        };
        match self.kind {
            ShapeKind::Sphere { radius } => positive("radius", radius)?,
            ShapeKind::Cylinder { radius, length, .. } => {
                positive("radius", radius)?;
                positive("length", length)?;
            }
            ShapeKind::Cuboid { size } => {
                for s in size {
                    positive("size", s)?;
                }
            }
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(invalid("center", format!("shapes[{i}]: must be finite")));
        }
        if !self.chi.is_finite() {
            return Err(invalid("chi", format!("shapes[{i}]: must be finite")));
        }
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return Err(invalid("magnitude", format!("shapes[{i}]: must be >= 0")));
        }
        Ok(())
    }
}

/// Piecewise-constant phantom. Later shapes overwrite earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PhantomSpec {
    pub shapes: Vec<Shape>,
    #[serde(default)]
    pub background_chi: f64,
    #[serde(default)]
    pub background_magnitude: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.shapes.iter().enumerate() {
            s.validate(i)?;
        }
        if !self.background_chi.is_finite() {
            return Err(invalid("background_chi", "must be finite"));
        }
        if !(self.background_magnitude.is_finite() && self.background_magnitude >= 0.0) {
            return Err(invalid("background_magnitude", "must be >= 0"));
        }
        Ok(())
    }

    /// Spherical "head" centered in the grid with deep-gray-matter, white-matter and
    /// vein-like inclusions. Susceptibilities are in ppm; the outer tissue is 0 so
    /// the head itself produces no internal field.
    pub fn numerical_head(grid: &VolumeGrid) -> Self {
        let [nx, ny, nz] = grid.dims();
        let [dx, dy, dz] = grid.spacing();
        let ext = [nx as f64 * dx, ny as f64 * dy, nz as f64 * dz];
        let c = [
            (nx / 2) as f64 * dx,
            (ny / 2) as f64 * dy,
            (nz / 2) as f64 * dz,
        ];
        let r = 0.4 * ext[0].min(ext[1]).min(ext[2]);
        let at = |fx: f64, fy: f64, fz: f64| [c[0] + fx * r, c[1] + fy * r, c[2] + fz * r];
        let sphere = |center, radius, chi, magnitude| Shape {
            kind: ShapeKind::Sphere { radius },
            center,
            chi,
            magnitude,
        };
        Self {
            shapes: vec![
                sphere(c, r, 0.0, 0.8),
                Shape {
                    kind: ShapeKind::Cuboid {
                        size: [0.9 * r, 0.5 * r, 0.6 * r],
                    },
                    center: at(0.0, 0.3, 0.15),
                    chi: -0.04,
                    magnitude: 1.0,
                },
                sphere(at(-0.35, -0.3, 0.0), 0.2 * r, 0.12, 0.6),
                sphere(at(0.35, -0.3, 0.0), 0.2 * r, 0.10, 0.65),
                sphere(at(0.0, -0.1, -0.45), 0.15 * r, 0.06, 0.7),
                Shape {
                    kind: ShapeKind::Cylinder {
                        radius: 0.07 * r,
                        length: 1.1 * r,
                        axis: Axis::Y,
                    },
                    center: at(0.1, 0.0, 0.5),
                    chi: 0.3,
                    magnitude: 0.35,
                },
                Shape {
                    kind: ShapeKind::Cylinder {
                        radius: 0.06 * r,
                        length: 0.9 * r,
                        axis: Axis::X,
                    },
                    center: at(0.0, 0.55, -0.3),
                    chi: 0.25,
                    magnitude: 0.4,
                },
            ],
            background_chi: 0.0,
            background_magnitude: 0.0,
        }
    }

    fn rasterize(&self, grid: &VolumeGrid, value: impl Fn(Option<&Shape>) -> f64) -> ScalarVolume {
        let s = grid.spacing();
        ScalarVolume::from_fn(*grid, |i, j, k| {
            let p = [i as f64 * s[0], j as f64 * s[1], k as f64 * s[2]];
            value(self.shapes.iter().rev().find(|sh| sh.contains(p)))
        })
    }
}

/// Susceptibility map: the last shape containing each voxel center wins.
pub fn make_phantom(grid: &VolumeGrid, spec: &PhantomSpec) -> Result<ScalarVolume> {
    spec.validate()?;
    Ok(spec.rasterize(grid, |s| s.map_or(spec.background_chi, |s| s.chi)))
}

/// Magnitude template with the same overwrite rule.
pub fn make_magnitude(grid: &VolumeGrid, spec: &PhantomSpec) -> Result<ScalarVolume> {
    spec.validate()?;
    Ok(spec.rasterize(grid, |s| s.map_or(spec.background_magnitude, |s| s.magnitude)))
}

/// Binary mask of voxels covered by any shape.
pub fn make_mask(grid: &VolumeGrid, spec: &PhantomSpec) -> Result<ScalarVolume> {
    spec.validate()?;
    Ok(spec.rasterize(grid, |s| if s.is_some() { 1.0 } else { 0.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of each of the real and imaginary noise components.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid("sigma", format!("must be >= 0, got {sigma}")));
        }
        Ok(Self { sigma, seed })
    }

    pub fn noiseless() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }

    /// Deterministic generator for orientation `r`.
    pub fn stream(&self, r: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(r as u64);
        rng
    }
}

/// Wraps an angle into (-π, π]; values already in range are returned unchanged.
pub fn wrap_phase(phi: f64) -> f64 {
    if phi > -PI && phi <= PI {
        return phi;
    }
    let w = (phi + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Forward-simulates wrapped phase and noisy magnitude for each orientation.
///
/// The dataset mask is `magnitude > 0`; replace it with
/// [`OrientationDataset::with_mask`] when a different mask is wanted.
pub fn simulate_acquisition(
    chi: &ScalarVolume,
    magnitude: &ScalarVolume,
    orientations: &[Orientation],
    noise: &NoiseSpec,
) -> Result<OrientationDataset> {
    let grid = *chi.grid();
    grid.ensure_compatible(magnitude.grid())?;
    NoiseSpec::new(noise.sigma, noise.seed)?;
    let mut entries = Vec::with_capacity(orientations.len());
    for (r, orientation) in orientations.iter().enumerate() {
        let kernel = dipole_kernel(&grid, orientation)?;
        let clean = forward_field(chi, &kernel)?;
        let (phase, mag) = if noise.sigma == 0.0 {
            (clean.map(wrap_phase), magnitude.clone())
        } else {
            let mut rng = noise.stream(r);
            let mut phase = Vec::with_capacity(grid.len());
            let mut mag = Vec::with_capacity(grid.len());
            for (&phi, &w) in clean.data().iter().zip(magnitude.data()) {
                let n_re: f64 = StandardNormal.sample(&mut rng);
                let n_im: f64 = StandardNormal.sample(&mut rng);
                let re = w * phi.cos() + noise.sigma * n_re;
                let im = w * phi.sin() + noise.sigma * n_im;
                let mut arg = im.atan2(re);
                if arg <= -PI {
                    arg = PI;
                }
                phase.push(arg);
                mag.push(re.hypot(im));
            }
            (
                ScalarVolume::new(grid, phase)?,
                ScalarVolume::new(grid, mag)?,
            )
        };
        entries.push(OrientationEntry {
            phase,
            magnitude: mag,
            orientation: *orientation,
        });
    }
    let mask = magnitude.map(|w| if w > 0.0 { 1.0 } else { 0.0 });
    OrientationDataset::new(entries, mask)
}
