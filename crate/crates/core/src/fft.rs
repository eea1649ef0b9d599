//! Unnormalized forward / 1/N-normalized inverse 3D DFT on x-fastest volumes.
//!
//! Transforms are separable: each axis is processed as a batch of contiguous
//! 1D lines. Lines along y and z are gathered into scratch buffers first.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::grid::VolumeGrid;
use crate::volume::{ComplexVolume, ScalarVolume};

type Plan = Arc<dyn Fft<f64>>;
type ComplexPlans = (FftPlanner<f64>, HashMap<(usize, bool), Plan>);

static PLANS: LazyLock<Mutex<ComplexPlans>> =
    LazyLock::new(|| Mutex::new((FftPlanner::new(), HashMap::new())));

fn plan(len: usize, direction: FftDirection) -> Plan {
    let forward = direction == FftDirection::Forward;
    let mut guard = PLANS.lock().expect("fft planner poisoned");
    let (planner, cache) = &mut *guard;
    cache
        .entry((len, forward))
        .or_insert_with(|| planner.plan_fft(len, direction))
        .clone()
}

/// Lines per parallel task; keeps per-task work coarse enough to amortize scheduling.
const LINES_PER_TASK: usize = 64;

fn transform_lines(buf: &mut [Complex64], len: usize, fft: &Plan) {
    let scratch_len = fft.get_inplace_scratch_len();
    buf.par_chunks_mut(len * LINES_PER_TASK).for_each_init(
        || vec![Complex64::new(0.0, 0.0); scratch_len],
        |scratch, chunk| fft.process_with_scratch(chunk, scratch),
    );
}

/// Shares a mutable buffer across tasks that write provably disjoint index sets.
#[derive(Clone, Copy)]
struct SharedMut(*mut Complex64);

unsafe impl Send for SharedMut {}
unsafe impl Sync for SharedMut {}

fn transform_in_place(grid: &VolumeGrid, data: &mut [Complex64], direction: FftDirection) {
    let [nx, _, _] = grid.dims();
    if nx > 1 {
        transform_lines(data, nx, &plan(nx, direction));
    }
    transform_yz(grid.dims(), data, direction);
}

/// Transforms along y and z of an x-fastest array with the given dims.
fn transform_yz(dims: [usize; 3], data: &mut [Complex64], direction: FftDirection) {
    let [nx, ny, nz] = dims;
    assert_eq!(data.len(), nx * ny * nz);
    let plane = nx * ny;

    if ny > 1 {
        let fft = plan(ny, direction);
        let scratch_len = fft.get_inplace_scratch_len();
        data.par_chunks_mut(plane).for_each_init(
            || {
                (
                    vec![Complex64::new(0.0, 0.0); plane],
                    vec![Complex64::new(0.0, 0.0); scratch_len],
                )
            },
            |(lines, scratch), slab| {
                for j in 0..ny {
                    for i in 0..nx {
                        lines[i * ny + j] = slab[i + nx * j];
                    }
                }
                fft.process_with_scratch(lines, scratch);
                for j in 0..ny {
                    for i in 0..nx {
                        slab[i + nx * j] = lines[i * ny + j];
                    }
                }
            },
        );
    }

    if nz > 1 {
        let fft = plan(nz, direction);
        let scratch_len = fft.get_inplace_scratch_len();
        let base = SharedMut(data.as_mut_ptr());
        // Each task owns the x-z plane at a fixed y: indices i + nx*j + plane*k for
        // its own j only, so no two tasks touch the same element.
        (0..ny).into_par_iter().for_each_init(
            || {
                (
                    vec![Complex64::new(0.0, 0.0); nx * nz],
                    vec![Complex64::new(0.0, 0.0); scratch_len],
                )
            },
            |(lines, scratch), j| {
                let ptr = base;
                for k in 0..nz {
                    for i in 0..nx {
                        // SAFETY: index < nx*ny*nz and only this task uses row j.
                        lines[i * nz + k] = unsafe { *ptr.0.add(i + nx * j + plane * k) };
                    }
                }
                fft.process_with_scratch(lines, scratch);
                for k in 0..nz {
                    for i in 0..nx {
                        // SAFETY: as above.
                        unsafe { *ptr.0.add(i + nx * j + plane * k) = lines[i * nz + k] };
                    }
                }
            },
        );
    }
}

type RealPlans = (
    RealFftPlanner<f64>,
    HashMap<usize, Arc<dyn RealToComplex<f64>>>,
    HashMap<usize, Arc<dyn ComplexToReal<f64>>>,
);

static REAL_PLANS: LazyLock<Mutex<RealPlans>> =
    LazyLock::new(|| Mutex::new((RealFftPlanner::new(), HashMap::new(), HashMap::new())));

fn real_forward_plan(len: usize) -> Arc<dyn RealToComplex<f64>> {
    let mut guard = REAL_PLANS.lock().expect("fft planner poisoned");
    let (planner, forward, _) = &mut *guard;
    forward.entry(len).or_insert_with(|| planner.plan_fft_forward(len)).clone()
}

fn real_inverse_plan(len: usize) -> Arc<dyn ComplexToReal<f64>> {
    let mut guard = REAL_PLANS.lock().expect("fft planner poisoned");
    let (planner, _, inverse) = &mut *guard;
    inverse.entry(len).or_insert_with(|| planner.plan_fft_inverse(len)).clone()
}

/// Dims of the half spectrum of a real volume: x frequencies `0..=nx/2`, all y and z.
pub(crate) fn half_dims(grid: &VolumeGrid) -> [usize; 3] {
    let [nx, ny, nz] = grid.dims();
    [nx / 2 + 1, ny, nz]
}

/// Restricts a full-spectrum array to the half-spectrum layout.
pub(crate) fn half_of(grid: &VolumeGrid, full: &[f64]) -> Vec<f64> {
    let [nx, ny, nz] = grid.dims();
    let hx = nx / 2 + 1;
    let mut out = Vec::with_capacity(hx * ny * nz);
    for row in full.chunks_exact(nx) {
        out.extend_from_slice(&row[..hx]);
    }
    out
}

/// Unnormalized forward transform of real samples into the half spectrum.
pub(crate) fn rfft3_into(grid: &VolumeGrid, input: &[f64], out: &mut [Complex64]) {
    let [nx, ny, nz] = grid.dims();
    let hx = nx / 2 + 1;
    assert_eq!(input.len(), nx * ny * nz);
    assert_eq!(out.len(), hx * ny * nz);
    let fft = real_forward_plan(nx);
    let scratch_len = fft.get_scratch_len();
    out.par_chunks_mut(hx * LINES_PER_TASK)
        .zip(input.par_chunks(nx * LINES_PER_TASK))
        .for_each_init(
            || (vec![0.0; nx], vec![Complex64::new(0.0, 0.0); scratch_len]),
            |(line, scratch), (dst, src)| {
                for (d, s) in dst.chunks_exact_mut(hx).zip(src.chunks_exact(nx)) {
                    line.copy_from_slice(s);
                    fft.process_with_scratch(line, d, scratch).expect("buffer sizes match the plan");
                }
            },
        );
    transform_yz([hx, ny, nz], out, FftDirection::Forward);
}

/// Inverse of [`rfft3_into`] including the 1/N normalization. `spectrum` is used as scratch.
///
/// Imaginary parts that a Hermitian spectrum cannot have (x = 0 and the x Nyquist bin
/// after the y/z pass) are dropped, which equals taking the real part of the full inverse.
pub(crate) fn irfft3_into(grid: &VolumeGrid, spectrum: &mut [Complex64], out: &mut [f64]) {
    let [nx, ny, nz] = grid.dims();
    let hx = nx / 2 + 1;
    assert_eq!(spectrum.len(), hx * ny * nz);
    assert_eq!(out.len(), nx * ny * nz);
    transform_yz([hx, ny, nz], spectrum, FftDirection::Inverse);
    let fft = real_inverse_plan(nx);
    let scratch_len = fft.get_scratch_len();
    let scale = 1.0 / (nx * ny * nz) as f64;
    out.par_chunks_mut(nx * LINES_PER_TASK)
        .zip(spectrum.par_chunks_mut(hx * LINES_PER_TASK))
        .for_each_init(
            || vec![Complex64::new(0.0, 0.0); scratch_len],
            |scratch, (dst, src)| {
                for (d, s) in dst.chunks_exact_mut(nx).zip(src.chunks_exact_mut(hx)) {
                    s[0].im = 0.0;
                    if nx % 2 == 0 {
                        s[hx - 1].im = 0.0;
                    }
                    fft.process_with_scratch(s, d, scratch).expect("buffer sizes match the plan");
                    d.iter_mut().for_each(|v| *v *= scale);
                }
            },
        );
}

/// In-place unnormalized forward transform of raw samples laid out on `grid`.
pub(crate) fn forward_in_place(grid: &VolumeGrid, data: &mut [Complex64]) {
    transform_in_place(grid, data, FftDirection::Forward);
}

/// In-place inverse transform including the 1/N normalization.
pub(crate) fn inverse_in_place(grid: &VolumeGrid, data: &mut [Complex64]) {
    transform_in_place(grid, data, FftDirection::Inverse);
    let scale = 1.0 / data.len() as f64;
    data.par_iter_mut().for_each(|v| *v *= scale);
}

/// Volumes that can be lifted to the complex domain for transformation.
pub trait ToComplex {
    fn to_complex(&self) -> ComplexVolume;
}

impl ToComplex for ScalarVolume {
    fn to_complex(&self) -> ComplexVolume {
        ComplexVolume::from_real(self)
    }
}

impl ToComplex for ComplexVolume {
    fn to_complex(&self) -> ComplexVolume {
        self.clone()
    }
}

/// Unnormalized forward DFT; the DC coefficient sits at linear index 0.
pub fn fft3<V: ToComplex + ?Sized>(v: &V) -> ComplexVolume {
    let mut out = v.to_complex();
    let grid = *out.grid();
    forward_in_place(&grid, out.data_mut());
    out
}

/// Inverse DFT with 1/(Nx·Ny·Nz) normalization.
pub fn ifft3(v: &ComplexVolume) -> ComplexVolume {
    let mut out = v.clone();
    let grid = *out.grid();
    inverse_in_place(&grid, out.data_mut());
    out
}

/// Applies an even real k-space multiplier (full-spectrum layout) to a real volume.
pub(crate) fn apply_real_multiplier(v: &ScalarVolume, multiplier: &[f64]) -> ScalarVolume {
    let grid = *v.grid();
    let [hx, ny, nz] = half_dims(&grid);
    let [nx, _, _] = grid.dims();
    let mut spectrum = vec![Complex64::new(0.0, 0.0); hx * ny * nz];
    rfft3_into(&grid, v.data(), &mut spectrum);
    spectrum
        .par_chunks_mut(hx)
        .zip(multiplier.par_chunks(nx))
        .for_each(|(s, m)| s.iter_mut().zip(m).for_each(|(c, &w)| *c *= w));
    let mut out = vec![0.0; grid.len()];
    irfft3_into(&grid, &mut spectrum, &mut out);
    ScalarVolume::from_raw(grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random(grid: VolumeGrid, seed: u64) -> ScalarVolume {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ScalarVolume::from_fn(grid, |_, _, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn constant_volume_has_only_dc() {
        let g = VolumeGrid::new([4, 6, 5], [1.0, 2.0, 0.5]).unwrap();
        let k = fft3(&ScalarVolume::filled(g, 2.5));
        let n = g.len() as f64;
        assert!((k.data()[0] - Complex64::new(2.5 * n, 0.0)).norm() < 1e-10);
        assert!(k.data()[1..].iter().all(|c| c.norm() < 1e-10));
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let g = VolumeGrid::cube(6, 1.0).unwrap();
        let v = ScalarVolume::from_fn(g, |i, j, k| if i + j + k == 0 { 1.0 } else { 0.0 });
        let k = fft3(&v);
        assert!(k.data().iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn flat_spectrum_inverts_to_impulse() {
        let g = VolumeGrid::cube(4, 1.0).unwrap();
        let ones = ComplexVolume::new(g, vec![Complex64::new(1.0, 0.0); g.len()]).unwrap();
        let v = ifft3(&ones);
        assert!((v.data()[0] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(v.data()[1..].iter().all(|c| c.norm() < 1e-14));
        let zero = ifft3(&ComplexVolume::zeros(g));
        assert!(zero.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn roundtrip_on_odd_and_degenerate_shapes() {
        for dims in [[1, 1, 7], [5, 1, 3], [3, 4, 5], [9, 2, 1]] {
            let g = VolumeGrid::new(dims, [1.0; 3]).unwrap();
            let v = pseudo_random(g, 7);
            let back = ifft3(&fft3(&v)).real();
            let err = back.sub(&v).unwrap().norm2() / v.norm2();
            assert!(err < 1e-12, "{dims:?}: {err}");
        }
    }

    #[test]
    fn half_spectrum_multiplier_matches_full_transform() {
        for dims in [[1, 4, 3], [2, 1, 1], [6, 5, 4], [7, 3, 2], [8, 8, 8]] {
            let g = VolumeGrid::new(dims, [1.0; 3]).unwrap();
            let v = pseudo_random(g, 11);
            // even multiplier: depends on |signed frequency index| per axis
            let m: Vec<f64> = (0..g.len())
                .map(|idx| {
                    let i = idx % dims[0];
                    let j = (idx / dims[0]) % dims[1];
                    let k = idx / (dims[0] * dims[1]);
                    let f = |n: usize, len: usize| n.min(len - n) as f64;
                    1.0 + f(i, dims[0]) + 2.0 * f(j, dims[1]) - 0.5 * f(k, dims[2])
                })
                .collect();
            let mut full = fft3(&v);
            full.data_mut().iter_mut().zip(&m).for_each(|(c, &w)| *c *= w);
            let expected = ifft3(&full).real();
            let got = apply_real_multiplier(&v, &m);
            let err = got.sub(&expected).unwrap().norm2() / expected.norm2();
            assert!(err < 1e-12, "{dims:?}: {err}");
        }
    }
}
