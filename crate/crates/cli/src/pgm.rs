//! Binary PGM ("P5") export of axis-aligned slices.

use std::fs;
use std::path::Path;

use qsm_core::{Axis, ScalarVolume};

use crate::error::{CliError, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Linear map of `[lo, hi]` onto `[0, 255]`, clamped, rounded half-up.
pub fn window_value(v: f64, lo: f64, hi: f64) -> u8 {
    let t = (v - lo) / (hi - lo) * 255.0;
    (t + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Extracts the plane `axis = index`. The first remaining axis runs along image
/// columns and the second down the rows.
pub fn slice_image(v: &ScalarVolume, axis: Axis, index: usize, lo: f64, hi: f64) -> Result<GrayImage> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CliError::Usage(format!(
            "window must satisfy window_min < window_max, got [{lo}, {hi}]"
        )));
    }
    let dims = v.grid().dims();
    let a = axis.index();
    if index >= dims[a] {
        return Err(CliError::Usage(format!(
            "slice index {index} out of range for axis of length {}",
            dims[a]
        )));
    }
    let (u, w) = match axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    };
    let (width, height) = (dims[u], dims[w]);
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let mut c = [0usize; 3];
            c[a] = index;
            c[u] = col;
            c[w] = row;
            pixels.push(window_value(v.get(c[0], c[1], c[2]), lo, hi));
        }
    }
    Ok(GrayImage { width, height, pixels })
}

pub fn write_slice(path: &Path, image: &GrayImage) -> Result<()> {
    fs::write(path, image.to_pgm()).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}
