//! Minimal single-file NIfTI-1 support.
//!
//! Reads 3D float32/float64 volumes of either byte order, applying
//! `scl_slope`/`scl_inter`. Writes little-endian float32 with `vox_offset` 352.

use std::fs;
use std::path::Path;

use qsm_core::{ScalarVolume, VolumeGrid};

use crate::error::{CliError, Result};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const UNITS_MM: u8 = 2;

/// Header fields this crate reads or writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub pixdim: [f32; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
}

#[derive(Clone, Copy)]
pub enum Endian {
    Little,
    Big,
}

struct Fields<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Fields<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        b
    }

    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.bytes(at)),
            Endian::Big => i16::from_be_bytes(self.bytes(at)),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.bytes(at)),
            Endian::Big => f32::from_be_bytes(self.bytes(at)),
        }
    }

    fn f64(&self, at: usize) -> f64 {
        match self.endian {
            Endian::Little => f64::from_le_bytes(self.bytes(at)),
            Endian::Big => f64::from_be_bytes(self.bytes(at)),
        }
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn parse_header(buf: &[u8], path: &Path) -> Result<(NiftiHeader, Endian)> {
    if buf.len() < HEADER_SIZE {
        return Err(format_err(path, "file is shorter than a NIfTI-1 header"));
    }
    let size = [buf[0], buf[1], buf[2], buf[3]];
    let endian = if i32::from_le_bytes(size) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(size) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(format_err(path, "sizeof_hdr is not 348"));
    };
    let f = Fields { buf, endian };
    let mut dim = [0i16; 8];
    let mut pixdim = [0f32; 8];
    for i in 0..8 {
        dim[i] = f.i16(40 + 2 * i);
        pixdim[i] = f.f32(76 + 4 * i);
    }
    let header = NiftiHeader {
        dim,
        pixdim,
        datatype: f.i16(70),
        bitpix: f.i16(72),
        vox_offset: f.f32(108),
        scl_slope: f.f32(112),
        scl_inter: f.f32(116),
        magic: f.bytes(344),
    };
    Ok((header, endian))
}

pub fn read_volume(path: &Path) -> Result<ScalarVolume> {
    let buf = fs::read(path).map_err(|source| CliError::MissingInput {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&buf, path)
}

pub fn decode(buf: &[u8], path: &Path) -> Result<ScalarVolume> {
    let (h, endian) = parse_header(buf, path)?;
    if &h.magic != b"n+1\0" {
        return Err(format_err(path, "magic is not \"n+1\" (only single-file NIfTI-1 is supported)"));
    }
    if h.dim[0] != 3 {
        return Err(format_err(path, format!("dim[0] = {} (only 3D volumes are supported)", h.dim[0])));
    }
    if h.dim[1..4].iter().any(|&n| n < 1) {
        return Err(format_err(path, format!("invalid dims {:?}", &h.dim[1..4])));
    }
    let width = match h.datatype {
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(format_err(path, format!("unsupported datatype {other}"))),
    };
    let dims = [h.dim[1] as usize, h.dim[2] as usize, h.dim[3] as usize];
    let spacing = [h.pixdim[1] as f64, h.pixdim[2] as f64, h.pixdim[3] as f64];
    let grid = VolumeGrid::new(dims, spacing).map_err(|e| format_err(path, e.to_string()))?;
    let offset = h.vox_offset as usize;
    if offset < HEADER_SIZE {
        return Err(format_err(path, format!("vox_offset {} overlaps the header", h.vox_offset)));
    }
    let n = grid.len();
    let end = offset + n * width;
    if buf.len() < end {
        return Err(format_err(path, format!("expected {} data bytes, found {}", n * width, buf.len().saturating_sub(offset))));
    }
    let f = Fields { buf, endian };
    let (slope, inter) = if h.scl_slope == 0.0 || !h.scl_slope.is_finite() {
        (1.0, 0.0)
    } else {
        (h.scl_slope as f64, h.scl_inter as f64)
    };
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let at = offset + i * width;
            let raw = if width == 4 { f.f32(at) as f64 } else { f.f64(at) };
            raw * slope + inter
        })
        .collect();
    ScalarVolume::new(grid, samples).map_err(|e| format_err(path, e.to_string()))
}

/// Serializes `v` as little-endian float32 NIfTI-1.
pub fn encode(v: &ScalarVolume) -> Result<Vec<u8>> {
    let grid = v.grid();
    let dims = grid.dims();
    if dims.iter().any(|&n| n > i16::MAX as usize) {
        return Err(CliError::Usage(format!("volume {dims:?} exceeds NIfTI-1 extent limits")));
    }
    let spacing = grid.spacing();
    let mut out = vec![0u8; VOX_OFFSET + 4 * v.len()];
    let mut put = |at: usize, bytes: &[u8]| out[at..at + bytes.len()].copy_from_slice(bytes);
    put(0, &(HEADER_SIZE as i32).to_le_bytes());
    put(38, b"r");
    let dim = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put(40 + 2 * i, &d.to_le_bytes());
    }
    put(70, &DT_FLOAT32.to_le_bytes());
    put(72, &32i16.to_le_bytes());
    let pixdim = [1.0f32, spacing[0] as f32, spacing[1] as f32, spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        put(76 + 4 * i, &p.to_le_bytes());
    }
    put(108, &(VOX_OFFSET as f32).to_le_bytes());
    put(112, &1.0f32.to_le_bytes());
    put(123, &[UNITS_MM]);
    put(148, b"qsm");
    // sform: diagonal voxel-to-mm scaling
    put(254, &1i16.to_le_bytes());
    for (row, at) in [280usize, 296, 312].iter().enumerate() {
        put(at + 4 * row, &(spacing[row] as f32).to_le_bytes());
    }
    put(344, b"n+1\0");
    for (i, &s) in v.data().iter().enumerate() {
        let x = s as f32;
        if !x.is_finite() {
            return Err(CliError::Usage(format!("sample {i} overflows float32")));
        }
        put(VOX_OFFSET + 4 * i, &x.to_le_bytes());
    }
    Ok(out)
}

pub fn write_volume(path: &Path, v: &ScalarVolume) -> Result<()> {
    let bytes = encode(v)?;
    fs::write(path, bytes).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}
