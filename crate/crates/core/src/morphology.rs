use crate::error::{invalid, Result};
use crate::grid::VolumeGrid;
use crate::volume::ScalarVolume;

/// Integer voxel offsets whose physical distance from the origin is at most `radius_mm`.
pub fn ball_offsets(grid: &VolumeGrid, radius_mm: f64) -> Vec<[i64; 3]> {
    let spacing = grid.spacing();
    let reach = spacing.map(|d| (radius_mm / d).floor() as i64);
    let r2 = radius_mm * radius_mm;
    let mut out = Vec::new();
    for dz in -reach[2]..=reach[2] {
        for dy in -reach[1]..=reach[1] {
            for dx in -reach[0]..=reach[0] {
                let d2 = (dx as f64 * spacing[0]).powi(2)
                    + (dy as f64 * spacing[1]).powi(2)
                    + (dz as f64 * spacing[2]).powi(2);
                if d2 <= r2 {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Binary erosion by a physical-radius ball. Voxels beyond the volume edge count as 0.
pub fn mask_erode(mask: &ScalarVolume, radius_mm: f64) -> Result<ScalarVolume> {
    mask.ensure_binary()?;
    if !(radius_mm.is_finite() && radius_mm >= 0.0) {
        return Err(invalid("radius_mm", format!("must be >= 0, got {radius_mm}")));
    }
    let grid = *mask.grid();
    let [nx, ny, nz] = grid.dims().map(|n| n as i64);
    let offsets = ball_offsets(&grid, radius_mm);
    let data = mask.data();
    let out = (0..grid.len())
        .map(|idx| {
            if data[idx] == 0.0 {
                return 0.0;
            }
            let [i, j, k] = grid.coords(idx).map(|c| c as i64);
            let keep = offsets.iter().all(|&[dx, dy, dz]| {
                let (x, y, z) = (i + dx, j + dy, k + dz);
                x >= 0
                    && y >= 0
                    && z >= 0
                    && x < nx
                    && y < ny
                    && z < nz
                    && data[grid.linear_index(x as usize, y as usize, z as usize)] != 0.0
            });
            if keep {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    ScalarVolume::new(grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_zero_is_identity() {
        let g = VolumeGrid::cube(6, 1.0).unwrap();
        let m = ScalarVolume::from_fn(g, |i, j, k| ((i * 7 + j * 3 + k) % 2) as f64);
        assert_eq!(mask_erode(&m, 0.0).unwrap(), m);
    }

    #[test]
    fn all_zero_stays_zero() {
        let g = VolumeGrid::cube(5, 1.0).unwrap();
        let m = ScalarVolume::zeros(g);
        assert_eq!(mask_erode(&m, 1.5).unwrap(), m);
    }

    #[test]
    fn rejects_non_binary() {
        let g = VolumeGrid::cube(3, 1.0).unwrap();
        assert!(mask_erode(&ScalarVolume::filled(g, 0.3), 1.0).is_err());
    }

    #[test]
    fn anisotropic_radius_reaches_fewer_voxels_on_coarse_axis() {
        let g = VolumeGrid::new([9, 9, 9], [1.0, 1.0, 2.0]).unwrap();
        let offs = ball_offsets(&g, 2.0);
        assert!(offs.contains(&[2, 0, 0]));
        assert!(offs.contains(&[0, 0, 1]));
        assert!(!offs.contains(&[0, 0, 2]));
    }
}
