//! Air replacement before the random walker and morphological closing after it.

use alloc::vec::Vec;

use crate::error::Result;
use crate::volume::{Volume3D, VolumeKind};

/// HU below which voxels are treated as enclosed air.
pub const AIR_CUTOFF_HU: f64 = -150.0;

/// Replaces every voxel strictly below `cutoff` with `mean_eso_hu`.
pub fn preprocess_ct(ct: &Volume3D, mean_eso_hu: f64, cutoff: f64) -> Result<Volume3D> {
    ct.expect_kind(VolumeKind::Hu)?;
    let data = ct
        .data()
        .iter()
        .map(|&v| if v < cutoff { mean_eso_hu } else { v })
        .collect();
    ct.with_data(VolumeKind::Hu, data)
}

/// Offsets of the 6-connected (L1) ball of the given radius.
fn ball(radius: usize) -> Vec<[isize; 3]> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs() + dy.abs() + dz.abs() <= r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// `outside` is the value assumed beyond the volume border.
fn morph(mask: &[bool], dims: [usize; 3], se: &[[isize; 3]], dilate: bool) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let outside = !dilate;
    let mut out = Vec::with_capacity(mask.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let hit = |o: &[isize; 3]| {
                    let (px, py, pz) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
                    if px < 0 || py < 0 || pz < 0 || px >= nx as isize || py >= ny as isize || pz >= nz as isize {
                        outside
                    } else {
                        mask[px as usize + nx * (py as usize + ny * pz as usize)]
                    }
                };
                out.push(if dilate { se.iter().any(hit) } else { se.iter().all(hit) });
            }
        }
    }
    out
}

/// Dilation then erosion with the 6-connected ball of `radius` voxels.
/// Out-of-volume voxels count as background for the dilation and as
/// foreground for the erosion, so the border never eats into the mask.
pub fn morphological_closing(mask: &Volume3D, radius: usize) -> Result<Volume3D> {
    mask.expect_kind(VolumeKind::Mask)?;
    let se = ball(radius);
    let bits: Vec<bool> = mask.data().iter().map(|&v| v != 0.0).collect();
    let dilated = morph(&bits, mask.dims(), &se, true);
    let closed = morph(&dilated, mask.dims(), &se, false);
    mask.with_data(VolumeKind::Mask, closed.into_iter().map(f64::from).collect::<Vec<_>>())
}
