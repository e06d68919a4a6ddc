//! Scalar 3D grids and the geometry operations shared by every stage.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// What the scalars of a [`Volume3D`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VolumeKind {
    /// CT intensities in Hounsfield units.
    Hu,
    /// Values in `[0, 1]`.
    Probability,
    /// Values in `{0, 1}`.
    Mask,
}

impl VolumeKind {
    pub fn name(self) -> &'static str {
        match self {
            VolumeKind::Hu => "HU",
            VolumeKind::Probability => "probability",
            VolumeKind::Mask => "mask",
        }
    }

    fn accepts(self, v: f64) -> bool {
        match self {
            VolumeKind::Hu => v.is_finite(),
            VolumeKind::Probability => (0.0..=1.0).contains(&v),
            VolumeKind::Mask => v == 0.0 || v == 1.0,
        }
    }
}

/// A scalar 3D grid with voxel spacing in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f64; 3],
    kind: VolumeKind,
    data: Vec<f64>,
}

impl Volume3D {
    /// Builds a volume, checking every invariant of `kind`.
    pub fn new(dims: [usize; 3], spacing: [f64; 3], kind: VolumeKind, data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidSpacing(spacing));
        }
        let expected = voxel_count(dims);
        if data.len() != expected {
            return Err(Error::DataLength {
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !kind.accepts(**v)) {
            return Err(Error::InvalidValue {
                kind: kind.name(),
                index,
                value,
            });
        }
        Ok(Self {
            dims,
            spacing,
            kind,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], kind: VolumeKind, value: f64) -> Result<Self> {
        check_dims(dims)?;
        Self::new(dims, spacing, kind, vec![value; voxel_count(dims)])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        kind: VolumeKind,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, kind, data)
    }

    /// Same geometry, new contents.
    pub fn with_data(&self, kind: VolumeKind, data: Vec<f64>) -> Result<Self> {
        Self::new(self.dims, self.spacing, kind, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    /// Inverse of [`Volume3D::index`].
    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn expect_kind(&self, kind: VolumeKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::WrongKind {
                expected: kind.name(),
                actual: self.kind.name(),
            })
        }
    }

    /// Number of voxels equal to 1 in a mask.
    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

pub(crate) fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.contains(&0) {
        Err(Error::InvalidDims(dims))
    } else {
        Ok(())
    }
}

#[inline]
pub(crate) fn voxel_count(dims: [usize; 3]) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// Mirror reflection without edge duplication: `-1 -> 1`, `n -> n - 2`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Copies the box `[origin, origin + size)` out of a raw grid, mirror-padding
/// anything that falls outside it.
pub(crate) fn extract_region_raw(data: &[f64], dims: [usize; 3], origin: [isize; 3], size: [usize; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(voxel_count(size));
    let xs: Vec<usize> = (0..size[0]).map(|i| reflect(origin[0] + i as isize, dims[0])).collect();
    for k in 0..size[2] {
        let z = reflect(origin[2] + k as isize, dims[2]);
        for j in 0..size[1] {
            let y = reflect(origin[1] + j as isize, dims[1]);
            let row = dims[0] * (y + dims[1] * z);
            out.extend(xs.iter().map(|&x| data[row + x]));
        }
    }
    out
}

/// Mirror-padded box extraction with an arbitrary (possibly negative) origin.
pub fn extract_region(vol: &Volume3D, origin: [isize; 3], size: [usize; 3]) -> Result<Volume3D> {
    check_dims(size)?;
    let data = extract_region_raw(&vol.data, vol.dims, origin, size);
    Ok(Volume3D {
        dims: size,
        spacing: vol.spacing,
        kind: vol.kind,
        data,
    })
}

/// Odd-sized sub-volume centred on `center`, mirror-padded at the borders.
pub fn extract_subvolume(vol: &Volume3D, center: [usize; 3], size: [usize; 3]) -> Result<Volume3D> {
    if size.iter().any(|s| s % 2 == 0) {
        return Err(Error::EvenSize(size));
    }
    let origin = core::array::from_fn(|a| center[a] as isize - (size[a] / 2) as isize);
    extract_region(vol, origin, size)
}

pub(crate) fn downsample2_raw(data: &[f64], dims: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
    let out_dims = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
    let mut out = Vec::with_capacity(voxel_count(out_dims));
    for z in 0..out_dims[2] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                let mut sum = 0.0;
                for dz in 0..2 {
                    for dy in 0..2 {
                        let row = dims[0] * (2 * y + dy + dims[1] * (2 * z + dz));
                        sum += data[row + 2 * x] + data[row + 2 * x + 1];
                    }
                }
                out.push(sum / 8.0);
            }
        }
    }
    (out, out_dims)
}

/// 2x2x2 block-mean reduction; trailing odd slabs are dropped.
pub fn downsample2(vol: &Volume3D) -> Result<Volume3D> {
    if vol.dims.iter().any(|&d| d < 2) {
        return Err(Error::TooSmall { dims: vol.dims, min: 2 });
    }
    let (data, dims) = downsample2_raw(&vol.data, vol.dims);
    let kind = match vol.kind {
        // Block means of a mask are fractions.
        VolumeKind::Mask => VolumeKind::Probability,
        k => k,
    };
    Ok(Volume3D {
        dims,
        spacing: [vol.spacing[0] * 2.0, vol.spacing[1] * 2.0, vol.spacing[2] * 2.0],
        kind,
        data,
    })
}

pub(crate) fn check_upsample_target(dims: [usize; 3], target: [usize; 3]) -> Result<()> {
    if (0..3).any(|a| target[a] + 1 < 2 * dims[a] || target[a] > 2 * dims[a]) {
        return Err(Error::UpsampleTarget { dims, target });
    }
    Ok(())
}

/// Nearest-neighbour x2 repetition followed by a centre crop to `target`.
pub(crate) fn upsample2_raw(data: &[f64], dims: [usize; 3], target: [usize; 3]) -> Vec<f64> {
    let off: [usize; 3] = core::array::from_fn(|a| (2 * dims[a] - target[a]) / 2);
    let xs: Vec<usize> = (0..target[0]).map(|u| (u + off[0]) / 2).collect();
    let mut out = Vec::with_capacity(voxel_count(target));
    for w in 0..target[2] {
        let z = (w + off[2]) / 2;
        for v in 0..target[1] {
            let y = (v + off[1]) / 2;
            let row = dims[0] * (y + dims[1] * z);
            out.extend(xs.iter().map(|&x| data[row + x]));
        }
    }
    out
}

pub fn upsample2_nearest(vol: &Volume3D, target_dims: [usize; 3]) -> Result<Volume3D> {
    check_upsample_target(vol.dims, target_dims)?;
    Ok(Volume3D {
        dims: target_dims,
        spacing: [vol.spacing[0] / 2.0, vol.spacing[1] / 2.0, vol.spacing[2] / 2.0],
        kind: vol.kind,
        data: upsample2_raw(&vol.data, vol.dims, target_dims),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume3D {
        let n = voxel_count(dims);
        Volume3D::new(dims, [1.0, 1.0, 2.0], VolumeKind::Hu, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn constructor_checks_invariants() {
        assert!(Volume3D::new([2, 2, 2], [1.0; 3], VolumeKind::Hu, vec![0.0; 7]).is_err());
        assert!(Volume3D::new([0, 2, 2], [1.0; 3], VolumeKind::Hu, vec![]).is_err());
        assert!(Volume3D::new([1, 1, 1], [1.0, 0.0, 1.0], VolumeKind::Hu, vec![0.0]).is_err());
        assert!(Volume3D::new([1, 1, 1], [1.0; 3], VolumeKind::Probability, vec![1.5]).is_err());
        assert!(Volume3D::new([1, 1, 1], [1.0; 3], VolumeKind::Mask, vec![0.5]).is_err());
        assert!(Volume3D::new([1, 1, 1], [1.0; 3], VolumeKind::Mask, vec![1.0]).is_ok());
    }

    #[test]
    fn reflect_is_mirror_without_edge_repeat() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(4, 5), 4);
        assert_eq!(reflect(-7, 1), 0);
        assert_eq!(reflect(9, 3), 1);
    }

    #[test]
    fn interior_subvolume_is_plain_copy() {
        let v = ramp([5, 5, 5]);
        let s = extract_subvolume(&v, [2, 2, 2], [3, 3, 3]).unwrap();
        assert_eq!(s.dims(), [3, 3, 3]);
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    assert_eq!(s.get(x, y, z), v.get(x + 1, y + 1, z + 1));
                }
            }
        }
        assert_eq!(s.spacing(), v.spacing());
    }

    #[test]
    fn corner_subvolume_is_mirror_padded() {
        let v = ramp([4, 4, 4]);
        let s = extract_subvolume(&v, [0, 0, 0], [3, 3, 3]).unwrap();
        // s(0,1,1) sits at offset (-1,0,0) from the centre.
        assert_eq!(s.get(0, 1, 1), v.get(1, 0, 0));
        assert_eq!(s.get(1, 1, 1), v.get(0, 0, 0));
        assert_eq!(s.get(0, 0, 0), v.get(1, 1, 1));
    }

    #[test]
    fn even_subvolume_rejected() {
        let v = ramp([5, 5, 5]);
        assert_eq!(extract_subvolume(&v, [2, 2, 2], [4, 3, 3]), Err(Error::EvenSize([4, 3, 3])));
    }

    #[test]
    fn full_size_subvolume_is_identity() {
        let v = ramp([5, 3, 7]);
        assert_eq!(extract_subvolume(&v, [2, 1, 3], [5, 3, 7]).unwrap(), v);
    }

    #[test]
    fn downsample_examples() {
        let v = ramp([2, 2, 2]);
        let d = downsample2(&v).unwrap();
        assert_eq!(d.dims(), [1, 1, 1]);
        assert_eq!(d.data(), &[3.5]);
        assert_eq!(d.spacing(), [2.0, 2.0, 4.0]);

        let c = Volume3D::filled([6, 4, 4], [1.0; 3], VolumeKind::Hu, -3.25).unwrap();
        assert!(downsample2(&c).unwrap().data().iter().all(|&x| x == -3.25));

        assert_eq!(downsample2(&ramp([5, 4, 4])).unwrap().dims(), [2, 2, 2]);
        assert!(downsample2(&ramp([1, 4, 4])).is_err());
    }

    #[test]
    fn upsample_examples() {
        let one = Volume3D::filled([1, 1, 1], [1.0; 3], VolumeKind::Hu, 5.0).unwrap();
        let u = upsample2_nearest(&one, [2, 2, 2]).unwrap();
        assert_eq!(u.data(), &[5.0; 8]);
        assert!(upsample2_nearest(&one, [3, 2, 2]).is_err());
        assert!(upsample2_nearest(&ramp([3, 3, 3]), [4, 6, 6]).is_err());
    }

    #[test]
    fn upsample_matches_index_mapping_oracle() {
        let v = ramp([3, 3, 3]);
        // Oracle: materialise the doubled 6^3 grid voxel by voxel, then crop.
        let mut doubled = [[[0.0; 6]; 6]; 6];
        for (w, plane) in doubled.iter_mut().enumerate() {
            for (q, row) in plane.iter_mut().enumerate() {
                for (p, cell) in row.iter_mut().enumerate() {
                    *cell = v.get(p / 2, q / 2, w / 2);
                }
            }
        }
        for target in [[6, 6, 6], [5, 5, 5], [5, 6, 5], [6, 5, 6]] {
            let u = upsample2_nearest(&v, target).unwrap();
            let off: [usize; 3] = core::array::from_fn(|a| (6 - target[a]) / 2);
            for w in 0..target[2] {
                for q in 0..target[1] {
                    for p in 0..target[0] {
                        assert_eq!(u.get(p, q, w), doubled[w + off[2]][q + off[1]][p + off[0]]);
                    }
                }
            }
        }
    }
}
