//! Synthetic CT of a wobbling soft-tissue tube in textured background, with
//! air pockets inside the tube and distractors outside it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::volume::{Volume3D, VolumeKind};

/// Lowest and highest HU a generated voxel can take.
pub const HU_RANGE: (f64, f64) = (-1024.0, 3071.0);

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    /// Voxel spacing in mm.
    pub spacing: [f64; 3],
    /// Tube radius range in mm; each phantom draws its own band inside it.
    pub radius_mm: (f64, f64),
    /// Peak in-plane excursion of the centerline from its mean, in voxels.
    pub wobble: f64,
    /// Period of the slowest centerline oscillation, in slices.
    pub wobble_period: f64,
    /// Largest random offset of the tube's mean position from the slice centre, in voxels.
    pub center_jitter: f64,
    /// Independent per-slice displacement of the tube, in voxels (motion artefact).
    pub slice_jitter: f64,
    pub tissue_hu: (f64, f64),
    pub background_hu: (f64, f64),
    /// Fat layer around each tube: HU mean and thickness in mm.
    pub sheath_hu: f64,
    pub sheath_mm: f64,
    /// Number of bright and dark ellipsoids outside the tube.
    pub blobs: usize,
    /// Adds a thin tissue-like second tube.
    pub second_tube: bool,
    /// Least in-plane distance in mm between the two tube centrelines.
    pub second_tube_distance_mm: f64,
    pub air_pocket_probability: f64,
    pub air_hu: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [64, 64, 48],
            spacing: [1.0, 1.0, 3.0],
            radius_mm: (3.0, 8.0),
            wobble: 4.0,
            wobble_period: 32.0,
            center_jitter: 3.0,
            slice_jitter: 0.0,
            tissue_hu: (30.0, 15.0),
            background_hu: (60.0, 40.0),
            sheath_hu: -90.0,
            sheath_mm: 2.0,
            blobs: 4,
            second_tube: true,
            second_tube_distance_mm: 31.0,
            air_pocket_probability: 0.2,
            air_hu: -800.0,
            noise_std: 5.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("phantom: {what}")));
        if self.dims[0] < 32 || self.dims[1] < 32 || self.dims[2] == 0 {
            return bad("dims must be at least 32 in-plane and have one slice");
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("spacing must be positive");
        }
        let (lo, hi) = self.radius_mm;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("radius range must be positive and ordered");
        }
        let non_negative = [
            self.wobble,
            self.center_jitter,
            self.slice_jitter,
            self.tissue_hu.1,
            self.background_hu.1,
            self.sheath_mm,
            self.second_tube_distance_mm,
            self.noise_std,
        ];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("wobble, jitter, standard deviations and distances must be finite and >= 0");
        }
        if !(self.wobble_period > 0.0) {
            return bad("wobble period must be positive");
        }
        if !(0.0..=1.0).contains(&self.air_pocket_probability) {
            return bad("air pocket probability must lie in [0, 1]");
        }
        let means = [self.tissue_hu.0, self.background_hu.0, self.sheath_hu, self.air_hu];
        if means.iter().any(|v| !v.is_finite()) {
            return bad("HU means must be finite");
        }
        Ok(())
    }
}

/// A generated case with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ct: Volume3D,
    pub mask: Volume3D,
    /// Tube voxels filled with air.
    pub air: Volume3D,
    /// True in-plane tube centre `(x, y)` per slice, in voxels.
    pub centerline: Vec<[f64; 2]>,
    /// Tube radius per slice, in mm.
    pub radii_mm: Vec<f64>,
}

/// Smooth in-plane path: two sinusoids per axis with random phases.
fn wobble_path(rng: &mut ChaCha8Rng, nz: usize, mean: [f64; 2], amplitude: f64, period: f64) -> Vec<[f64; 2]> {
    let mut phase = || rng.random_range(0.0..2.0 * PI);
    let phases = [[phase(), phase()], [phase(), phase()]];
    (0..nz)
        .map(|z| {
            let t = 2.0 * PI * z as f64 / period;
            core::array::from_fn(|a| {
                mean[a] + amplitude * (0.7 * (t + phases[a][0]).sin() + 0.3 * (2.0 * t + phases[a][1]).sin())
            })
        })
        .collect()
}

fn in_plane_mm(spacing: [f64; 3], x: f64, y: f64, c: [f64; 2]) -> f64 {
    ((x - c[0]) * spacing[0]).hypot((y - c[1]) * spacing[1])
}

/// Zero-mean, unit-variance smooth noise: white noise through three box blurs.
fn texture(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Vec<f64> {
    let n = dims[0] * dims[1] * dims[2];
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let radii = [2usize, 2, 1];
    let mut tmp = vec![0.0; n];
    for _ in 0..3 {
        for axis in 0..3 {
            let (len, stride, r) = (dims[axis], strides[axis], radii[axis]);
            for (i, out) in tmp.iter_mut().enumerate() {
                let pos = (i / stride) % len;
                let lo = pos.saturating_sub(r);
                let hi = (pos + r).min(len - 1);
                let base = i - pos * stride;
                let sum: f64 = (lo..=hi).map(|p| v[base + p * stride]).sum();
                *out = sum / (hi - lo + 1) as f64;
            }
            core::mem::swap(&mut v, &mut tmp);
        }
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt().max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    v
}

/// Generates one phantom; the output is a pure function of `cfg`.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let [nx, ny, nz] = cfg.dims;
    let sp = cfg.spacing;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let jitter = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let slice_centre = [(nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0];
    let mean = [
        slice_centre[0] + jitter(&mut rng, cfg.center_jitter),
        slice_centre[1] + jitter(&mut rng, cfg.center_jitter),
    ];
    let mut centerline = wobble_path(&mut rng, nz, mean, cfg.wobble, cfg.wobble_period);
    for p in centerline.iter_mut() {
        p[0] += jitter(&mut rng, cfg.slice_jitter);
        p[1] += jitter(&mut rng, cfg.slice_jitter);
    }

    let (rmin, rmax) = cfg.radius_mm;
    let (a, b) = (rng.random_range(rmin..=rmax), rng.random_range(rmin..=rmax));
    let (r_lo, r_hi) = (a.min(b), a.max(b));
    let r_phase = rng.random_range(0.0..2.0 * PI);
    let r_period = cfg.wobble_period * rng.random_range(1.0..2.0);
    let radii_mm: Vec<f64> = (0..nz)
        .map(|z| r_lo + (r_hi - r_lo) * (0.5 + 0.5 * (2.0 * PI * z as f64 / r_period + r_phase).sin()))
        .collect();

    let tissue = Normal::new(cfg.tissue_hu.0, cfg.tissue_hu.1).map_err(|_| Error::Config("tissue HU".into()))?;
    let n = nx * ny * nz;
    let mut mask = vec![0.0; n];
    let mut air = vec![0.0; n];
    let mut ct: Vec<f64> = texture(&mut rng, cfg.dims)
        .into_iter()
        .map(|t| cfg.background_hu.0 + cfg.background_hu.1 * t)
        .collect();

    // Fat sheath of both tubes first, so tube interiors overwrite it.
    let second = if cfg.second_tube {
        place_second_tube(&mut rng, cfg, &centerline, &radii_mm)
    } else {
        None
    };
    let mut tubes: Vec<(&[[f64; 2]], Vec<f64>)> = vec![(&centerline, radii_mm.clone())];
    if let Some((path, r)) = &second {
        tubes.push((path, vec![*r; nz]));
    }
    for (path, radii) in &tubes {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let d = in_plane_mm(sp, x as f64, y as f64, path[z]);
                    if d > radii[z] && d <= radii[z] + cfg.sheath_mm {
                        ct[x + nx * (y + ny * z)] = cfg.sheath_hu;
                    }
                }
            }
        }
    }

    for z in 0..nz {
        let c = centerline[z];
        let r = radii_mm[z];
        let pocket = rng.random_bool(cfg.air_pocket_probability).then(|| {
            let angle = rng.random_range(0.0..2.0 * PI);
            let off = rng.random_range(0.0..=0.3) * r;
            let centre = [c[0] + off * angle.cos() / sp[0], c[1] + off * angle.sin() / sp[1]];
            (centre, rng.random_range(0.3..=0.6) * r)
        });
        for y in 0..ny {
            for x in 0..nx {
                if in_plane_mm(sp, x as f64, y as f64, c) > r {
                    continue;
                }
                let i = x + nx * (y + ny * z);
                mask[i] = 1.0;
                let in_air = pocket.is_some_and(|(pc, pr)| in_plane_mm(sp, x as f64, y as f64, pc) <= pr);
                if in_air {
                    air[i] = 1.0;
                    ct[i] = cfg.air_hu;
                } else {
                    ct[i] = tissue.sample(&mut rng);
                }
            }
        }
    }

    if let Some((path, r)) = &second {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if in_plane_mm(sp, x as f64, y as f64, path[z]) <= *r {
                        ct[x + nx * (y + ny * z)] = tissue.sample(&mut rng);
                    }
                }
            }
        }
    }

    for k in 0..cfg.blobs {
        let hu = if k % 2 == 0 { 250.0 } else { -700.0 };
        if let Some((centre, radius)) = place_blob(&mut rng, cfg, &tubes) {
            paint_blob(&mut ct, cfg, centre, radius, hu);
        }
    }

    if cfg.noise_std > 0.0 {
        for v in ct.iter_mut() {
            *v += cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for v in ct.iter_mut() {
        *v = v.round().clamp(HU_RANGE.0, HU_RANGE.1);
    }

    Ok(Phantom {
        ct: Volume3D::new(cfg.dims, sp, VolumeKind::Hu, ct)?,
        mask: Volume3D::new(cfg.dims, sp, VolumeKind::Mask, mask)?,
        air: Volume3D::new(cfg.dims, sp, VolumeKind::Mask, air)?,
        centerline,
        radii_mm,
    })
}

/// Rejection-samples a thin tube that keeps its distance from the main one
/// on every slice. Gives up (no second tube) after a fixed number of tries.
fn place_second_tube(
    rng: &mut ChaCha8Rng,
    cfg: &PhantomConfig,
    main: &[[f64; 2]],
    main_radii: &[f64],
) -> Option<(Vec<[f64; 2]>, f64)> {
    let [nx, ny, nz] = cfg.dims;
    let sp = cfg.spacing;
    let radius = rng.random_range(2.0..=3.5f64).min(cfg.radius_mm.1);
    let amplitude = cfg.wobble / 2.0;
    let margin = [
        amplitude + (radius + cfg.sheath_mm) / sp[0] + 1.0,
        amplitude + (radius + cfg.sheath_mm) / sp[1] + 1.0,
    ];
    if 2.0 * margin[0] >= (nx - 1) as f64 || 2.0 * margin[1] >= (ny - 1) as f64 {
        return None;
    }
    for _ in 0..200 {
        let mean = [
            rng.random_range(margin[0]..=(nx - 1) as f64 - margin[0]),
            rng.random_range(margin[1]..=(ny - 1) as f64 - margin[1]),
        ];
        let path = wobble_path(rng, nz, mean, amplitude, cfg.wobble_period);
        let clear = (0..nz).all(|z| {
            let d = in_plane_mm(sp, path[z][0], path[z][1], main[z]);
            d >= cfg.second_tube_distance_mm && d >= main_radii[z] + radius + 2.0 * cfg.sheath_mm
        });
        if clear {
            return Some((path, radius));
        }
    }
    None
}

/// Picks a blob centre (voxels) and radius (mm) clear of every tube sheath.
fn place_blob(rng: &mut ChaCha8Rng, cfg: &PhantomConfig, tubes: &[(&[[f64; 2]], Vec<f64>)]) -> Option<([f64; 3], f64)> {
    let [nx, ny, nz] = cfg.dims;
    let sp = cfg.spacing;
    for _ in 0..100 {
        let radius = rng.random_range(3.0..=7.0f64);
        let centre = [
            rng.random_range(0.0..(nx - 1) as f64),
            rng.random_range(0.0..(ny - 1) as f64),
            rng.random_range(0.0..(nz - 1).max(1) as f64),
        ];
        let reach = (radius / sp[2]).ceil() as isize;
        let zc = centre[2].round() as isize;
        let clear = (zc - reach..=zc + reach).filter(|&z| z >= 0 && z < nz as isize).all(|z| {
            tubes.iter().all(|(path, radii)| {
                let z = z as usize;
                in_plane_mm(sp, centre[0], centre[1], path[z]) > radii[z] + cfg.sheath_mm + radius + 1.0
            })
        });
        if clear {
            return Some((centre, radius));
        }
    }
    None
}

fn paint_blob(ct: &mut [f64], cfg: &PhantomConfig, centre: [f64; 3], radius: f64, hu: f64) {
    let [nx, ny, nz] = cfg.dims;
    let sp = cfg.spacing;
    for z in 0..nz {
        let dz = (z as f64 - centre[2]) * sp[2];
        if dz.abs() > radius {
            continue;
        }
        for y in 0..ny {
            for x in 0..nx {
                let d2 = in_plane_mm(sp, x as f64, y as f64, [centre[0], centre[1]]).powi(2) + dz * dz;
                if d2 <= radius * radius {
                    ct[x + nx * (y + ny * z)] = hu;
                }
            }
        }
    }
}
