//! Per-slice active contour: one in-plane point per axial slice, pulled
//! towards high network probability and held together by a membrane term,
//! then turned into a linear distance falloff map.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::volume::{reflect, Volume3D, VolumeKind};

/// Distance in mm at which the centerline map reaches zero.
pub const FALLOFF_MM: f64 = 25.0;

/// One `(x, y)` voxel-space point per axial slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    points: Vec<[f64; 2]>,
}

impl Centerline {
    /// Checks there is one point per slice of `dims`, each inside the slice.
    pub fn new(points: Vec<[f64; 2]>, dims: [usize; 3]) -> Result<Self> {
        if points.len() != dims[2] {
            return Err(Error::Shape(format!("{} centerline points for {} slices", points.len(), dims[2])));
        }
        let inside = |p: &[f64; 2]| {
            (0.0..=(dims[0] - 1) as f64).contains(&p[0]) && (0.0..=(dims[1] - 1) as f64).contains(&p[1])
        };
        if let Some(z) = points.iter().position(|p| !inside(p)) {
            return Err(Error::Shape(format!("centerline point {:?} on slice {z} is outside the slice", points[z])));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcmConfig {
    /// Membrane weight, in probability per voxel^2.
    pub alpha: f64,
    /// Initial proximal-gradient step.
    pub step: f64,
    pub max_iters: usize,
    /// Stop once the largest point displacement falls below this (voxels).
    pub tol: f64,
}

impl Default for AcmConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            step: 0.5,
            max_iters: 500,
            tol: 1e-3,
        }
    }
}

impl AcmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.step > 0.0) || self.max_iters == 0 || !(self.tol >= 0.0) {
            return Err(Error::Config(format!("invalid active contour settings {self:?}")));
        }
        Ok(())
    }
}

/// Probability-weighted centroid of every slice. Slices with almost no mass
/// copy the nearest slice that has some; with none at all, the slice centre.
pub fn init_centerline(probmap: &Volume3D) -> Result<Centerline> {
    probmap.expect_kind(VolumeKind::Probability)?;
    let [nx, ny, nz] = probmap.dims();
    let data = probmap.data();
    let mut found: Vec<Option<[f64; 2]>> = Vec::with_capacity(nz);
    for z in 0..nz {
        let (mut m, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for y in 0..ny {
            for x in 0..nx {
                let p = data[x + nx * (y + ny * z)];
                m += p;
                sx += p * x as f64;
                sy += p * y as f64;
            }
        }
        found.push((m >= 1e-6).then(|| [sx / m, sy / m]));
    }
    let center = [(nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0];
    let points = (0..nz)
        .map(|z| {
            if let Some(p) = found[z] {
                return p;
            }
            (1..nz)
                .find_map(|d| {
                    let below = z.checked_sub(d).and_then(|i| found[i]);
                    below.or_else(|| found.get(z + d).copied().flatten())
                })
                .unwrap_or(center)
        })
        .collect();
    Centerline::new(points, probmap.dims())
}

/// 3^3 box mean with mirror borders.
fn box_smooth(vol: &Volume3D) -> Vec<f64> {
    let [nx, ny, nz] = vol.dims();
    let d = vol.data();
    let mut out = Vec::with_capacity(d.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut s = 0.0;
                for dz in -1..=1isize {
                    let zz = reflect(z as isize + dz, nz);
                    for dy in -1..=1isize {
                        let yy = reflect(y as isize + dy, ny);
                        for dx in -1..=1isize {
                            s += d[reflect(x as isize + dx, nx) + nx * (yy + ny * zz)];
                        }
                    }
                }
                out.push(s / 27.0);
            }
        }
    }
    out
}

/// Smoothed probability slices with their central-difference gradients.
struct Field {
    dims: [usize; 3],
    value: Vec<f64>,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
}

impl Field {
    fn new(probmap: &Volume3D) -> Self {
        let dims = probmap.dims();
        let [nx, ny, nz] = dims;
        let value = box_smooth(probmap);
        let mut grad_x = vec![0.0; value.len()];
        let mut grad_y = vec![0.0; value.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = x + nx * (y + ny * z);
                    let at = |xx: usize, yy: usize| value[xx + nx * (yy + ny * z)];
                    let (xl, xr) = (x.saturating_sub(1), (x + 1).min(nx - 1));
                    let (yl, yr) = (y.saturating_sub(1), (y + 1).min(ny - 1));
                    if xr > xl {
                        grad_x[i] = (at(xr, y) - at(xl, y)) / (xr - xl) as f64;
                    }
                    if yr > yl {
                        grad_y[i] = (at(x, yr) - at(x, yl)) / (yr - yl) as f64;
                    }
                }
            }
        }
        Self {
            dims,
            value,
            grad_x,
            grad_y,
        }
    }

    fn bilinear(&self, grid: &[f64], z: usize, p: [f64; 2]) -> f64 {
        let [nx, ny, _] = self.dims;
        let cell = |v: f64, n: usize| -> (usize, usize, f64) {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let i = (v.floor().max(0.0) as usize).min(n - 2);
            (i, i + 1, v - i as f64)
        };
        let (x0, x1, fx) = cell(p[0], nx);
        let (y0, y1, fy) = cell(p[1], ny);
        let at = |x: usize, y: usize| grid[x + nx * (y + ny * z)];
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    fn energy(&self, pts: &[[f64; 2]], alpha: f64) -> f64 {
        let data: f64 = pts.iter().enumerate().map(|(z, &p)| -self.bilinear(&self.value, z, p)).sum();
        let smooth: f64 = pts
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2))
            .sum();
        data + alpha * smooth
    }
}

/// Solves `(I + c L) u = rhs` for the path-graph Laplacian `L` (Thomas algorithm).
fn solve_membrane(rhs: &[f64], c: f64) -> Vec<f64> {
    let n = rhs.len();
    if n <= 1 || c == 0.0 {
        return rhs.to_vec();
    }
    let diag = |i: usize| 1.0 + c * if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = -c / diag(0);
    dp[0] = rhs[0] / diag(0);
    for i in 1..n {
        let m = diag(i) + c * cp[i - 1];
        cp[i] = -c / m;
        dp[i] = (rhs[i] + c * dp[i - 1]) / m;
    }
    let mut u = vec![0.0; n];
    u[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        u[i] = dp[i] - cp[i] * u[i + 1];
    }
    u
}

/// Result of a contour fit with its energy trace.
#[derive(Debug, Clone)]
pub struct AcmFit {
    pub centerline: Centerline,
    /// Energy of the initial contour followed by every accepted iterate.
    pub energy: Vec<f64>,
    pub iterations: usize,
}

/// Fits from the probability-weighted initialisation.
pub fn fit_centerline(probmap: &Volume3D, cfg: &AcmConfig) -> Result<Centerline> {
    let init = init_centerline(probmap)?;
    Ok(fit_centerline_from(probmap, &init, cfg)?.centerline)
}

/// Proximal-gradient minimisation of
/// `E = -sum_z P(p_z) + alpha * sum_z |p_{z+1} - p_z|^2`,
/// where `P` is the box-smoothed map sampled bilinearly. The attraction term
/// takes an explicit step; the membrane term is solved implicitly. A step
/// that raises `E` is halved and retried.
pub fn fit_centerline_from(probmap: &Volume3D, init: &Centerline, cfg: &AcmConfig) -> Result<AcmFit> {
    probmap.expect_kind(VolumeKind::Probability)?;
    cfg.validate()?;
    let dims = probmap.dims();
    if init.points.len() != dims[2] {
        return Err(Error::Shape(format!("{} centerline points for {} slices", init.points.len(), dims[2])));
    }
    let field = Field::new(probmap);
    let (xmax, ymax) = ((dims[0] - 1) as f64, (dims[1] - 1) as f64);
    let mut pts = init.points.clone();
    let mut energy = field.energy(&pts, cfg.alpha);
    let mut trace = vec![energy];
    let mut step = cfg.step;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut qx = Vec::with_capacity(pts.len());
        let mut qy = Vec::with_capacity(pts.len());
        for (z, p) in pts.iter().enumerate() {
            qx.push(p[0] + step * field.bilinear(&field.grad_x, z, *p));
            qy.push(p[1] + step * field.bilinear(&field.grad_y, z, *p));
        }
        let c = 2.0 * cfg.alpha * step;
        let nx_ = solve_membrane(&qx, c);
        let ny_ = solve_membrane(&qy, c);
        let candidate: Vec<[f64; 2]> = nx_
            .into_iter()
            .zip(ny_)
            .map(|(x, y)| [x.clamp(0.0, xmax), y.clamp(0.0, ymax)])
            .collect();
        let moved = pts
            .iter()
            .zip(&candidate)
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            .fold(0.0, f64::max);
        let e = field.energy(&candidate, cfg.alpha);
        if e <= energy {
            pts = candidate;
            energy = e;
            trace.push(e);
            if moved < cfg.tol {
                break;
            }
            step = (2.0 * step).min(cfg.step);
        } else {
            if moved < cfg.tol {
                break;
            }
            step /= 2.0;
        }
    }
    Ok(AcmFit {
        centerline: Centerline::new(pts, dims)?,
        energy: trace,
        iterations,
    })
}

fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// `max(0, 1 - d / 25 mm)` with `d` the 3D distance in mm from each voxel to
/// the polyline through the centerline points.
pub fn centerline_distance_map(c: &Centerline, geometry: &Volume3D) -> Result<Volume3D> {
    let dims = geometry.dims();
    let [nx, ny, nz] = dims;
    if c.points.len() != nz {
        return Err(Error::Shape(format!("{} centerline points for {nz} slices", c.points.len())));
    }
    let [sx, sy, sz] = geometry.spacing();
    let mm: Vec<[f64; 3]> = c
        .points
        .iter()
        .enumerate()
        .map(|(z, p)| [p[0] * sx, p[1] * sy, z as f64 * sz])
        .collect();
    let mut data = Vec::with_capacity(geometry.len());
    for k in 0..nz {
        let zmm = k as f64 * sz;
        // Segments whose slab is farther than the falloff cannot contribute.
        let reach = (FALLOFF_MM / sz).ceil() as usize + 1;
        let first = k.saturating_sub(reach);
        let last = (k + reach).min(nz.saturating_sub(2));
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64 * sx, y as f64 * sy, zmm];
                let d = if nz == 1 {
                    point_segment_distance(p, mm[0], mm[0])
                } else {
                    (first..=last)
                        .map(|s| point_segment_distance(p, mm[s], mm[s + 1]))
                        .fold(f64::INFINITY, f64::min)
                };
                data.push((1.0 - d / FALLOFF_MM).max(0.0));
            }
        }
    }
    geometry.with_data(VolumeKind::Probability, data)
}
