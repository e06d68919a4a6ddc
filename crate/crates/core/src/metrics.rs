//! Overlap and surface-distance scores between binary masks, and the paired
//! Wilcoxon signed-rank test used to compare two pipelines.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::volume::{Volume3D, VolumeKind};

fn check_pair(a: &Volume3D, b: &Volume3D) -> Result<()> {
    a.expect_kind(VolumeKind::Mask)?;
    b.expect_kind(VolumeKind::Mask)?;
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("mask {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `2 |A ∩ B| / (|A| + |B|)`.
pub fn dice(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    check_pair(a, b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x != 0.0, y != 0.0);
        na += usize::from(x);
        nb += usize::from(y);
        both += usize::from(x && y);
    }
    if na + nb == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Mask voxels with at least one 6-neighbour outside the mask or the volume.
pub fn surface_voxels(m: &Volume3D) -> Result<Vec<usize>> {
    m.expect_kind(VolumeKind::Mask)?;
    let [nx, ny, nz] = m.dims();
    let d = m.data();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                if d[i] == 0.0 {
                    continue;
                }
                let on_border = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                let open = on_border
                    || d[i - 1] == 0.0
                    || d[i + 1] == 0.0
                    || d[i - nx] == 0.0
                    || d[i + nx] == 0.0
                    || d[i - nx * ny] == 0.0
                    || d[i + nx * ny] == 0.0;
                if open {
                    out.push(i);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(out)
}

/// 1D squared distance transform along one line (lower envelope of
/// parabolas). `f` holds squared distances so far, `INFINITY` where unknown;
/// `s` is the sample spacing.
fn edt_line(f: &[f64], s: f64, out: &mut [f64], v: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    v.clear();
    bounds.clear();
    let pos = |q: usize| q as f64 * s;
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    break;
                }
                Some(&p) => {
                    let x = ((fq + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if bounds.last().is_some_and(|&b| x <= b) {
                        v.pop();
                        bounds.pop();
                    } else {
                        bounds.push(x);
                        v.push(q);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = pos(q);
        while k < bounds.len() && bounds[k] < x {
            k += 1;
        }
        let p = v[k];
        let d = x - pos(p);
        *o = d * d + f[p];
    }
}

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// voxel of `sites`.
fn squared_distance_field(dims: [usize; 3], spacing: [f64; 3], sites: &[usize]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut g = vec![f64::INFINITY; nx * ny * nz];
    for &i in sites {
        g[i] = 0.0;
    }
    let strides = [1, nx, nx * ny];
    let mut line = Vec::new();
    let mut out = Vec::new();
    let (mut v, mut bounds) = (Vec::new(), Vec::new());
    for a in 0..3 {
        let n = dims[a];
        line.resize(n, 0.0);
        out.resize(n, 0.0);
        let (b, c) = match a {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for j in 0..dims[c] {
            for i in 0..dims[b] {
                let base = i * strides[b] + j * strides[c];
                for (q, l) in line.iter_mut().enumerate() {
                    *l = g[base + q * strides[a]];
                }
                edt_line(&line, spacing[a], &mut out, &mut v, &mut bounds);
                for (q, &o) in out.iter().enumerate() {
                    g[base + q * strides[a]] = o;
                }
            }
        }
    }
    g
}

/// Distances (mm) from each surface voxel of one mask to the surface of the other.
struct SurfaceDistances {
    a_to_b: Vec<f64>,
    b_to_a: Vec<f64>,
}

fn surface_distances(a: &Volume3D, b: &Volume3D) -> Result<SurfaceDistances> {
    check_pair(a, b)?;
    let (sa, sb) = (surface_voxels(a)?, surface_voxels(b)?);
    let (dims, spacing) = (a.dims(), a.spacing());
    let to_b = squared_distance_field(dims, spacing, &sb);
    let to_a = squared_distance_field(dims, spacing, &sa);
    Ok(SurfaceDistances {
        a_to_b: sa.iter().map(|&i| to_b[i].sqrt()).collect(),
        b_to_a: sb.iter().map(|&i| to_a[i].sqrt()).collect(),
    })
}

/// Average symmetric surface distance in mm.
pub fn assd(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    let d = surface_distances(a, b)?;
    let total: f64 = d.a_to_b.iter().chain(&d.b_to_a).sum();
    Ok(total / (d.a_to_b.len() + d.b_to_a.len()) as f64)
}

/// Symmetric Hausdorff distance between the two surfaces, in mm.
pub fn hausdorff(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    let d = surface_distances(a, b)?;
    Ok(d.a_to_b.iter().chain(&d.b_to_a).copied().fold(0.0, f64::max))
}

/// Zeroes both masks outside slices `[z_min, z_max]`.
pub fn crop_masks(a: &Volume3D, b: &Volume3D, z_min: usize, z_max: usize) -> Result<(Volume3D, Volume3D)> {
    check_pair(a, b)?;
    let [nx, ny, nz] = a.dims();
    if z_min > z_max || z_max >= nz {
        return Err(Error::CropRange { z_min, z_max, nz });
    }
    let plane = nx * ny;
    let crop = |m: &Volume3D| {
        let data = m
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if (z_min..=z_max).contains(&(i / plane)) { v } else { 0.0 })
            .collect();
        m.with_data(VolumeKind::Mask, data)
    };
    Ok((crop(a)?, crop(b)?))
}

/// Scores of one predicted mask against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub id: String,
    pub dsc: f64,
    pub assd_mm: f64,
    pub hd_mm: f64,
}

pub fn evaluate_case(id: &str, pred: &Volume3D, reference: &Volume3D) -> Result<CaseMetrics> {
    let d = surface_distances(pred, reference)?;
    let total: f64 = d.a_to_b.iter().chain(&d.b_to_a).sum();
    Ok(CaseMetrics {
        id: id.into(),
        dsc: dice(pred, reference)?,
        assd_mm: total / (d.a_to_b.len() + d.b_to_a.len()) as f64,
        hd_mm: d.a_to_b.iter().chain(&d.b_to_a).copied().fold(0.0, f64::max),
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std }
}

/// Per-case scores with their aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cases: Vec<CaseMetrics>,
    pub dsc: Summary,
    pub assd_mm: Summary,
    pub hd_mm: Summary,
}

impl MetricReport {
    pub fn new(cases: Vec<CaseMetrics>) -> Self {
        let col = |f: fn(&CaseMetrics) -> f64| summarize(&cases.iter().map(f).collect::<Vec<_>>());
        Self {
            dsc: col(|c| c.dsc),
            assd_mm: col(|c| c.assd_mm),
            hd_mm: col(|c| c.hd_mm),
            cases,
        }
    }
}

/// Outcome of a two-sided Wilcoxon signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Pairs left after dropping zero differences.
    pub n: usize,
    /// Sum of ranks of the positive differences `x - y`.
    pub w_plus: f64,
    pub p_value: f64,
    /// Whether `p_value` comes from the exact null distribution.
    pub exact: bool,
}

/// Largest sample size that uses the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;
const WILCOXON_MIN_N: usize = 5;

/// Two-sided paired test. Zero differences are dropped and tied absolute
/// differences share their average rank. Up to 25 pairs the p-value is exact
/// over all 2^n sign assignments; beyond that a tie-corrected normal
/// approximation is used.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let mut d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    if n < WILCOXON_MIN_N {
        return Err(Error::TooFewSamples {
            needed: WILCOXON_MIN_N,
            got: n,
        });
    }
    d.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    // Ranks are kept doubled so average ranks of ties stay integral.
    let mut rank2 = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u64;
        rank2[i..=j].iter_mut().for_each(|r| *r = avg2);
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w2: u64 = d.iter().zip(&rank2).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let w_plus = w2 as f64 / 2.0;

    if n <= WILCOXON_EXACT_MAX_N {
        let total: u64 = rank2.iter().sum();
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &rank2 {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] > 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = (1u64 << n) as f64;
        let lower: u64 = counts[..=w2 as usize].iter().sum();
        let upper: u64 = counts[w2 as usize..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / all).min(1.0);
        return Ok(WilcoxonResult {
            n,
            w_plus,
            p_value: p,
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mean) / var.sqrt();
    Ok(WilcoxonResult {
        n,
        w_plus,
        p_value: libm::erfc(z.abs() / core::f64::consts::SQRT_2).min(1.0),
        exact: false,
    })
}
