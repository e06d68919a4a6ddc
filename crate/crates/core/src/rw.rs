//! Seed-free random walker with prior models.
//!
//! Every voxel is a node of the 6-connected lattice; two extra label nodes
//! (esophagus, background) connect to every voxel with the prior weights.
//! Eliminating the label nodes gives the symmetric positive-definite system
//! `(L + gamma * diag(w_eso + w_non)) x = gamma * w_eso`, solved matrix-free
//! with Jacobi-preconditioned conjugate gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::priors::GradientStats;
use crate::volume::{voxel_count, Volume3D, VolumeKind};

/// Smallest lattice weight; keeps the graph connected.
pub const EDGE_EPSILON: f64 = 1e-6;

/// Lattice edge weights, one array per axis. The `x` array holds the edge
/// between `(x, y, z)` and `(x + 1, y, z)` at index `x + (nx-1) * (y + ny * z)`,
/// and likewise for `y` and `z` with the shortened axis in its place.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights {
    dims: [usize; 3],
    axes: [Vec<f64>; 3],
}

fn edge_dims(dims: [usize; 3], axis: usize) -> [usize; 3] {
    let mut d = dims;
    d[axis] -= 1;
    d
}

impl EdgeWeights {
    pub fn new(dims: [usize; 3], axes: [Vec<f64>; 3]) -> Result<Self> {
        crate::volume::check_dims(dims)?;
        for (a, w) in axes.iter().enumerate() {
            let want = voxel_count(edge_dims(dims, a));
            if w.len() != want {
                return Err(Error::Shape(format!("axis {a} has {} edge weights, expected {want}", w.len())));
            }
            if w.iter().any(|v| !(EDGE_EPSILON..=1.0).contains(v)) {
                return Err(Error::Config(format!("axis {a} edge weight outside [{EDGE_EPSILON}, 1]")));
            }
        }
        Ok(Self { dims, axes })
    }

    /// Every edge set to `w`.
    pub fn uniform(dims: [usize; 3], w: f64) -> Result<Self> {
        crate::volume::check_dims(dims)?;
        let axes = core::array::from_fn(|a| vec![w; voxel_count(edge_dims(dims, a))]);
        Self::new(dims, axes)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        &self.axes[a]
    }

    /// Calls `f(i, j, w)` for every edge, `j` being the +axis neighbour of `i`.
    pub fn for_each_edge(&self, mut f: impl FnMut(usize, usize, f64)) {
        let [nx, ny, _] = self.dims;
        let strides = [1, nx, nx * ny];
        for (a, w) in self.axes.iter().enumerate() {
            let ed = edge_dims(self.dims, a);
            let mut e = 0;
            for z in 0..ed[2] {
                for y in 0..ed[1] {
                    for x in 0..ed[0] {
                        let i = x + nx * (y + ny * z);
                        f(i, i + strides[a], w[e]);
                        e += 1;
                    }
                }
            }
        }
    }
}

/// Gaussian of the neighbour difference, min-max rescaled over the volume to
/// `[0, 1]` and floored at [`EDGE_EPSILON`]. If every raw weight is equal
/// all edges get weight 1.
pub fn build_edge_weights(ct: &Volume3D, stats: &GradientStats) -> Result<EdgeWeights> {
    ct.expect_kind(VolumeKind::Hu)?;
    if !(stats.sigma_delta > 0.0) {
        return Err(Error::Config("sigma_delta must be positive".into()));
    }
    let dims = ct.dims();
    if voxel_count(dims) < 2 {
        return Err(Error::NoEdges);
    }
    let hu = ct.data();
    let two_var = 2.0 * stats.sigma_delta * stats.sigma_delta;
    // The 1/(sigma sqrt(2 pi)) factor cancels under the min-max rescaling.
    let mut buckets: [Vec<f64>; 3] = Default::default();
    {
        let [nx, ny, _] = dims;
        let strides = [1, nx, nx * ny];
        for (a, bucket) in buckets.iter_mut().enumerate() {
            let ed = edge_dims(dims, a);
            for z in 0..ed[2] {
                for y in 0..ed[1] {
                    for x in 0..ed[0] {
                        let i = x + nx * (y + ny * z);
                        let d = hu[i + strides[a]] - hu[i] - stats.mu_delta;
                        bucket.push((-d * d / two_var).exp());
                    }
                }
            }
        }
    }
    let all = || buckets.iter().flat_map(|b| b.iter().copied());
    let lo = all().fold(f64::INFINITY, f64::min);
    let hi = all().fold(f64::NEG_INFINITY, f64::max);
    let axes = buckets.map(|bucket| {
        if hi > lo {
            bucket
                .into_iter()
                .map(|w| ((w - lo) / (hi - lo)).max(EDGE_EPSILON))
                .collect()
        } else {
            vec![1.0; bucket.len()]
        }
    });
    Ok(EdgeWeights { dims, axes })
}

/// Per-voxel weights of the edges to the two label nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorField {
    pub w_eso: Volume3D,
    pub w_non: Volume3D,
}

/// `w_eso = p_cnn * p_acm * p_ct`, `w_non = (1-p_cnn)(1-p_acm)(1-p_ct)`.
pub fn build_prior_weights(cnn: &Volume3D, acm: &Volume3D, ctprior: &Volume3D) -> Result<PriorField> {
    for v in [cnn, acm, ctprior] {
        v.expect_kind(VolumeKind::Probability)?;
    }
    if cnn.dims() != acm.dims() || cnn.dims() != ctprior.dims() {
        return Err(Error::Shape(format!(
            "prior maps {:?}, {:?}, {:?} differ",
            cnn.dims(),
            acm.dims(),
            ctprior.dims()
        )));
    }
    let n = cnn.len();
    let (mut eso, mut non) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for ((&a, &b), &c) in cnn.data().iter().zip(acm.data()).zip(ctprior.data()) {
        eso.push(a * b * c);
        non.push((1.0 - a) * (1.0 - b) * (1.0 - c));
    }
    Ok(PriorField {
        w_eso: cnn.with_data(VolumeKind::Probability, eso)?,
        w_non: cnn.with_data(VolumeKind::Probability, non)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwConfig {
    /// Weight of the label-node edges relative to the lattice.
    pub gamma: f64,
    /// Stop when `||r|| / ||b||` falls below this.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub threshold: f64,
}

impl Default for RwConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            cg_tol: 1e-8,
            cg_max_iters: 20_000,
            threshold: 0.5,
        }
    }
}

/// Which label node the walker probability is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Esophagus,
    Background,
}

/// Unclamped solver output.
#[derive(Debug, Clone)]
pub struct RwSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

struct System<'a> {
    ew: &'a EdgeWeights,
    /// `gamma * (w_eso + w_non)`.
    prior_diag: Vec<f64>,
    diag: Vec<f64>,
}

impl System<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &d), &xi) in out.iter_mut().zip(&self.prior_diag).zip(x) {
            *o = d * xi;
        }
        self.ew.for_each_edge(|i, j, w| {
            let f = w * (x[i] - x[j]);
            out[i] += f;
            out[j] -= f;
        });
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the walker system for one label without clamping.
pub fn solve_rw_label(ew: &EdgeWeights, pf: &PriorField, label: Label, cfg: &RwConfig) -> Result<RwSolution> {
    let dims = ew.dims();
    if pf.w_eso.dims() != dims || pf.w_non.dims() != dims {
        return Err(Error::Shape(format!("edge weights {dims:?} vs priors {:?}", pf.w_eso.dims())));
    }
    if !(cfg.gamma >= 0.0) {
        return Err(Error::Config("gamma must be non-negative".into()));
    }
    let (eso, non) = (pf.w_eso.data(), pf.w_non.data());
    let prior_diag: Vec<f64> = eso.iter().zip(non).map(|(a, b)| cfg.gamma * (a + b)).collect();
    if prior_diag.iter().all(|&d| d == 0.0) {
        return Err(Error::SingularSystem);
    }
    let target = match label {
        Label::Esophagus => eso,
        Label::Background => non,
    };
    let b: Vec<f64> = target.iter().map(|w| cfg.gamma * w).collect();
    let n = b.len();
    let b_norm = dot(&b, &b).sqrt();
    if b_norm == 0.0 {
        return Ok(RwSolution {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }

    let mut diag = prior_diag.clone();
    ew.for_each_edge(|i, j, w| {
        diag[i] += w;
        diag[j] += w;
    });
    let sys = System { ew, prior_diag, diag };

    // Start from the lattice-free solution w / (w_eso + w_non).
    let mut x: Vec<f64> = target
        .iter()
        .zip(eso.iter().zip(non))
        .map(|(t, (a, b))| if a + b > 0.0 { t / (a + b) } else { 0.5 })
        .collect();
    let mut ap = vec![0.0; n];
    sys.apply(&x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&sys.diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut residual = dot(&r, &r).sqrt() / b_norm;
    let mut iterations = 0;
    while residual >= cfg.cg_tol {
        if iterations >= cfg.cg_max_iters {
            return Err(Error::NotConverged { iterations, residual });
        }
        sys.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        residual = dot(&r, &r).sqrt() / b_norm;
        for i in 0..n {
            z[i] = r[i] / sys.diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(RwSolution {
        x,
        iterations,
        relative_residual: residual,
    })
}

/// Esophagus probability per voxel, clamped to `[0, 1]`. The background
/// probability is its complement.
pub fn solve_rw(ew: &EdgeWeights, pf: &PriorField, cfg: &RwConfig) -> Result<Volume3D> {
    let sol = solve_rw_label(ew, pf, Label::Esophagus, cfg)?;
    pf.w_eso.with_data(
        VolumeKind::Probability,
        sol.x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
}

/// `1` where `x >= threshold`.
pub fn extract_label(x: &Volume3D, threshold: f64) -> Result<Volume3D> {
    x.expect_kind(VolumeKind::Probability)?;
    let data = x.data().iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect();
    x.with_data(VolumeKind::Mask, data)
}
