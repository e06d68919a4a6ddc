//! Valid (unpadded), unit-stride 3D cross-correlation and its adjoints.
//!
//! All three passes work in the *input* stride layout: an output voxel
//! `(x, y, z)` lives at the input linear index `x + nx * (y + ny * z)`, so
//! every kernel tap becomes one contiguous multiply-add over the span
//! `[0, span)` shifted by the tap offset. Columns past the valid output
//! extent are scratch and are never read back.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Shape bookkeeping for one convolution.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    k: usize,
    /// Length of the strided run covering every valid output voxel.
    span: usize,
}

impl Geometry {
    fn new(in_dims: [usize; 3], k: usize) -> Result<Self> {
        if k == 0 || in_dims.iter().any(|&d| d < k) {
            return Err(Error::Shape(format!("input {in_dims:?} smaller than kernel {k}")));
        }
        let out_dims = [in_dims[0] - k + 1, in_dims[1] - k + 1, in_dims[2] - k + 1];
        let [nx, ny, _] = in_dims;
        let span = (out_dims[2] - 1) * nx * ny + (out_dims[1] - 1) * nx + out_dims[0];
        Ok(Self {
            in_dims,
            out_dims,
            k,
            span,
        })
    }

    fn taps(&self) -> impl Iterator<Item = usize> + '_ {
        let [nx, ny, _] = self.in_dims;
        let k = self.k;
        (0..k).flat_map(move |dz| (0..k).flat_map(move |dy| (0..k).map(move |dx| dx + nx * (dy + ny * dz))))
    }

    fn compact(&self, strided: &[f64], out: &mut [f64]) {
        let [nx, ny, _] = self.in_dims;
        let [ox, oy, oz] = self.out_dims;
        for z in 0..oz {
            for y in 0..oy {
                let src = nx * (y + ny * z);
                let dst = ox * (y + oy * z);
                out[dst..dst + ox].copy_from_slice(&strided[src..src + ox]);
            }
        }
    }

    fn expand(&self, compact: &[f64], strided: &mut [f64]) {
        let [nx, ny, _] = self.in_dims;
        let [ox, oy, oz] = self.out_dims;
        strided.fill(0.0);
        for z in 0..oz {
            for y in 0..oy {
                let dst = nx * (y + ny * z);
                let src = ox * (y + oy * z);
                strided[dst..dst + ox].copy_from_slice(&compact[src..src + ox]);
            }
        }
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators; the order is fixed so results are reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_params(input: &Tensor, weights: &[f64], bias: &[f64], k: usize) -> Result<usize> {
    let cout = bias.len();
    let expected = cout * input.channels * k * k * k;
    if weights.len() != expected {
        return Err(Error::Shape(format!(
            "kernel has {} weights, expected {cout}x{}x{k}^3 = {expected}",
            weights.len(),
            input.channels
        )));
    }
    Ok(cout)
}

/// Cross-correlation without kernel flip. `weights` is laid out
/// `[out][in][kz][ky][kx]`; `bias` has one entry per output channel.
pub fn conv3d_valid(input: &Tensor, weights: &[f64], bias: &[f64], k: usize) -> Result<Tensor> {
    let geo = Geometry::new(input.dims, k)?;
    let cout = check_params(input, weights, bias, k)?;
    let cin = input.channels;
    let taps: Vec<usize> = geo.taps().collect();
    let kk = taps.len();
    let mut out = Tensor::zeros(cout, geo.out_dims);
    let mut strided = vec![0.0; geo.span];
    for co in 0..cout {
        strided.fill(bias[co]);
        for ci in 0..cin {
            let src = input.channel(ci);
            let w = &weights[(co * cin + ci) * kk..(co * cin + ci + 1) * kk];
            for (&wt, &off) in w.iter().zip(&taps) {
                axpy(wt, &src[off..off + geo.span], &mut strided);
            }
        }
        geo.compact(&strided, out.channel_mut(co));
    }
    Ok(out)
}

/// Gradients of a valid convolution given the gradient of its output.
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Adjoint of [`conv3d_valid`]. `need_input` skips the input gradient for the
/// first layer of a path, whose input is data.
pub fn conv3d_valid_backward(
    input: &Tensor,
    weights: &[f64],
    k: usize,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let geo = Geometry::new(input.dims, k)?;
    let cout = grad_out.channels;
    let cin = input.channels;
    if grad_out.dims != geo.out_dims || weights.len() != cout * cin * k * k * k {
        return Err(Error::Shape(format!(
            "gradient {:?}x{} inconsistent with input {:?}x{cin} and kernel {k}",
            grad_out.dims, cout, input.dims
        )));
    }
    let taps: Vec<usize> = geo.taps().collect();
    let kk = taps.len();
    let mut grad_input = Tensor::zeros(if need_input { cin } else { 0 }, input.dims);
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = vec![0.0; cout];
    let mut strided = vec![0.0; geo.span];
    for co in 0..cout {
        let g = grad_out.channel(co);
        grad_b[co] = g.iter().sum();
        geo.expand(g, &mut strided);
        for ci in 0..cin {
            let src = input.channel(ci);
            let base = (co * cin + ci) * kk;
            for (t, &off) in taps.iter().enumerate() {
                grad_w[base + t] = dot(&strided, &src[off..off + geo.span]);
            }
            if need_input {
                let dst = grad_input.channel_mut(ci);
                for (t, &off) in taps.iter().enumerate() {
                    axpy(weights[base + t], &strided, &mut dst[off..off + geo.span]);
                }
            }
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weights: grad_w,
        bias: grad_b,
    })
}
