//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. Each one is written for clarity, not speed.

#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use esoseg_core::fcnn::*;
use esoseg_core::priors::GradientStats;
use esoseg_core::rw::{build_edge_weights, build_prior_weights, EdgeWeights, PriorField, EDGE_EPSILON};
use esoseg_core::{Volume3D, VolumeKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Direct six-fold loop valid cross-correlation.
pub fn naive_conv(input: &Tensor, w: &[f64], b: &[f64], k: usize) -> Tensor {
    let [nx, ny, nz] = input.dims;
    let od = [nx - k + 1, ny - k + 1, nz - k + 1];
    let cout = b.len();
    let cin = input.channels;
    let mut out = Tensor::zeros(cout, od);
    for co in 0..cout {
        for z in 0..od[2] {
            for y in 0..od[1] {
                for x in 0..od[0] {
                    let mut s = b[co];
                    for ci in 0..cin {
                        for dz in 0..k {
                            for dy in 0..k {
                                for dx in 0..k {
                                    let wi = (((co * cin + ci) * k + dz) * k + dy) * k + dx;
                                    s += w[wi] * input.at(ci, x + dx, y + dy, z + dz);
                                }
                            }
                        }
                    }
                    out.data[co * od[0] * od[1] * od[2] + x + od[0] * (y + od[1] * z)] = s;
                }
            }
        }
    }
    out
}

pub fn random_tensor(rng: &mut ChaCha8Rng, channels: usize, dims: [usize; 3]) -> Tensor {
    let mut t = Tensor::zeros(channels, dims);
    t.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    t
}

/// Forward pass rebuilt from the public building blocks with plain loops for
/// the resampling. Returns the loss over `batch` and the PReLU branch taken at
/// every pre-activation (`true` = negative side), in a fixed order.
///
/// With `frozen` set, each PReLU takes the recorded branch instead of testing
/// the sign. The loss is then smooth in the parameters and has the same
/// gradient at the point where the pattern was recorded.
pub fn oracle_forward(params: &NetworkParams, batch: &[Sample], frozen: Option<&[bool]>) -> (f64, Vec<bool>) {
    let mut pattern = Vec::new();
    let run = |layers: &[Layer], mut x: Tensor, pattern: &mut Vec<bool>| -> Tensor {
        for l in layers {
            let mut y = conv3d_valid(&x, &l.weights, &l.bias, l.kernel_size).unwrap();
            if let Some(a) = &l.slopes {
                let n = y.plane();
                for (i, v) in y.data.iter_mut().enumerate() {
                    let neg = match frozen {
                        Some(f) => f[pattern.len()],
                        None => {
                            assert!(*v != 0.0, "pre-activation exactly on the kink");
                            *v < 0.0
                        }
                    };
                    pattern.push(neg);
                    if neg {
                        *v *= a[i / n];
                    }
                }
            }
            x = y;
        }
        x
    };
    let (mut total, mut count) = (0.0, 0usize);
    for s in batch {
        let mut fused = run(&params.main, s.main.clone(), &mut pattern);
        let out = fused.dims;
        if let Some(ctx) = &s.context {
            let d = ctx.dims;
            let low_dims = [d[0] / 2, d[1] / 2, d[2] / 2];
            let mut low = Tensor::zeros(1, low_dims);
            for z in 0..low_dims[2] {
                for y in 0..low_dims[1] {
                    for x in 0..low_dims[0] {
                        let mut sum = 0.0;
                        for (dx, dy, dz) in (0..8).map(|i| (i & 1, (i >> 1) & 1, i >> 2)) {
                            sum += ctx.at(0, 2 * x + dx, 2 * y + dy, 2 * z + dz);
                        }
                        low.data[x + low_dims[0] * (y + low_dims[1] * z)] = sum / 8.0;
                    }
                }
            }
            let c = run(&params.context, low, &mut pattern);
            let off: [usize; 3] = std::array::from_fn(|a| (2 * c.dims[a] - out[a]) / 2);
            for ch in 0..c.channels {
                for z in 0..out[2] {
                    for y in 0..out[1] {
                        for x in 0..out[0] {
                            fused.data.push(c.at(ch, (x + off[0]) / 2, (y + off[1]) / 2, (z + off[2]) / 2));
                        }
                    }
                }
            }
            fused.channels += c.channels;
        }
        let h = run(&params.fc, fused, &mut pattern);
        let cl = &params.classifier;
        let scores = conv3d_valid(&h, &cl.weights, &cl.bias, 1).unwrap();
        let n = scores.plane();
        for (v, &y) in s.labels.iter().enumerate() {
            let col: Vec<f64> = (0..scores.channels).map(|k| scores.data[k * n + v]).collect();
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = col.iter().map(|c| (c - max).exp()).sum();
            let p = (col[y as usize] - max).exp() / z;
            total -= p.max(PROB_FLOOR).ln();
            count += 1;
        }
    }
    (total / count as f64, pattern)
}

/// Largest relative error `|a - n| / max(|a|, |n|, 1e-6)` between
/// back-propagation and central differences (h = 1e-4) of the oracle loss
/// with the activation pattern frozen at `params`. Every entry is checked when
/// `per_tensor` is 0, otherwise `per_tensor` random entries of every tensor.
pub fn gradient_check(params: &NetworkParams, batch: &[Sample], per_tensor: usize, rng: &mut ChaCha8Rng) -> f64 {
    let h = 1e-4;
    let (loss_bp, grads) = backward(params, batch).unwrap();
    let (loss0, pattern) = oracle_forward(params, batch, None);
    assert!((loss_bp - loss0).abs() <= 1e-12 * loss0.abs().max(1.0), "forward {loss_bp} vs oracle {loss0}");
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for (ti, a) in analytic.iter().enumerate() {
        let picks: Vec<usize> = if per_tensor == 0 || a.len() <= per_tensor {
            (0..a.len()).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..a.len())).collect()
        };
        for i in picks {
            let orig = p.tensors()[ti][i];
            p.tensors_mut()[ti][i] = orig + h;
            let (up, _) = oracle_forward(&p, batch, Some(&pattern));
            p.tensors_mut()[ti][i] = orig - h;
            let (down, _) = oracle_forward(&p, batch, Some(&pattern));
            p.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a[i] - numeric).abs() / a[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// `n` samples cut from a random volume, all blocks inside it.
pub fn random_batch(arch: &ArchitectureSpec, side: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    // Blocks stay inside the volume: padded zeros would put pre-activations
    // exactly on the PReLU kink, where central differences are meaningless.
    let dims = [3 * side, 3 * side, 3 * side];
    let ct = Volume3D::from_fn(dims, [1.0; 3], VolumeKind::Hu, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
    let out = arch.output_size(side).unwrap();
    (0..n)
        .map(|_| {
            let c = [rng.random_range(side..2 * side), rng.random_range(side..2 * side), rng.random_range(side..2 * side)];
            let (main, context) = network_inputs(&ct, c, side, arch, &InputNorm::default()).unwrap();
            let labels = (0..out * out * out).map(|_| rng.random_range(0..2u8)).collect();
            Sample { main, context, labels }
        })
        .collect()
}


/// Random grid of at most 7³ voxels with random lattice and prior weights.
pub fn random_problem(rng: &mut ChaCha8Rng) -> (EdgeWeights, PriorField) {
    let dims = loop {
        let d = [rng.random_range(1..=7), rng.random_range(1..=7), rng.random_range(1..=7)];
        if d.iter().product::<usize>() >= 2 {
            break d;
        }
    };
    let n: usize = dims.iter().product();
    let ew = if rng.random_bool(0.5) {
        let ct = Volume3D::from_fn(dims, [1.0; 3], VolumeKind::Hu, |_, _, _| rng.random_range(-100..100) as f64).unwrap();
        let stats = GradientStats {
            mu_delta: rng.random_range(-5.0..5.0),
            sigma_delta: rng.random_range(5.0..40.0),
            mean_eso_hu: 0.0,
        };
        build_edge_weights(&ct, &stats).unwrap()
    } else {
        let axes = std::array::from_fn(|a| {
            let mut d = dims;
            d[a] -= 1;
            (0..d.iter().product::<usize>()).map(|_| rng.random_range(EDGE_EPSILON..=1.0)).collect()
        });
        EdgeWeights::new(dims, axes).unwrap()
    };
    let mut map = || {
        let data = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        Volume3D::new(dims, [1.0; 3], VolumeKind::Probability, data).unwrap()
    };
    let (a, b, c) = (map(), map(), map());
    (ew, build_prior_weights(&a, &b, &c).unwrap())
}

/// Dense `(L + gamma * diag(w_eso + w_non)) x = gamma * w` for the esophagus
/// (`eso = true`) or background label, solved by Gaussian elimination with
/// partial pivoting.
pub fn dense_rw(ew: &EdgeWeights, w_eso: &[f64], w_non: &[f64], gamma: f64, eso: bool) -> Vec<f64> {
    let n = w_eso.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        a[i][i] = gamma * (w_eso[i] + w_non[i]);
        a[i][n] = gamma * if eso { w_eso[i] } else { w_non[i] };
    }
    ew.for_each_edge(|i, j, w| {
        a[i][i] += w;
        a[j][j] += w;
        a[i][j] -= w;
        a[j][i] -= w;
    });
    for c in 0..n {
        let piv = (c..n).max_by(|&p, &q| a[p][c].abs().total_cmp(&a[q][c].abs())).unwrap();
        a.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f != 0.0 {
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (a[r][n] - s) / a[r][r];
    }
    x
}

fn coords(i: usize, dims: [usize; 3]) -> [usize; 3] {
    [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])]
}

/// Mask voxels with a 6-neighbour outside the mask, the border counting as
/// outside, found by testing every neighbour explicitly.
pub fn brute_surface(m: &Volume3D) -> Vec<[usize; 3]> {
    let dims = m.dims();
    let inside = |p: [isize; 3]| {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < dims[a]) && m.get(p[0] as usize, p[1] as usize, p[2] as usize) != 0.0
    };
    let mut out = Vec::new();
    for i in 0..m.len() {
        let c = coords(i, dims);
        let p = [c[0] as isize, c[1] as isize, c[2] as isize];
        if !inside(p) {
            continue;
        }
        let open = (0..3).any(|a| {
            [-1isize, 1].iter().any(|&s| {
                let mut q = p;
                q[a] += s;
                !inside(q)
            })
        });
        if open {
            out.push(c);
        }
    }
    out
}

/// All-pairs nearest distances in mm from every point of `from` to `to`.
pub fn brute_nearest(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|a| ((p[a] as f64 - q[a] as f64) * spacing[a]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `(dice, assd, hausdorff)` by direct counting and all-pairs distances.
pub fn brute_metrics(a: &Volume3D, b: &Volume3D) -> (f64, f64, f64) {
    let na = a.data().iter().filter(|&&v| v != 0.0).count();
    let nb = b.data().iter().filter(|&&v| v != 0.0).count();
    let both = a.data().iter().zip(b.data()).filter(|(x, y)| **x != 0.0 && **y != 0.0).count();
    let dice = 2.0 * both as f64 / (na + nb) as f64;
    let (sa, sb) = (brute_surface(a), brute_surface(b));
    let ab = brute_nearest(&sa, &sb, a.spacing());
    let ba = brute_nearest(&sb, &sa, a.spacing());
    let all: Vec<f64> = ab.iter().chain(&ba).copied().collect();
    let assd = all.iter().sum::<f64>() / all.len() as f64;
    let hd = all.iter().copied().fold(0.0, f64::max);
    (dice, assd, hd)
}

/// Closing with the L1 ball of `radius`, written straight from the set
/// definitions: dilation is the union of translates, erosion keeps voxels
/// whose translated element fits (the outside counting as foreground).
pub fn brute_closing(m: &Volume3D, radius: usize) -> Vec<bool> {
    let dims = m.dims();
    let r = radius as isize;
    let mut se = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs() + dy.abs() + dz.abs() <= r {
                    se.push([dx, dy, dz]);
                }
            }
        }
    }
    let n = m.len();
    let idx = |p: [isize; 3]| -> Option<usize> {
        (0..3)
            .all(|a| p[a] >= 0 && (p[a] as usize) < dims[a])
            .then(|| p[0] as usize + dims[0] * (p[1] as usize + dims[1] * p[2] as usize))
    };
    let mut dil = vec![false; n];
    for i in (0..n).filter(|&i| m.data()[i] != 0.0) {
        let c = coords(i, dims);
        for o in &se {
            if let Some(j) = idx([c[0] as isize + o[0], c[1] as isize + o[1], c[2] as isize + o[2]]) {
                dil[j] = true;
            }
        }
    }
    (0..n)
        .map(|i| {
            let c = coords(i, dims);
            se.iter().all(|o| {
                idx([c[0] as isize + o[0], c[1] as isize + o[1], c[2] as isize + o[2]]).is_none_or(|j| dil[j])
            })
        })
        .collect()
}

/// Two-sided exact signed-rank p-value by enumerating every sign assignment
/// of the ranks (average ranks for ties, zero differences dropped).
pub fn brute_wilcoxon(x: &[f64], y: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let rank = |v: f64| {
        let below = d.iter().filter(|w| w.abs() < v.abs()).count() as f64;
        let equal = d.iter().filter(|w| w.abs() == v.abs()).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = d.iter().map(|&v| rank(v)).collect();
    let w: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let (mut lo, mut hi) = (0u64, 0u64);
    for signs in 0u64..1 << n {
        let s: f64 = (0..n).filter(|b| signs >> b & 1 == 1).map(|b| ranks[b]).sum();
        lo += u64::from(s <= w);
        hi += u64::from(s >= w);
    }
    (w, (2.0 * lo.min(hi) as f64 / (1u64 << n) as f64).min(1.0))
}

/// Random binary mask with the given foreground probability.
pub fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3], spacing: [f64; 3], p: f64) -> Volume3D {
    Volume3D::from_fn(dims, spacing, VolumeKind::Mask, |_, _, _| f64::from(u8::from(rng.random_bool(p)))).unwrap()
}
