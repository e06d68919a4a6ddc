//! Intensity priors learned from reference contours: a univariate Gaussian
//! mixture over esophageal HU values and the neighbour-difference statistics
//! that shape the random-walker edge weights.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::volume::{Volume3D, VolumeKind};

/// Lower bound on every mixture variance, in HU^2.
pub const VARIANCE_FLOOR: f64 = 1.0;
/// Lower bound on the neighbour-difference standard deviation, in HU.
pub const SIGMA_DELTA_FLOOR: f64 = 1.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    fn ln_weighted_pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        self.weight.ln() - 0.5 * self.variance.ln() - LN_SQRT_2PI - d * d / (2.0 * self.variance)
    }
}

/// Univariate Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    components: Vec<Component>,
}

impl GmmModel {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("a mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        for c in &components {
            if !(c.weight > 0.0 && c.weight <= 1.0) || !(c.variance > 0.0) || !c.mean.is_finite() {
                return Err(Error::Config(format!("invalid mixture component {c:?}")));
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        log_sum_exp(self.components.iter().map(|c| c.ln_weighted_pdf(x)))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Log of the largest density over a 1-HU grid spanning five standard
    /// deviations around every component, also probing each mean exactly.
    pub fn ln_mode_density(&self) -> f64 {
        let lo = self
            .components
            .iter()
            .map(|c| c.mean - 5.0 * c.variance.sqrt())
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .components
            .iter()
            .map(|c| c.mean + 5.0 * c.variance.sqrt())
            .fold(f64::NEG_INFINITY, f64::max);
        let steps = (hi - lo).floor() as usize;
        let grid = (0..=steps).map(|i| lo + i as f64);
        grid.chain(self.components.iter().map(|c| c.mean))
            .map(|x| self.ln_pdf(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// A fitted mixture and the log-likelihood recorded at every EM iteration.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: Vec<f64>,
}

/// k-means++ seeding over scalar samples.
fn seed_means<R: Rng + ?Sized>(samples: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut means = vec![samples[rng.random_range(0..samples.len())]];
    let mut d2: Vec<f64> = samples.iter().map(|x| (x - means[0]).powi(2)).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = samples.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            samples[pick]
        } else {
            samples[rng.random_range(0..samples.len())]
        };
        means.push(next);
        for (d, x) in d2.iter_mut().zip(samples) {
            *d = d.min((x - next).powi(2));
        }
    }
    means
}

/// Expectation-maximisation for a `k`-component mixture. Stops when the
/// relative log-likelihood gain drops below `tol` or after `max_iters`.
pub fn fit_gmm<R: Rng + ?Sized>(samples: &[f64], k: usize, rng: &mut R, tol: f64, max_iters: usize) -> Result<GmmFit> {
    if k < 1 {
        return Err(Error::Config("mixture needs K >= 1".into()));
    }
    if samples.len() < 10 * k {
        return Err(Error::TooFewSamples {
            needed: 10 * k,
            got: samples.len(),
        });
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).max(VARIANCE_FLOOR);
    let mut comps: Vec<Component> = seed_means(samples, k, rng)
        .into_iter()
        .map(|m| Component {
            weight: 1.0 / k as f64,
            mean: m,
            variance: var,
        })
        .collect();

    let mut resp = vec![0.0; n * k];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        // E-step.
        let mut ll = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            for (r, c) in row.iter_mut().zip(&comps) {
                *r = c.ln_weighted_pdf(x);
            }
            let lse = log_sum_exp(row.iter().copied());
            ll += lse;
            row.iter_mut().for_each(|r| *r = (*r - lse).exp());
        }
        // M-step.
        for (j, c) in comps.iter_mut().enumerate() {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk <= f64::MIN_POSITIVE {
                c.weight = f64::MIN_POSITIVE;
                continue;
            }
            let mu = (0..n).map(|i| resp[i * k + j] * samples[i]).sum::<f64>() / nk;
            let var = (0..n).map(|i| resp[i * k + j] * (samples[i] - mu).powi(2)).sum::<f64>() / nk;
            *c = Component {
                weight: nk / n as f64,
                mean: mu,
                variance: var.max(VARIANCE_FLOOR),
            };
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        comps.iter_mut().for_each(|c| c.weight /= total);

        let converged = history
            .last()
            .is_some_and(|&prev: &f64| (ll - prev) <= tol * prev.abs());
        history.push(ll);
        if converged {
            break;
        }
    }
    Ok(GmmFit {
        model: GmmModel::new(comps)?,
        log_likelihood: history,
    })
}

/// Mixture density scaled by its modal value, so every voxel lands in (0, 1].
pub fn gmm_prior_map(ct: &Volume3D, g: &GmmModel) -> Result<Volume3D> {
    ct.expect_kind(VolumeKind::Hu)?;
    let ln_max = g.ln_mode_density();
    let data = ct
        .data()
        .iter()
        .map(|&hu| (g.ln_pdf(hu) - ln_max).exp().clamp(f64::MIN_POSITIVE, 1.0))
        .collect();
    ct.with_data(VolumeKind::Probability, data)
}

/// Statistics of intensity differences between 6-neighbours inside the reference contours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientStats {
    pub mu_delta: f64,
    pub sigma_delta: f64,
    pub mean_eso_hu: f64,
}

/// Each unordered 6-neighbour pair with both voxels in the mask contributes
/// once, as `HU(next) - HU(current)` along the positive axis.
pub fn fit_gradient_stats(pairs: &[(Volume3D, Volume3D)]) -> Result<GradientStats> {
    let (mut n, mut sum) = (0usize, 0.0);
    let mut deltas = Vec::new();
    let (mut m, mut hu_sum) = (0usize, 0.0);
    for (ct, mask) in pairs {
        ct.expect_kind(VolumeKind::Hu)?;
        mask.expect_kind(VolumeKind::Mask)?;
        if ct.dims() != mask.dims() {
            return Err(Error::Shape(format!("ct {:?} vs mask {:?}", ct.dims(), mask.dims())));
        }
        let [nx, ny, nz] = ct.dims();
        let strides = [1, nx, nx * ny];
        let (hu, mk) = (ct.data(), mask.data());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = x + nx * (y + ny * z);
                    if mk[i] == 0.0 {
                        continue;
                    }
                    m += 1;
                    hu_sum += hu[i];
                    for (a, &has_next) in [x + 1 < nx, y + 1 < ny, z + 1 < nz].iter().enumerate() {
                        let j = i + strides[a];
                        if has_next && mk[j] != 0.0 {
                            let d = hu[j] - hu[i];
                            deltas.push(d);
                            sum += d;
                            n += 1;
                        }
                    }
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::NoGradientPairs);
    }
    let mu = sum / n as f64;
    let var = deltas.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n as f64;
    Ok(GradientStats {
        mu_delta: mu,
        sigma_delta: var.sqrt().max(SIGMA_DELTA_FLOOR),
        mean_eso_hu: hu_sum / m as f64,
    })
}
