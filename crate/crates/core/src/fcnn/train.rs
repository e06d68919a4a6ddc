//! Patch sampling, the training loop and its learning-rate schedule.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureSpec, InputNorm, NetworkParams};
use super::net::{backward, Sample};
use super::optim::RmsProp;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::volume::{extract_region_raw, Volume3D, VolumeKind};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub subepochs_per_epoch: usize,
    pub samples_per_subepoch: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// First (1-based) epoch trained at half the initial rate.
    pub lr_halving_start_epoch: usize,
    pub lr_halving_period_epochs: usize,
    pub momentum: f64,
    pub rms_decay: f64,
    pub epsilon: f64,
    pub train_subvol: usize,
    pub infer_subvol: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            subepochs_per_epoch: 20,
            samples_per_subepoch: 500,
            batch_size: 5,
            lr0: 0.001,
            lr_halving_start_epoch: 10,
            lr_halving_period_epochs: 5,
            momentum: 0.6,
            rms_decay: 0.9,
            epsilon: 1e-6,
            train_subvol: 27,
            infer_subvol: 45,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, arch: &ArchitectureSpec) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.subepochs_per_epoch == 0 || self.samples_per_subepoch == 0 || self.batch_size == 0 {
            return bad("subepochs, samples and batch size must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.lr_halving_start_epoch == 0 || self.lr_halving_period_epochs == 0 {
            return bad("learning-rate schedule epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.rms_decay) || !(self.epsilon >= 0.0) {
            return bad("rms_decay must lie in [0, 1) and epsilon be non-negative");
        }
        for (name, side) in [("train_subvol", self.train_subvol), ("infer_subvol", self.infer_subvol)] {
            if side % 2 == 0 || arch.output_size(side).is_none() {
                return Err(Error::Config(format!(
                    "{name} = {side} must be odd and at least the receptive field {}",
                    arch.receptive_field()
                )));
            }
        }
        Ok(())
    }

    /// Rate used throughout 1-based `epoch`: `lr0` before the halving start,
    /// then halved once at the start and again every period.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.lr_halving_start_epoch {
            return self.lr0;
        }
        let halvings = 1 + (epoch - self.lr_halving_start_epoch) / self.lr_halving_period_epochs;
        self.lr0 / 2f64.powi(halvings as i32)
    }
}

/// Training volumes with their foreground and background voxel lists.
pub struct TrainingSet<'a> {
    pairs: &'a [(Volume3D, Volume3D)],
    foreground: Vec<Vec<u32>>,
    background: Vec<Vec<u32>>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(pairs: &'a [(Volume3D, Volume3D)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut foreground = Vec::with_capacity(pairs.len());
        let mut background = Vec::with_capacity(pairs.len());
        for (ct, mask) in pairs {
            ct.expect_kind(VolumeKind::Hu)?;
            mask.expect_kind(VolumeKind::Mask)?;
            if ct.dims() != mask.dims() {
                return Err(Error::Shape(format!("ct {:?} vs mask {:?}", ct.dims(), mask.dims())));
            }
            let (mut fg, mut bg) = (Vec::new(), Vec::new());
            for (i, &m) in mask.data().iter().enumerate() {
                if m != 0.0 {
                    fg.push(i as u32);
                } else {
                    bg.push(i as u32);
                }
            }
            foreground.push(fg);
            background.push(bg);
        }
        Ok(Self {
            pairs,
            foreground,
            background,
        })
    }

    pub fn pairs(&self) -> &[(Volume3D, Volume3D)] {
        self.pairs
    }

    /// Mean and standard deviation of every CT voxel in the set.
    pub fn intensity_norm(&self) -> InputNorm {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for (ct, _) in self.pairs {
            for &v in ct.data() {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        InputNorm {
            mean,
            std: if var > 0.0 { var.sqrt() } else { 1.0 },
        }
    }
}

/// Network input blocks centred on one voxel.
pub fn network_inputs(
    ct: &Volume3D,
    center: [usize; 3],
    main_side: usize,
    arch: &ArchitectureSpec,
    norm: &InputNorm,
) -> Result<(Tensor, Option<Tensor>)> {
    let out = arch
        .output_size(main_side)
        .ok_or_else(|| Error::Shape(format!("input side {main_side} below receptive field")))?;
    let origin: [isize; 3] = core::array::from_fn(|a| center[a] as isize - (main_side / 2) as isize);
    Ok(block_inputs(ct, origin, [main_side; 3], [out; 3], arch, norm))
}

/// Main block at `origin` with side `main_dims`, plus the matching context block.
pub(crate) fn block_inputs(
    ct: &Volume3D,
    origin: [isize; 3],
    main_dims: [usize; 3],
    out_dims: [usize; 3],
    arch: &ArchitectureSpec,
    norm: &InputNorm,
) -> (Tensor, Option<Tensor>) {
    let normalize = |mut v: alloc::vec::Vec<f64>| {
        v.iter_mut().for_each(|x| *x = norm.apply(*x));
        v
    };
    let main = Tensor::from_single(main_dims, normalize(extract_region_raw(ct.data(), ct.dims(), origin, main_dims)));
    let context = arch.dual_path.then(|| {
        let dims: [usize; 3] = core::array::from_fn(|a| arch.context_size(out_dims[a]));
        let corigin: [isize; 3] = core::array::from_fn(|a| origin[a] + arch.context_offset(out_dims[a]));
        Tensor::from_single(dims, normalize(extract_region_raw(ct.data(), ct.dims(), corigin, dims)))
    });
    (main, context)
}

/// Draws `n` class-balanced training samples: each centre is a foreground
/// voxel with probability 1/2 (when any volume has foreground), otherwise a
/// background voxel.
pub fn sample_training_batch<R: Rng + ?Sized>(
    set: &TrainingSet<'_>,
    n: usize,
    arch: &ArchitectureSpec,
    cfg: &TrainingConfig,
    norm: &InputNorm,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    let side = cfg.train_subvol;
    let out = arch
        .output_size(side)
        .ok_or_else(|| Error::Config(format!("train_subvol {side} below receptive field")))?;
    let with_fg: Vec<usize> = (0..set.pairs.len()).filter(|&i| !set.foreground[i].is_empty()).collect();
    let with_bg: Vec<usize> = (0..set.pairs.len()).filter(|&i| !set.background[i].is_empty()).collect();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let want_fg = rng.random_bool(0.5);
        let (pool, lists) = if (want_fg && !with_fg.is_empty()) || with_bg.is_empty() {
            (&with_fg, &set.foreground)
        } else {
            (&with_bg, &set.background)
        };
        let vol = pool[rng.random_range(0..pool.len())];
        let list = &lists[vol];
        let flat = list[rng.random_range(0..list.len())] as usize;
        let (ct, mask) = &set.pairs[vol];
        let center = ct.coords(flat);
        let origin: [isize; 3] = core::array::from_fn(|a| center[a] as isize - (side / 2) as isize);
        let (main, context) = block_inputs(ct, origin, [side; 3], [out; 3], arch, norm);
        let lorigin: [isize; 3] = core::array::from_fn(|a| center[a] as isize - (out / 2) as isize);
        let labels = extract_region_raw(mask.data(), mask.dims(), lorigin, [out; 3])
            .into_iter()
            .map(|m| u8::from(m != 0.0))
            .collect();
        samples.push(Sample { main, context, labels });
    }
    Ok(samples)
}

/// Resumable training state.
///
/// Parameters and optimizer buffers are rounded to `f32` at the end of every
/// epoch, so a run resumed from an `f32` checkpoint written at an epoch
/// boundary is bit-identical to an uninterrupted one. Epoch `e` draws its
/// samples from an independent stream of the seeded generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub cfg: TrainingConfig,
    pub params: NetworkParams,
    pub optimizer: RmsProp,
    pub epochs_done: usize,
    /// Mean batch loss of every finished sub-epoch.
    pub loss_history: Vec<f64>,
}

impl Trainer {
    /// Fresh state: He initialisation and intensity normalisation from `set`.
    pub fn new(set: &TrainingSet<'_>, arch: &ArchitectureSpec, cfg: TrainingConfig) -> Result<Self> {
        cfg.validate(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = NetworkParams::init(arch, &mut rng)?;
        params.input_norm = set.intensity_norm();
        let optimizer = RmsProp::new(&params, cfg.rms_decay, cfg.momentum, cfg.epsilon);
        Ok(Self {
            cfg,
            params,
            optimizer,
            epochs_done: 0,
            loss_history: Vec::new(),
        })
    }

    /// Restores a state previously saved after `epochs_done` epochs.
    pub fn resume(cfg: TrainingConfig, params: NetworkParams, optimizer: RmsProp, epochs_done: usize) -> Result<Self> {
        cfg.validate(&params.arch)?;
        if optimizer.cache.len() != params.tensors().len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        Ok(Self {
            cfg,
            params,
            optimizer,
            epochs_done,
            loss_history: Vec::new(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.cfg.epochs
    }

    /// Runs the next epoch and returns its per-sub-epoch mean losses.
    pub fn run_epoch(&mut self, set: &TrainingSet<'_>) -> Result<Vec<f64>> {
        let epoch = self.epochs_done + 1;
        let lr = self.cfg.learning_rate(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        let batches = self.cfg.samples_per_subepoch.div_ceil(self.cfg.batch_size);
        let mut losses = Vec::with_capacity(self.cfg.subepochs_per_epoch);
        for _ in 0..self.cfg.subepochs_per_epoch {
            let mut remaining = self.cfg.samples_per_subepoch;
            let mut sum = 0.0;
            for _ in 0..batches {
                let n = remaining.min(self.cfg.batch_size);
                remaining -= n;
                let batch = sample_training_batch(set, n, &self.params.arch, &self.cfg, &self.params.input_norm, &mut rng)?;
                let (l, grads) = backward(&self.params, &batch)?;
                self.optimizer.step(&mut self.params, &grads, lr)?;
                sum += l;
            }
            losses.push(sum / batches as f64);
        }
        let round = |t: &mut [f64]| t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        self.params.for_each_tensor_mut(round);
        self.optimizer.cache.iter_mut().for_each(|t| round(t));
        self.optimizer.velocity.iter_mut().for_each(|t| round(t));
        self.epochs_done = epoch;
        self.loss_history.extend_from_slice(&losses);
        Ok(losses)
    }
}

/// Trained parameters and the mean loss of every sub-epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub loss_history: Vec<f64>,
}

pub fn train(pairs: &[(Volume3D, Volume3D)], arch: &ArchitectureSpec, cfg: &TrainingConfig) -> Result<TrainOutcome> {
    let set = TrainingSet::new(pairs)?;
    let mut trainer = Trainer::new(&set, arch, cfg.clone())?;
    while !trainer.is_finished() {
        trainer.run_epoch(&set)?;
    }
    Ok(TrainOutcome {
        params: trainer.params,
        loss_history: trainer.loss_history,
    })
}
