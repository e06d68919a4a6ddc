//! The single TOML configuration file shared by every subcommand.
//!
//! Each section mirrors one module's settings. Missing keys take the module
//! defaults, unknown keys are rejected, and `section.key=value` overrides
//! from the command line are applied to the parsed table before it is
//! interpreted.

use std::path::Path;

use esoseg_core::acm::AcmConfig;
use esoseg_core::fcnn::{ArchitectureSpec, TrainingConfig};
use esoseg_core::phantom::PhantomConfig;
use esoseg_core::rw::RwConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::pipeline::{PriorConfig, SegmentConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub radius_mm: [f64; 2],
    pub wobble: f64,
    pub wobble_period: f64,
    pub center_jitter: f64,
    pub slice_jitter: f64,
    pub tissue_hu: [f64; 2],
    pub background_hu: [f64; 2],
    pub sheath_hu: f64,
    pub sheath_mm: f64,
    pub blobs: usize,
    pub second_tube: bool,
    pub second_tube_distance_mm: f64,
    pub air_pocket_probability: f64,
    pub air_hu: f64,
    pub noise_std: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let d = PhantomConfig::default();
        Self {
            dims: d.dims,
            spacing: d.spacing,
            radius_mm: [d.radius_mm.0, d.radius_mm.1],
            wobble: d.wobble,
            wobble_period: d.wobble_period,
            center_jitter: d.center_jitter,
            slice_jitter: d.slice_jitter,
            tissue_hu: [d.tissue_hu.0, d.tissue_hu.1],
            background_hu: [d.background_hu.0, d.background_hu.1],
            sheath_hu: d.sheath_hu,
            sheath_mm: d.sheath_mm,
            blobs: d.blobs,
            second_tube: d.second_tube,
            second_tube_distance_mm: d.second_tube_distance_mm,
            air_pocket_probability: d.air_pocket_probability,
            air_hu: d.air_hu,
            noise_std: d.noise_std,
        }
    }
}

impl PhantomSection {
    /// Generator settings for one phantom seed.
    pub fn to_config(&self, seed: u64) -> PhantomConfig {
        PhantomConfig {
            dims: self.dims,
            spacing: self.spacing,
            radius_mm: (self.radius_mm[0], self.radius_mm[1]),
            wobble: self.wobble,
            wobble_period: self.wobble_period,
            center_jitter: self.center_jitter,
            slice_jitter: self.slice_jitter,
            tissue_hu: (self.tissue_hu[0], self.tissue_hu[1]),
            background_hu: (self.background_hu[0], self.background_hu[1]),
            sheath_hu: self.sheath_hu,
            sheath_mm: self.sheath_mm,
            blobs: self.blobs,
            second_tube: self.second_tube,
            second_tube_distance_mm: self.second_tube_distance_mm,
            air_pocket_probability: self.air_pocket_probability,
            air_hu: self.air_hu,
            noise_std: self.noise_std,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureSection {
    /// `tiny` or `full`; the fields below override the preset when set.
    pub preset: String,
    pub conv_kernels: Option<Vec<usize>>,
    pub kernel_size: Option<usize>,
    pub fc_widths: Option<Vec<usize>>,
    pub n_classes: Option<usize>,
    pub dual_path: Option<bool>,
}

impl Default for ArchitectureSection {
    fn default() -> Self {
        Self {
            preset: "tiny".into(),
            conv_kernels: None,
            kernel_size: None,
            fc_widths: None,
            n_classes: None,
            dual_path: None,
        }
    }
}

impl ArchitectureSection {
    pub fn to_spec(&self) -> Result<ArchitectureSpec, CliError> {
        let mut a = match self.preset.as_str() {
            "tiny" => ArchitectureSpec::tiny(),
            "full" => ArchitectureSpec::paper_default(),
            other => return Err(CliError::Usage(format!("unknown architecture preset {other:?} (tiny, full)"))),
        };
        if let Some(v) = &self.conv_kernels {
            a.conv_kernels = v.clone();
        }
        if let Some(v) = self.kernel_size {
            a.kernel_size = v;
        }
        if let Some(v) = &self.fc_widths {
            a.fc_widths = v.clone();
        }
        if let Some(v) = self.n_classes {
            a.n_classes = v;
        }
        if let Some(v) = self.dual_path {
            a.dual_path = v;
        }
        a.validate()
            .map_err(|e| CliError::Usage(format!("architecture: {e}")))?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub subepochs_per_epoch: usize,
    pub samples_per_subepoch: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_halving_start_epoch: usize,
    pub lr_halving_period_epochs: usize,
    pub momentum: f64,
    pub rms_decay: f64,
    pub epsilon: f64,
    pub train_subvol: usize,
    pub infer_subvol: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainingConfig::default();
        Self {
            epochs: d.epochs,
            subepochs_per_epoch: d.subepochs_per_epoch,
            samples_per_subepoch: d.samples_per_subepoch,
            batch_size: d.batch_size,
            lr0: d.lr0,
            lr_halving_start_epoch: d.lr_halving_start_epoch,
            lr_halving_period_epochs: d.lr_halving_period_epochs,
            momentum: d.momentum,
            rms_decay: d.rms_decay,
            epsilon: d.epsilon,
            train_subvol: d.train_subvol,
            infer_subvol: d.infer_subvol,
            seed: d.seed,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs,
            subepochs_per_epoch: self.subepochs_per_epoch,
            samples_per_subepoch: self.samples_per_subepoch,
            batch_size: self.batch_size,
            lr0: self.lr0,
            lr_halving_start_epoch: self.lr_halving_start_epoch,
            lr_halving_period_epochs: self.lr_halving_period_epochs,
            momentum: self.momentum,
            rms_decay: self.rms_decay,
            epsilon: self.epsilon,
            train_subvol: self.train_subvol,
            infer_subvol: self.infer_subvol,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorsSection {
    pub components: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PriorsSection {
    fn default() -> Self {
        let d = PriorConfig::default();
        Self {
            components: d.components,
            seed: d.seed,
            tol: d.tol,
            max_iters: d.max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcmSection {
    pub alpha: f64,
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for AcmSection {
    fn default() -> Self {
        let d = AcmConfig::default();
        Self {
            alpha: d.alpha,
            step: d.step,
            max_iters: d.max_iters,
            tol: d.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RwSection {
    pub gamma: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub threshold: f64,
    pub closing_radius: usize,
}

impl Default for RwSection {
    fn default() -> Self {
        let d = RwConfig::default();
        Self {
            gamma: d.gamma,
            cg_tol: d.cg_tol,
            cg_max_iters: d.cg_max_iters,
            threshold: d.threshold,
            closing_radius: SegmentConfig::default().closing_radius,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub phantom: PhantomSection,
    pub architecture: ArchitectureSection,
    pub train: TrainSection,
    pub priors: PriorsSection,
    pub acm: AcmSection,
    pub rw: RwSection,
}

impl Config {
    /// Reads `path` (or starts from defaults) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("configuration: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serialises")
    }

    pub fn prior_config(&self) -> PriorConfig {
        PriorConfig {
            components: self.priors.components,
            seed: self.priors.seed,
            tol: self.priors.tol,
            max_iters: self.priors.max_iters,
        }
    }

    pub fn segment_config(&self) -> SegmentConfig {
        SegmentConfig {
            infer_subvol: self.train.infer_subvol,
            acm: AcmConfig {
                alpha: self.acm.alpha,
                step: self.acm.step,
                max_iters: self.acm.max_iters,
                tol: self.acm.tol,
            },
            rw: RwConfig {
                gamma: self.rw.gamma,
                cg_tol: self.rw.cg_tol,
                cg_max_iters: self.rw.cg_max_iters,
                threshold: self.rw.threshold,
            },
            closing_radius: self.rw.closing_radius,
        }
    }
}

/// Applies one `section.key=value` override. The value is parsed as TOML and
/// falls back to a plain string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let usage = || CliError::Usage(format!("override {spec:?} must look like section.key=value"));
    let (key, raw) = spec.split_once('=').ok_or_else(usage)?;
    let (section, field) = key.trim().split_once('.').ok_or_else(usage)?;
    if section.is_empty() || field.is_empty() {
        return Err(usage());
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sub = entry
        .as_table_mut()
        .ok_or_else(|| CliError::Usage(format!("configuration key {section} is not a section")))?;
    sub.insert(field.to_string(), value);
    Ok(())
}
