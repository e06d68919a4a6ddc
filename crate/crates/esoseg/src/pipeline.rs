//! The full segmentation chain and the prior fitting that feeds it.

use esoseg_core::acm::{centerline_distance_map, fit_centerline, AcmConfig, Centerline};
use esoseg_core::fcnn::{predict_volume, NetworkParams};
use esoseg_core::postproc::{morphological_closing, preprocess_ct, AIR_CUTOFF_HU};
use esoseg_core::priors::{fit_gmm, fit_gradient_stats, gmm_prior_map, GmmModel, GradientStats};
use esoseg_core::rw::{build_edge_weights, build_prior_weights, extract_label, solve_rw, RwConfig};
use esoseg_core::{Volume3D, VolumeKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Stage};

/// Intensity models learned from the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    pub gmm: GmmModel,
    pub stats: GradientStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub components: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            components: 2,
            seed: 0,
            tol: 1e-8,
            max_iters: 500,
        }
    }
}

/// Fits the mixture on raw HU inside the reference masks, so air and contrast
/// in the lumen get their own components. The mean esophageal HU comes from
/// the raw CT; the gradient statistics from the air-replaced CT, because that
/// is the image the edge weights are computed on.
pub fn fit_priors(pairs: &[(Volume3D, Volume3D)], cfg: &PriorConfig) -> Result<PriorModel, CliError> {
    let stage = Stage::FitPriors;
    let samples: Vec<f64> = pairs
        .iter()
        .flat_map(|(ct, mask)| {
            ct.data()
                .iter()
                .zip(mask.data())
                .filter(|(_, &m)| m != 0.0)
                .map(|(&hu, _)| hu)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gmm = fit_gmm(&samples, cfg.components, &mut rng, cfg.tol, cfg.max_iters)
        .map_err(|e| CliError::core(stage, e))?
        .model;
    let raw = fit_gradient_stats(pairs).map_err(|e| CliError::core(stage, e))?;
    let cleaned = pairs
        .iter()
        .map(|(ct, mask)| Ok((preprocess_ct(ct, raw.mean_eso_hu, AIR_CUTOFF_HU)?, mask.clone())))
        .collect::<esoseg_core::Result<Vec<_>>>()
        .map_err(|e| CliError::core(stage, e))?;
    let clean = fit_gradient_stats(&cleaned).map_err(|e| CliError::core(stage, e))?;
    Ok(PriorModel {
        gmm,
        stats: GradientStats {
            mean_eso_hu: raw.mean_eso_hu,
            ..clean
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    /// Side of the network input block used for dense inference.
    pub infer_subvol: usize,
    pub acm: AcmConfig,
    pub rw: RwConfig,
    pub closing_radius: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            infer_subvol: 45,
            acm: AcmConfig::default(),
            rw: RwConfig::default(),
            closing_radius: 1,
        }
    }
}

/// Final mask plus every intermediate map.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: Volume3D,
    pub cnn: Volume3D,
    pub centerline: Centerline,
    pub acm: Volume3D,
    pub ct_prior: Volume3D,
    /// Esophagus probability from the walker, before thresholding.
    pub rw: Volume3D,
}

impl Segmentation {
    /// The network map thresholded at 0.5, without any later stage.
    pub fn cnn_mask(&self) -> Result<Volume3D, CliError> {
        extract_label(&self.cnn, 0.5).map_err(|e| CliError::core(Stage::Predict, e))
    }
}

/// Runs every stage in order on one CT volume.
pub fn segment(
    ct: &Volume3D,
    params: &NetworkParams,
    priors: &PriorModel,
    cfg: &SegmentConfig,
) -> Result<Segmentation, CliError> {
    let at = |stage: Stage| move |e| CliError::core(stage, e);
    ct.expect_kind(VolumeKind::Hu).map_err(at(Stage::Preprocess))?;
    let cleaned = preprocess_ct(ct, priors.stats.mean_eso_hu, AIR_CUTOFF_HU).map_err(at(Stage::Preprocess))?;
    let cnn = predict_volume(params, ct, cfg.infer_subvol).map_err(at(Stage::Predict))?;
    let centerline = fit_centerline(&cnn, &cfg.acm).map_err(at(Stage::Centerline))?;
    let acm = centerline_distance_map(&centerline, ct).map_err(at(Stage::Centerline))?;
    let ct_prior = gmm_prior_map(&cleaned, &priors.gmm).map_err(at(Stage::CtPrior))?;
    let edges = build_edge_weights(&cleaned, &priors.stats).map_err(at(Stage::Weights))?;
    let field = build_prior_weights(&cnn, &acm, &ct_prior).map_err(at(Stage::Weights))?;
    let rw = solve_rw(&edges, &field, &cfg.rw).map_err(at(Stage::RandomWalker))?;
    let label = extract_label(&rw, cfg.rw.threshold).map_err(at(Stage::RandomWalker))?;
    let mask = morphological_closing(&label, cfg.closing_radius).map_err(at(Stage::Closing))?;
    Ok(Segmentation {
        mask,
        cnn,
        centerline,
        acm,
        ct_prior,
        rw,
    })
}
