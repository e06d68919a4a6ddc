//! Subcommands of the `esoseg` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use esoseg_core::fcnn::{RmsProp, Trainer, TrainingSet};
use esoseg_core::metrics::{crop_masks, evaluate_case, wilcoxon_signed_rank, CaseMetrics, MetricReport};
use esoseg_core::VolumeKind;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::Config;
use crate::dataset::{generate_dataset, load_pairs};
use crate::error::{CliError, Stage};
use crate::formats::{
    format_centerline, format_comparison, format_loss_log, format_report, read_manifest, read_priors,
    write_manifest, write_priors, write_text,
};
use crate::mhd::{read_kind, write_volume};
use crate::pipeline::{fit_priors, segment, Segmentation};

/// Name of the effective configuration echoed into every output directory.
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Debug, Parser)]
#[command(name = "esoseg", version, about = "Tubular organ segmentation in CT: FCNN, active contour and random walker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides a configuration value, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config, CliError> {
        Config::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generates synthetic phantoms with ground-truth masks.
    PhantomGen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fits the intensity mixture and gradient statistics.
    FitPriors {
        #[arg(long)]
        manifest: PathBuf,
        /// Prior model file to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Trains the network.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for checkpoints and the loss log.
        #[arg(long)]
        out: PathBuf,
        /// Continues from a checkpoint saved at an epoch boundary.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Segments one CT volume, or every case of a manifest.
    Segment {
        #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
        ct: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        priors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also writes the network, centerline, CT-prior and walker maps.
        #[arg(long)]
        save_intermediates: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Scores predicted masks against references.
    Evaluate {
        /// Manifest of predicted masks (the last column of each row is used).
        #[arg(long)]
        pred: PathBuf,
        /// Manifest of reference masks, row-aligned with `--pred`.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Second prediction manifest; adds a paired Wilcoxon test per metric.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Restricts both masks to slices `Z0..=Z1`.
        #[arg(long, num_args = 2, value_names = ["Z0", "Z1"])]
        crop: Option<Vec<usize>>,
        /// Report file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("esoseg: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::PhantomGen { n, seed, out, config } => {
            let cfg = config.load()?;
            let manifest = generate_dataset(&out, &cfg.phantom, n, seed)?;
            echo_config(&out, &cfg)?;
            eprintln!("wrote {n} phantoms, manifest {}", manifest.display());
            Ok(())
        }
        Command::FitPriors { manifest, out, config } => {
            let cfg = config.load()?;
            let pairs: Vec<_> = load_pairs(&manifest)?.into_iter().map(|(_, ct, m)| (ct, m)).collect();
            let model = fit_priors(&pairs, &cfg.prior_config())?;
            write_priors(&out, &model)?;
            echo_config(out.parent().unwrap_or(Path::new("")), &cfg)
        }
        Command::Train {
            manifest,
            out,
            resume,
            config,
        } => cmd_train(&manifest, &out, resume.as_deref(), &config.load()?),
        Command::Segment {
            ct,
            manifest,
            checkpoint,
            priors,
            out,
            save_intermediates,
            config,
        } => {
            let cfg = config.load()?;
            let ck = load_checkpoint(&checkpoint)?;
            let priors = read_priors(&priors)?;
            let scfg = cfg.segment_config();
            echo_config(&out, &cfg)?;
            if let Some(ct_path) = ct {
                let ct = read_kind(&ct_path, VolumeKind::Hu)?;
                let seg = segment(&ct, &ck.params, &priors, &scfg)?;
                write_segmentation(&out, "mask", &seg, save_intermediates)
            } else {
                let manifest = manifest.expect("clap requires --ct or --manifest");
                let rows = read_manifest(&manifest)?;
                if rows.is_empty() {
                    return Err(CliError::format(&manifest, "manifest lists no cases"));
                }
                let (mut pipeline, mut cnn) = (Vec::new(), Vec::new());
                for row in &rows {
                    let id = row.id();
                    let ct = read_kind(&row.paths[0], VolumeKind::Hu)?;
                    let seg = segment(&ct, &ck.params, &priors, &scfg)?;
                    write_segmentation(&out.join(&id), "mask", &seg, save_intermediates)?;
                    let final_path = out.join(format!("{id}.mhd"));
                    let cnn_path = out.join("cnn").join(format!("{id}.mhd"));
                    write_volume(&final_path, &seg.mask)?;
                    write_volume(&cnn_path, &seg.cnn_mask()?)?;
                    pipeline.push(vec![final_path]);
                    cnn.push(vec![cnn_path]);
                }
                write_manifest(&out.join("predictions.txt"), &pipeline)?;
                write_manifest(&out.join("cnn_predictions.txt"), &cnn)
            }
        }
        Command::Evaluate {
            pred,
            reference,
            compare,
            crop,
            out,
        } => {
            let crop = crop.map(|c| (c[0], c[1]));
            let refs = read_manifest(&reference)?;
            let a = score_manifest(&pred, &refs, &reference, crop)?;
            let text = match compare {
                None => format_report(&a),
                Some(other) => {
                    let b = score_manifest(&other, &refs, &reference, crop)?;
                    let column = |r: &MetricReport, f: fn(&CaseMetrics) -> f64| r.cases.iter().map(f).collect::<Vec<_>>();
                    let metrics: [(&str, fn(&CaseMetrics) -> f64); 3] =
                        [("dsc", |c| c.dsc), ("assd_mm", |c| c.assd_mm), ("hd_mm", |c| c.hd_mm)];
                    let tests: Vec<_> = metrics
                        .iter()
                        .map(|(name, f)| {
                            let t = wilcoxon_signed_rank(&column(&a, *f), &column(&b, *f)).map_err(|e| e.to_string());
                            (*name, t)
                        })
                        .collect();
                    format_comparison(("pred", &a), ("compare", &b), &tests)
                }
            };
            write_text(&out, &text)
        }
    }
}

fn echo_config(dir: &Path, cfg: &Config) -> Result<(), CliError> {
    write_text(&dir.join(EFFECTIVE_CONFIG), &cfg.to_toml())
}

fn write_segmentation(dir: &Path, name: &str, seg: &Segmentation, intermediates: bool) -> Result<(), CliError> {
    write_volume(&dir.join(format!("{name}.mhd")), &seg.mask)?;
    write_text(&dir.join("centerline.txt"), &format_centerline(&seg.centerline))?;
    if intermediates {
        write_volume(&dir.join("cnn.mhd"), &seg.cnn)?;
        write_volume(&dir.join("acm.mhd"), &seg.acm)?;
        write_volume(&dir.join("ctprior.mhd"), &seg.ct_prior)?;
        write_volume(&dir.join("rw.mhd"), &seg.rw)?;
    }
    Ok(())
}

fn cmd_train(manifest: &Path, out: &Path, resume: Option<&Path>, cfg: &Config) -> Result<(), CliError> {
    let arch = cfg.architecture.to_spec()?;
    let tcfg = cfg.train.to_config();
    tcfg.validate(&arch).map_err(|e| CliError::core(Stage::Train, e))?;
    let pairs: Vec<_> = load_pairs(manifest)?.into_iter().map(|(_, ct, m)| (ct, m)).collect();
    let set = TrainingSet::new(&pairs).map_err(|e| CliError::core(Stage::Train, e))?;
    let mut trainer = match resume {
        None => Trainer::new(&set, &arch, tcfg.clone()).map_err(|e| CliError::core(Stage::Train, e))?,
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.params.arch != arch {
                return Err(CliError::format(path, "checkpoint architecture differs from the configuration"));
            }
            let (cache, velocity) = ck
                .optimizer
                .ok_or_else(|| CliError::format(path, "checkpoint carries no optimizer state to resume from"))?;
            let optimizer = RmsProp {
                decay: tcfg.rms_decay,
                momentum: tcfg.momentum,
                epsilon: tcfg.epsilon,
                cache,
                velocity,
            };
            Trainer::resume(tcfg.clone(), ck.params, optimizer, ck.epochs_done)
                .map_err(|e| CliError::core(Stage::Train, e))?
        }
    };
    echo_config(out, cfg)?;
    let mut log = Vec::new();
    while !trainer.is_finished() {
        let losses = trainer.run_epoch(&set).map_err(|e| CliError::core(Stage::Train, e))?;
        let epoch = trainer.epochs_done;
        log.extend(losses.iter().enumerate().map(|(k, &l)| (epoch, k + 1, l)));
        write_text(&out.join("loss.tsv"), &format_loss_log(&log))?;
        let ck = Checkpoint::new(trainer.params.clone(), epoch, Some(&trainer.optimizer));
        save_checkpoint(&out.join(format!("epoch{epoch:03}.ckpt")), &ck)?;
        eprintln!("epoch {epoch}: mean loss {:.6}", losses.iter().sum::<f64>() / losses.len() as f64);
    }
    let ck = Checkpoint::new(trainer.params.clone(), trainer.epochs_done, Some(&trainer.optimizer));
    save_checkpoint(&out.join("final.ckpt"), &ck)
}

fn score_manifest(
    pred: &Path,
    refs: &[crate::formats::ManifestEntry],
    ref_path: &Path,
    crop: Option<(usize, usize)>,
) -> Result<MetricReport, CliError> {
    let preds = read_manifest(pred)?;
    if preds.len() != refs.len() {
        return Err(CliError::format(
            pred,
            format!("{} predictions for {} references in {}", preds.len(), refs.len(), ref_path.display()),
        ));
    }
    if refs.is_empty() {
        return Err(CliError::format(ref_path, "manifest lists no cases"));
    }
    let mut cases = Vec::with_capacity(refs.len());
    for (p, r) in preds.iter().zip(refs) {
        let pm = read_kind(p.mask(), VolumeKind::Mask)?;
        let rm = read_kind(r.mask(), VolumeKind::Mask)?;
        let (pm, rm) = match crop {
            Some((z0, z1)) => crop_masks(&pm, &rm, z0, z1).map_err(|e| CliError::core(Stage::Evaluate, e))?,
            None => (pm, rm),
        };
        cases.push(evaluate_case(&r.id(), &pm, &rm).map_err(|e| CliError::core(Stage::Evaluate, e))?);
    }
    Ok(MetricReport::new(cases))
}
