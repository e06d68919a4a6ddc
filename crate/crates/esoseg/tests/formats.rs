use std::fs;

use esoseg::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use esoseg::config::Config;
use esoseg::formats::*;
use esoseg::mhd::{read_kind, read_volume, write_volume};
use esoseg::pipeline::PriorModel;
use esoseg::CliError;
use esoseg_core::acm::Centerline;
use esoseg_core::fcnn::{ArchitectureSpec, InputNorm, NetworkParams, RmsProp};
use esoseg_core::priors::{Component, GmmModel, GradientStats};
use esoseg_core::{Volume3D, VolumeKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[test]
fn volumes_round_trip_for_every_kind() {
    let dir = tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = [5, 4, 3];
    let spacing = [0.7, 0.7, 2.5];
    let vols = [
        Volume3D::from_fn(dims, spacing, VolumeKind::Hu, |_, _, _| rng.random_range(-32768..=32767) as f64).unwrap(),
        Volume3D::from_fn(dims, spacing, VolumeKind::Probability, |x, y, z| round_f32((x + y * z) as f64 / 20.0)).unwrap(),
        Volume3D::from_fn(dims, spacing, VolumeKind::Mask, |x, _, z| f64::from(u8::from(x == z))).unwrap(),
    ];
    for (i, v) in vols.iter().enumerate() {
        let path = dir.path().join(format!("v{i}.mhd"));
        write_volume(&path, v).unwrap();
        assert!(path.with_extension("raw").exists());
        assert_eq!(&read_volume(&path).unwrap(), v);
        assert_eq!(&read_kind(&path, v.kind()).unwrap(), v);
    }
    let mask_path = dir.path().join("v2.mhd");
    assert!(matches!(read_kind(&mask_path, VolumeKind::Hu), Err(CliError::Format { .. })));
}

#[test]
fn hu_must_fit_a_short() {
    let dir = tempdir().unwrap();
    for bad in [0.5, 40000.0] {
        let v = Volume3D::new([2, 1, 1], [1.0; 3], VolumeKind::Hu, vec![0.0, bad]).unwrap();
        assert!(write_volume(&dir.path().join("bad.mhd"), &v).is_err());
    }
}

#[test]
fn malformed_headers_are_rejected() {
    let dir = tempdir().unwrap();
    let v = Volume3D::filled([2, 2, 2], [1.0; 3], VolumeKind::Mask, 1.0).unwrap();
    let path = dir.path().join("m.mhd");
    write_volume(&path, &v).unwrap();
    let good = fs::read_to_string(&path).unwrap();
    let cases = [
        good.replace("NDims = 3", "NDims = 2"),
        good.replace("MET_UCHAR", "MET_DOUBLE"),
        good.replace("BinaryDataByteOrderMSB = False", "BinaryDataByteOrderMSB = True"),
        good.replace("DimSize = 2 2 2", "DimSize = 2 2"),
        good.replace("DimSize = 2 2 2", "DimSize = 2 2 3"),
        good.replace("ElementDataFile = m.raw", "ElementDataFile = LOCAL"),
        good.replace("ElementDataFile = m.raw\n", ""),
        format!("{good}CompressedData = True\n"),
        "not a header\n".to_string(),
    ];
    for (i, text) in cases.iter().enumerate() {
        let p = dir.path().join(format!("bad{i}.mhd"));
        fs::write(&p, text).unwrap();
        let err = read_volume(&p).unwrap_err();
        assert_eq!(err.exit_code(), 2, "case {i}: {err}");
    }
    // A mask byte outside {0, 1} is caught by the kind check.
    fs::write(path.with_extension("raw"), [0u8, 1, 2, 0, 0, 0, 0, 0]).unwrap();
    assert!(read_volume(&path).is_err());
    assert!(matches!(read_volume(&dir.path().join("missing.mhd")), Err(CliError::Io { .. })));
}

fn trained_like_params(seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NetworkParams::init(&ArchitectureSpec::tiny(), &mut rng).unwrap();
    p.input_norm = InputNorm { mean: -12.5, std: 310.25 };
    p.for_each_tensor_mut(|t| t.iter_mut().for_each(|v| *v = round_f32(*v)));
    p
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempdir().unwrap();
    let params = trained_like_params(3);
    let mut opt = RmsProp::new(&params, 0.9, 0.6, 1e-6);
    for (i, t) in opt.cache.iter_mut().chain(opt.velocity.iter_mut()).enumerate() {
        t.iter_mut().for_each(|v| *v = round_f32(i as f64 * 1e-3 + 0.25));
    }
    for ck in [Checkpoint::new(params.clone(), 4, Some(&opt)), Checkpoint::new(params, 0, None)] {
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    save_checkpoint(&path, &Checkpoint::new(trained_like_params(4), 1, None)).unwrap();
    let bytes = fs::read(&path).unwrap();
    let truncated = dir.path().join("short.ckpt");
    fs::write(&truncated, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(&truncated).is_err());
    let renamed = dir.path().join("magic.ckpt");
    let mut other = bytes.clone();
    other[0] = b'X';
    fs::write(&renamed, other).unwrap();
    assert!(load_checkpoint(&renamed).is_err());
    let nan = dir.path().join("nan.ckpt");
    let mut poisoned = bytes;
    let n = poisoned.len();
    poisoned[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&nan, poisoned).unwrap();
    assert!(load_checkpoint(&nan).is_err());
}

#[test]
fn priors_round_trip_to_nine_digits() {
    let dir = tempdir().unwrap();
    let model = PriorModel {
        gmm: GmmModel::new(vec![
            Component { weight: 0.961, mean: 29.978697, variance: 247.68953 },
            Component { weight: 0.039, mean: -799.92396, variance: 25.127592 },
        ])
        .unwrap(),
        stats: GradientStats { mu_delta: 0.0077978, sigma_delta: 22.712524, mean_eso_hu: -2.3804078 },
    };
    let path = dir.path().join("priors.txt");
    write_priors(&path, &model).unwrap();
    let back = read_priors(&path).unwrap();
    for (a, b) in model.gmm.components().iter().zip(back.gmm.components()) {
        for (x, y) in [(a.weight, b.weight), (a.mean, b.mean), (a.variance, b.variance)] {
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
        }
    }
    let total: f64 = back.gmm.components().iter().map(|c| c.weight).sum();
    assert!((total - 1.0).abs() <= 1e-15);
    assert!((back.stats.sigma_delta - model.stats.sigma_delta).abs() <= 1e-7);
    // Writing what was read reproduces the file.
    let again = dir.path().join("again.txt");
    write_priors(&again, &back).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());

    let text = fs::read_to_string(&path).unwrap();
    for broken in [text.replace("esoseg-priors 1", "priors"), text.replace("sigma_delta", "sigma"), text.replace("components 2", "components 3")] {
        fs::write(&path, broken).unwrap();
        assert!(read_priors(&path).is_err());
    }
}

#[test]
fn centerline_text_round_trip() {
    let dir = tempdir().unwrap();
    let c = Centerline::new(vec![[1.5, 2.25], [3.125, 4.0], [0.0, 6.5]], [8, 8, 3]).unwrap();
    let path = dir.path().join("c.txt");
    fs::write(&path, format_centerline(&c)).unwrap();
    assert_eq!(read_centerline(&path, [8, 8, 3]).unwrap(), c);
    assert!(read_centerline(&path, [8, 8, 4]).is_err());
    fs::write(&path, "0 1 1\n2 1 1\n1 1 1\n").unwrap();
    assert!(read_centerline(&path, [8, 8, 3]).is_err());
}

#[test]
fn manifests_resolve_relative_paths() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("sub").join("list.txt");
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(&path, "# header\na_ct.mhd a.mhd\n\n  b.mhd  # trailing comment\n").unwrap();
    let rows = read_manifest(&path).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].paths, vec![dir.path().join("sub/a_ct.mhd"), dir.path().join("sub/a.mhd")]);
    assert_eq!(rows[0].id(), "a");
    assert_eq!(rows[1].mask(), dir.path().join("sub/b.mhd"));

    let out = dir.path().join("sub").join("written.txt");
    write_manifest(&out, &[vec![dir.path().join("sub/x.mhd")]]).unwrap();
    assert_eq!(fs::read_to_string(&out).unwrap(), "x.mhd\n");
    fs::write(&path, "a b c\n").unwrap();
    assert!(read_manifest(&path).is_err());
}

#[test]
fn config_defaults_overrides_and_unknown_keys() {
    let d = Config::load(None, &[]).unwrap();
    assert_eq!(d, Config::default());
    assert_eq!(d.architecture.to_spec().unwrap(), ArchitectureSpec::tiny());

    let c = Config::load(None, &["train.epochs=3".into(), "rw.gamma = 2.5".into(), "architecture.preset=full".into()]).unwrap();
    assert_eq!((c.train.epochs, c.rw.gamma), (3, 2.5));
    assert_eq!(c.architecture.to_spec().unwrap(), ArchitectureSpec::paper_default());
    assert_eq!(c.segment_config().rw.gamma, 2.5);

    let dir = tempdir().unwrap();
    let file = dir.path().join("c.toml");
    fs::write(&file, "[train]\nepochs = 7\nlr0 = 0.01\n[phantom]\ndims = [40, 40, 20]\n").unwrap();
    let c = Config::load(Some(&file), &["train.epochs=2".into()]).unwrap();
    assert_eq!((c.train.epochs, c.train.lr0, c.phantom.dims), (2, 0.01, [40, 40, 20]));
    // The echoed configuration parses back to the same values.
    let echo = dir.path().join("echo.toml");
    fs::write(&echo, c.to_toml()).unwrap();
    assert_eq!(Config::load(Some(&echo), &[]).unwrap(), c);

    for bad in ["train.epoch=3", "nosuch.key=1", "epochs=3", "train.epochs=many"] {
        let e = Config::load(None, &[bad.into()]).unwrap_err();
        assert_eq!(e.exit_code(), 1, "{bad}: {e}");
    }
    fs::write(&file, "[train]\nbogus = 1\n").unwrap();
    assert!(Config::load(Some(&file), &[]).is_err());
    let arch = Config::load(None, &["architecture.conv_kernels=[]".into()]).unwrap();
    assert!(arch.architecture.to_spec().is_err());
}
