use esoseg_core::acm::*;
use esoseg_core::{Volume3D, VolumeKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian tube of width `sigma` voxels around `axis(z)`.
fn tube_map(dims: [usize; 3], sigma: f64, axis: impl Fn(usize) -> [f64; 2]) -> Volume3D {
    Volume3D::from_fn(dims, [1.0, 1.0, 3.0], VolumeKind::Probability, |x, y, z| {
        let c = axis(z);
        let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2);
        (-d2 / (2.0 * sigma * sigma)).exp()
    })
    .unwrap()
}

#[test]
fn straight_tube_axis_is_found() {
    for (cx, cy) in [(20.0, 17.0), (14.3, 22.6), (25.5, 12.5)] {
        let map = tube_map([40, 36, 16], 2.5, |_| [cx, cy]);
        let c = fit_centerline(&map, &AcmConfig::default()).unwrap();
        for p in c.points() {
            let err = (p[0] - cx).hypot(p[1] - cy);
            assert!(err <= 1.0, "point {p:?} vs axis ({cx}, {cy})");
        }
    }
}

#[test]
fn straight_tube_from_a_poor_start() {
    let map = tube_map([40, 36, 12], 3.0, |_| [19.0, 18.0]);
    let init = Centerline::new(vec![[15.0, 14.0]; 12], map.dims()).unwrap();
    let fit = fit_centerline_from(&map, &init, &AcmConfig::default()).unwrap();
    for p in fit.centerline.points() {
        assert!((p[0] - 19.0).hypot(p[1] - 18.0) <= 1.0, "{p:?}");
    }
    assert!(fit.energy.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn maxima_are_stationary_without_smoothness() {
    // A compact bump per slice, far enough from its neighbours' bumps that
    // the 3x3x3 smoothing does not mix them: each slice centre is then a strict
    // maximum of the smoothed field.
    let dims = [18, 16, 6];
    let peaks: Vec<[f64; 2]> = (0..6).map(|z| [4.0 + 6.0 * (z % 2) as f64 + (z / 2) as f64, 10.0 - 6.0 * (z % 2) as f64]).collect();
    let map = Volume3D::from_fn(dims, [1.0; 3], VolumeKind::Probability, |x, y, z| {
        let d2 = (x as f64 - peaks[z][0]).powi(2) + (y as f64 - peaks[z][1]).powi(2);
        (1.0 - d2 / 4.0).max(0.0)
    })
    .unwrap();
    let init = Centerline::new(peaks.clone(), dims).unwrap();
    let cfg = AcmConfig { alpha: 0.0, ..AcmConfig::default() };
    let fit = fit_centerline_from(&map, &init, &cfg).unwrap();
    for (p, q) in fit.centerline.points().iter().zip(&peaks) {
        assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9, "{p:?} moved from {q:?}");
    }
}

fn line_deviation(points: &[[f64; 2]]) -> f64 {
    // Least-squares line per coordinate against z.
    let n = points.len() as f64;
    let zm = (n - 1.0) / 2.0;
    let szz: f64 = (0..points.len()).map(|z| (z as f64 - zm).powi(2)).sum();
    let mut worst: f64 = 0.0;
    for a in 0..2 {
        let mean = points.iter().map(|p| p[a]).sum::<f64>() / n;
        let slope = points.iter().enumerate().map(|(z, p)| (z as f64 - zm) * (p[a] - mean)).sum::<f64>() / szz;
        for (z, p) in points.iter().enumerate() {
            worst = worst.max((p[a] - (mean + slope * (z as f64 - zm))).abs());
        }
    }
    worst
}

#[test]
fn huge_smoothness_gives_a_straight_line() {
    let map = tube_map([40, 40, 20], 2.5, |z| {
        let t = z as f64 / 3.0;
        [20.0 + 4.0 * t.sin(), 20.0 + 3.0 * (0.7 * t).cos()]
    });
    let cfg = AcmConfig { alpha: 1e6, ..AcmConfig::default() };
    let fit = fit_centerline_from(&map, &init_centerline(&map).unwrap(), &cfg).unwrap();
    assert!(line_deviation(fit.centerline.points()) < 0.1);
    assert!(fit.energy.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn energy_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..10 {
        let (a, b) = (rng.random_range(1.0..5.0), rng.random_range(0.1..0.6));
        let map = tube_map([36, 36, 14], rng.random_range(1.5..4.0), |z| {
            [18.0 + a * (b * z as f64).sin(), 18.0 + a * (b * z as f64).cos()]
        });
        let cfg = AcmConfig {
            alpha: rng.random_range(0.0..5.0),
            step: rng.random_range(0.1..4.0),
            ..AcmConfig::default()
        };
        let fit = fit_centerline_from(&map, &init_centerline(&map).unwrap(), &cfg).unwrap();
        for w in fit.energy.windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn in_plane_translation_carries_over() {
    let axis = |z: usize| [15.0 + 2.0 * (z as f64 / 2.5).sin(), 16.0 + 1.5 * (z as f64 / 3.0).cos()];
    let (dx, dy) = (5usize, 3usize);
    let base = tube_map([44, 44, 14], 2.5, axis);
    let shifted = tube_map([44, 44, 14], 2.5, |z| {
        let p = axis(z);
        [p[0] + dx as f64, p[1] + dy as f64]
    });
    let cfg = AcmConfig::default();
    let a = fit_centerline(&base, &cfg).unwrap();
    let b = fit_centerline(&shifted, &cfg).unwrap();
    for (p, q) in a.points().iter().zip(b.points()) {
        assert!((q[0] - p[0] - dx as f64).abs() <= 0.01 && (q[1] - p[1] - dy as f64).abs() <= 0.01, "{p:?} {q:?}");
    }
}

#[test]
fn initialisation_rules() {
    let dims = [9, 9, 3];
    let map = Volume3D::from_fn(dims, [1.0; 3], VolumeKind::Probability, |x, y, z| {
        f64::from(u8::from(z == 1 && y == 5 && (x == 2 || x == 6)))
    })
    .unwrap();
    let c = init_centerline(&map).unwrap();
    assert_eq!(c.points(), &[[4.0, 5.0]; 3]);
    let empty = Volume3D::filled(dims, [1.0; 3], VolumeKind::Probability, 0.0).unwrap();
    assert_eq!(init_centerline(&empty).unwrap().points(), &[[4.0, 4.0]; 3]);
}

#[test]
fn distance_map_falloff() {
    // 0.5 mm along x, so 25 voxels are 12.5 mm.
    let geometry = Volume3D::filled([60, 7, 4], [0.5, 1.0, 2.0], VolumeKind::Hu, 0.0).unwrap();
    let c = Centerline::new(vec![[2.0, 3.0]; 4], geometry.dims()).unwrap();
    let m = centerline_distance_map(&c, &geometry).unwrap();
    assert_eq!(m.kind(), VolumeKind::Probability);
    assert_eq!(m.get(2, 3, 1), 1.0);
    assert_eq!(m.get(27, 3, 1), 0.5);
    assert_eq!(m.get(52, 3, 1), 0.0);
    assert_eq!(m.get(59, 3, 1), 0.0);
    assert_eq!(FALLOFF_MM, 25.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn distance_map_is_bounded_and_lipschitz(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [24, 20, 10];
        let spacing = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(1.0..4.0)];
        let geometry = Volume3D::filled(dims, spacing, VolumeKind::Hu, 0.0).unwrap();
        let points = (0..dims[2]).map(|_| [rng.random_range(0.0..23.0), rng.random_range(0.0..19.0)]).collect();
        let c = Centerline::new(points, dims).unwrap();
        let m = centerline_distance_map(&c, &geometry).unwrap();
        prop_assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for _ in 0..200 {
            let i = rng.random_range(0..m.len());
            let j = rng.random_range(0..m.len());
            let (p, q) = (m.coords(i), m.coords(j));
            let d = (0..3).map(|a| ((p[a] as f64 - q[a] as f64) * spacing[a]).powi(2)).sum::<f64>().sqrt();
            prop_assert!((m.data()[i] - m.data()[j]).abs() <= d / 25.0 + 1e-12);
        }
    }
}
