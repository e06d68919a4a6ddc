use esoseg_core::volume::*;
use esoseg_core::{Volume3D, VolumeKind};
use proptest::prelude::*;

fn dims_strategy(max: usize) -> impl Strategy<Value = [usize; 3]> {
    prop::array::uniform3(1usize..=max)
}

fn volume(dims: [usize; 3], values: &[i32]) -> Volume3D {
    let n = dims.iter().product::<usize>();
    Volume3D::new(dims, [1.0, 0.5, 2.0], VolumeKind::Hu, values.iter().cycle().take(n).map(|&v| v as f64).collect()).unwrap()
}

#[test]
fn kinds_enforce_their_ranges() {
    assert!(Volume3D::new([2, 1, 1], [1.0; 3], VolumeKind::Mask, vec![0.0, 0.5]).is_err());
    assert!(Volume3D::new([2, 1, 1], [1.0; 3], VolumeKind::Probability, vec![0.0, 1.5]).is_err());
    assert!(Volume3D::new([2, 1, 1], [1.0; 3], VolumeKind::Hu, vec![0.0, f64::NAN]).is_err());
    assert!(Volume3D::new([2, 1, 1], [1.0, 0.0, 1.0], VolumeKind::Hu, vec![0.0; 2]).is_err());
    assert!(Volume3D::new([2, 0, 1], [1.0; 3], VolumeKind::Hu, vec![]).is_err());
    assert!(Volume3D::new([2, 2, 1], [1.0; 3], VolumeKind::Hu, vec![0.0; 3]).is_err());
}

#[test]
fn mirror_padding_without_edge_repeat() {
    let v = Volume3D::new([4, 1, 1], [1.0; 3], VolumeKind::Hu, vec![10.0, 20.0, 30.0, 40.0]).unwrap();
    let r = extract_region(&v, [-2, 0, 0], [8, 1, 1]).unwrap();
    assert_eq!(r.data(), &[30.0, 20.0, 10.0, 20.0, 30.0, 40.0, 30.0, 20.0]);
    assert!(extract_subvolume(&v, [1, 0, 0], [2, 1, 1]).is_err());
}

#[test]
fn up_and_down_sampling_shapes() {
    let v = volume([5, 4, 3], &[1, 2, 3]);
    let d = downsample2(&v).unwrap();
    assert_eq!(d.dims(), [2, 2, 1]);
    let u = upsample2_nearest(&d, [4, 3, 2]).unwrap();
    assert_eq!(u.dims(), [4, 3, 2]);
    assert!(upsample2_nearest(&d, [6, 4, 2]).is_err());
    assert_eq!(d.spacing(), [2.0, 1.0, 4.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn full_size_extraction_is_the_identity(half in prop::array::uniform3(0usize..4), values in prop::collection::vec(-1000i32..1000, 1..40)) {
        let dims = half.map(|h| 2 * h + 1);
        let v = volume(dims, &values);
        let center = half;
        prop_assert_eq!(extract_subvolume(&v, center, dims).unwrap(), v.clone());
        prop_assert_eq!(extract_region(&v, [0, 0, 0], dims).unwrap(), v);
    }

    #[test]
    fn downsampling_keeps_the_mean(half in prop::array::uniform3(1usize..5), values in prop::collection::vec(-1000i32..1000, 1..64)) {
        let v = volume(half.map(|h| 2 * h), &values);
        let d = downsample2(&v).unwrap();
        let mean = |x: &Volume3D| x.data().iter().sum::<f64>() / x.len() as f64;
        prop_assert!((mean(&v) - mean(&d)).abs() <= 1e-9);
        // Nearest up-sampling back to full size keeps the block means.
        let u = upsample2_nearest(&d, v.dims()).unwrap();
        prop_assert!((mean(&u) - mean(&d)).abs() <= 1e-9);
    }

    #[test]
    fn coordinates_round_trip(dims in dims_strategy(6), pick in any::<prop::sample::Index>()) {
        let v = volume(dims, &[0]);
        let i = pick.index(v.len());
        let [x, y, z] = v.coords(i);
        prop_assert_eq!(v.index(x, y, z), i);
    }
}
