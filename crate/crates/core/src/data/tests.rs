use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

#[test]
fn zero_noise_gaussians_lie_on_grid() {
    let spec = DatasetSpec {
        std: 0.0,
        ..DatasetSpec::gaussians25()
    };
    let x = sample::<f64>(&spec, 2000).unwrap();
    let grid = [-4.0, -2.0, 0.0, 2.0, 4.0];
    for v in x.data() {
        assert!(grid.contains(v), "{v}");
    }
}

#[test]
fn unit_gaussian_mean_is_within_clt_band() {
    let n = 1_000_000;
    let x = sample::<f64>(&DatasetSpec::gaussian_unit(2).with_seed(3), n).unwrap();
    for c in 0..2 {
        let mean = (0..n).map(|i| x.row(i)[c]).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt() * 3.0, "{mean}");
    }
}

#[test]
fn synthetic_mode_frequencies_are_uniform() {
    let spec = DatasetSpec::synthetic_modes(25, 8).with_seed(11);
    let sampler = Sampler::new(&spec).unwrap();
    let n = 100_000;
    let x = sampler.sample::<f64>(n).unwrap();
    let labels = sampler.mode_assign(&x).unwrap();
    let mut counts = [0usize; 25];
    for l in labels.iter().flatten() {
        counts[*l] += 1;
    }
    let n: usize = counts.iter().sum();
    let p = 1.0 / 25.0;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn synthetic_means_respect_separation() {
    let spec = DatasetSpec::synthetic_modes(1000, 16).with_seed(2);
    let means = spec.means().unwrap().unwrap();
    assert_eq!(means.len(), 1000);
    for i in 0..means.len() {
        for j in 0..i {
            let d2: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(d2.sqrt() >= spec.separation);
        }
    }
    assert_eq!(means, spec.means().unwrap().unwrap());
}

#[test]
fn mode_assign_examples() {
    let spec = DatasetSpec::gaussians25();
    let pts = Tensor::from_rows(&[vec![2.0, -4.0], vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let labels = mode_assign(&spec, &pts).unwrap();
    assert_eq!(labels[0], Some(3 * 5));
    assert_eq!(labels[1], None);
    assert_eq!(labels[2], Some(12));
    assert!(mode_assign(&DatasetSpec::gaussian_unit(2), &pts).is_err());
}

#[test]
fn true_samples_recover_their_mode() {
    for spec in [DatasetSpec::gaussians25(), DatasetSpec::synthetic_modes(25, 8)] {
        let sampler = Sampler::new(&spec).unwrap();
        let means = sampler.means().unwrap().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let per = 4000;
        let mut wrong = 0;
        for (k, m) in means.iter().enumerate() {
            let rows: Vec<Vec<f64>> = (0..per)
                .map(|_| {
                    m.iter()
                        .map(|&mu| mu + spec.std * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            let labels = sampler.mode_assign(&Tensor::from_rows(&rows).unwrap()).unwrap();
            wrong += labels.iter().filter(|l| **l != Some(k)).count();
        }
        let total = (per * means.len()) as f64;
        let rate = wrong as f64 / total;
        let tail = three_sigma_tail();
        // 4σ binomial allowance over the nominal tail mass
        assert!(rate <= tail + 4.0 * (tail / total).sqrt(), "{rate}");
    }
}

#[test]
fn coverage_radius_is_three_in_one_dimension() {
    assert!((coverage_radius(1) - 3.0).abs() < 1e-9);
    assert!(coverage_radius(2) > 3.0);
    assert!(coverage_radius(8) > coverage_radius(2));
}

#[test]
fn determinism_and_shapes() {
    for kind in [
        DatasetKind::Gaussians25,
        DatasetKind::SwissRoll,
        DatasetKind::Rings,
        DatasetKind::SyntheticModes,
        DatasetKind::GaussianUnit,
    ] {
        let spec = DatasetSpec::new(kind).with_seed(5);
        let a = sample::<f64>(&spec, 50).unwrap();
        let b = sample::<f64>(&spec, 50).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), &[50, spec.dim().unwrap()]);
        let c = sample::<f64>(&spec.clone().with_seed(6), 50).unwrap();
        assert_ne!(a.data(), c.data());
    }
}

#[test]
fn swiss_roll_stays_in_its_box() {
    let spec = DatasetSpec {
        std: 1e-9,
        ..DatasetSpec::new(DatasetKind::SwissRoll)
    };
    let x = sample::<f64>(&spec, 5000).unwrap();
    assert!(x.data().iter().all(|v| v.abs() <= 4.0 + 1e-6));
}

#[test]
fn rejects_bad_specs() {
    let err = DatasetSpec::default().validate().unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "dataset.kind"));
    let err = serde_json::from_str::<DatasetSpec>(r#"{"kind":"mnist"}"#).unwrap_err();
    assert!(err.to_string().contains("mnist"));
    let spec = DatasetSpec {
        separation: 0.2,
        std: 0.05,
        ..DatasetSpec::synthetic_modes(5, 2)
    };
    assert!(matches!(spec.validate(), Err(Error::Config { ref field, .. }) if field == "dataset.separation"));
    assert!(sample::<f64>(&DatasetSpec::gaussians25(), 0).is_err());
}

#[test]
fn csv_export_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pts.csv");
    let x = sample::<f64>(&DatasetSpec::synthetic_modes(3, 3), 4).unwrap();
    write_csv(&x, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,x3"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(first, x.row(0));
    assert_eq!(text.lines().count(), 5);
}

mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn same_seed_same_samples(seed in any::<u64>(), n in 1usize..64) {
            let spec = DatasetSpec::gaussians25().with_seed(seed);
            prop_assert_eq!(sample::<f64>(&spec, n).unwrap().to_vec(), sample::<f64>(&spec, n).unwrap().to_vec());
        }

        #[test]
        fn means_assign_to_themselves(seed in 0u64..200, k in 1usize..40, d in 1usize..10) {
            let spec = DatasetSpec::synthetic_modes(k, d).with_seed(seed);
            let s = Sampler::new(&spec).unwrap();
            let m = Tensor::<f64>::from_rows(s.means().unwrap()).unwrap();
            let labels = s.mode_assign(&m).unwrap();
            prop_assert_eq!(labels, (0..k).map(Some).collect::<Vec<_>>());
        }
    }
}
