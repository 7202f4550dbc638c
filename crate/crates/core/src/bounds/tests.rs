use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{FnMapping, LinearMap, Tape};
use crate::nets::{Activation, ArchSpec, Mlp};
use crate::spectral::exact_smallest_singular;

const H2: f64 = 2.837_877_066_409_345_3; // 1 + ln 2π

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn normal(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor<f64> {
    gaussian_probes(rng, n, d)
}

fn identity(d: usize) -> FnMapping<impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>> {
    FnMapping::new(d, d, |z: &Tensor<f64>| Ok(z.clone()))
}

/// `E(x) = ‖x‖²/2` row-wise, as `[n, 1]`.
fn quadratic(d: usize) -> FnMapping<impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>> {
    FnMapping::new(d, 1, move |x: &Tensor<f64>| {
        let n = x.rows();
        x.square()?.sum_cols()?.scale(0.5)?.reshape(&[n, 1])
    })
}

fn small_mlp(seed: u64, d: usize, dd: usize) -> Mlp<f64> {
    Mlp::build(&ArchSpec::generator(&[d, 16, 16, dd], Activation::Prelu, Activation::Identity), seed)
        .unwrap()
}

#[test]
fn entropy_lower_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = normal(&mut rng, 16, 2);
    let cfg = LobpcgConfig::converged();
    let (h, _) = entropy_lower(&identity(2), &z, &cfg, None, &mut rng).unwrap();
    assert!((h - H2).abs() < 1e-12);
    assert!((base_entropy(2) - 2.8378771).abs() < 1e-7);

    let g = LinearMap::scaled_identity(2, 2.0);
    let (h, _) = entropy_lower(&g, &z, &cfg, None, &mut rng).unwrap();
    assert!((h - 4.2241715).abs() < 1e-7);
    assert!((h - entropy_exact(&g, &z).unwrap()).abs() < 1e-12);

    let g = LinearMap::diagonal(&[1.0, 3.0]);
    let (h, _) = entropy_lower(&g, &z, &cfg, None, &mut rng).unwrap();
    assert!((h - 2.8378771).abs() < 1e-7);
    let exact = entropy_exact(&g, &z).unwrap();
    assert!((exact - (H2 + 3.0_f64.ln())).abs() < 1e-12);
    assert!((exact - h - 3.0_f64.ln()).abs() < 1e-12);
}

#[test]
fn entropy_lower_reports_degenerate_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = entropy_lower(
        &LinearMap::diagonal(&[1.0, 0.0]),
        &t(&[2, 2], &[0.0, 1.0, 2.0, 3.0]),
        &LobpcgConfig::default(),
        None,
        &mut rng,
    )
    .unwrap_err();
    assert!(matches!(err, Error::DegenerateJacobian { sample: 0, .. }));
}

#[test]
fn exact_entropy_dominates_exact_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..1000 {
        let g = Mlp::<f64>::build(
            &ArchSpec::generator(&[2, 4, 3], Activation::Prelu, Activation::Identity),
            seed,
        )
        .unwrap();
        let z = normal(&mut rng, 1, 2);
        let exact = entropy_exact(&g, &z).unwrap();
        let lower = entropy_lower_exact(&g, &z).unwrap();
        assert!(exact > lower + 1e-9, "seed {seed}: {exact} vs {lower}");
    }
    // equality when the singular values coincide
    let g = LinearMap::scaled_identity(3, 0.7);
    let z = normal(&mut rng, 4, 3);
    let gap = entropy_exact(&g, &z).unwrap() - entropy_lower_exact(&g, &z).unwrap();
    assert!(gap.abs() <= 1e-9);
}

#[test]
fn hutchinson_identity_is_exactly_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = normal(&mut rng, 3, 2);
    for order in [1, 5, 20] {
        let cfg = HutchinsonConfig {
            order,
            probes: 4,
            ..HutchinsonConfig::default()
        };
        let ld = hutchinson_logdet_half(&identity(2), &z, &cfg, &mut rng).unwrap();
        assert!(ld.iter().all(|&x| x == 0.0), "{ld:?}");
    }
}

#[test]
fn hutchinson_scaled_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = normal(&mut rng, 2, 2);
    let cfg = HutchinsonConfig {
        order: 30,
        probes: 64,
        scale: Some(8.0),
        ..HutchinsonConfig::default()
    };
    let ld = hutchinson_logdet_half(&LinearMap::scaled_identity(2, 2.0), &z, &cfg, &mut rng).unwrap();
    for x in ld {
        assert!((x - 4.0_f64.ln()).abs() / 4.0_f64.ln() <= 0.02);
    }
}

#[test]
fn hutchinson_detects_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = HutchinsonConfig {
        order: 10,
        probes: 2,
        scale: Some(1.0),
        ..HutchinsonConfig::default()
    };
    let err = hutchinson_logdet_half(&LinearMap::scaled_identity(2, 2.0), &normal(&mut rng, 1, 2), &cfg, &mut rng)
        .unwrap_err();
    assert!(matches!(err, Error::SeriesDivergence { .. }));
    assert!(err.to_string().contains("increase"));
}

/// Samples whose `JᵀJ` condition number is at most `kappa`.
fn well_conditioned(g: &Mlp<f64>, z: &Tensor<f64>, kappa: f64) -> Tensor<f64> {
    let rows: Vec<Vec<f64>> = spectral::exact_jacobian(g, z)
        .unwrap()
        .iter()
        .enumerate()
        .filter(|(_, j)| {
            let s = spectral::singular_values(j);
            (s[s.len() - 1] / s[0]).powi(2) <= kappa
        })
        .map(|(i, _)| z.row(i).to_vec())
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

#[test]
fn hutchinson_tracks_exact_logdet_on_toy_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = HutchinsonConfig {
        order: 50,
        probes: 128,
        ..HutchinsonConfig::default()
    };
    for seed in 0..5 {
        let g = Mlp::<f64>::build(
            &ArchSpec::generator(&[2, 100, 100, 2], Activation::Prelu, Activation::Identity),
            seed,
        )
        .unwrap();
        // truncation after 50 terms leaves (1 − 1/κ)^50 of the series
        let z = well_conditioned(&g, &normal(&mut rng, 64, 2), 10.0);
        assert!(z.rows() >= 8, "seed {seed}: {} samples", z.rows());
        let e = entropy_hutchinson_logdet(&g, &z, &cfg, &mut rng).unwrap();
        let x = entropy_exact(&g, &z).unwrap();
        assert!((e - x).abs() <= 0.05 * x.abs(), "seed {seed}: {e} vs {x}");
    }
}

#[test]
fn hutchinson_truncation_overestimates_ill_conditioned_logdet() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g = LinearMap::diagonal(&[0.01, 1.0]);
    let z = normal(&mut rng, 2, 2);
    let cfg = HutchinsonConfig {
        order: 50,
        probes: 16,
        ..HutchinsonConfig::default()
    };
    let est = hutchinson_logdet_half(&g, &z, &cfg, &mut rng).unwrap();
    for e in est {
        assert!(e > 0.01_f64.ln() + 1.0);
    }
}

#[test]
fn log_pg_grad_for_linear_generators_is_minus_z() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = normal(&mut rng, 5, 2);
    let cfg = LobpcgConfig::converged();
    let (_, sp) = entropy_lower(&identity(2), &z, &cfg, None, &mut rng).unwrap();
    let g = log_pg_grad_z(&identity(2), &z, &sp).unwrap();
    assert_eq!(g.data(), z.neg().unwrap().data());

    let a = LinearMap::new(t(&[3, 2], &[1.0, 2.0, -0.5, 1.5, 0.3, 0.0])).unwrap();
    let (_, sp) = entropy_lower(&a, &z, &cfg, None, &mut rng).unwrap();
    let g = log_pg_grad_z(&a, &z, &sp).unwrap();
    assert_eq!(g.data(), z.neg().unwrap().data());
}

#[test]
fn log_pg_grad_matches_finite_differences_of_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-6;
    for seed in 0..20 {
        // piecewise-linear nets have a locally constant Jacobian
        let g = Mlp::build(&ArchSpec::generator(&[3, 16, 16, 4], Activation::Tanh, Activation::Identity), seed)
            .unwrap();
        let z = normal(&mut rng, 1, 3);
        let (_, sp) = entropy_lower(&g, &z, &LobpcgConfig::converged(), None, &mut rng).unwrap();
        let ours = log_pg_grad_z(&g, &z, &sp).unwrap();
        for i in 0..3 {
            let mut zp = z.clone();
            zp.data_mut()[i] += h;
            let mut zm = z.clone();
            zm.data_mut()[i] -= h;
            let fp = exact_smallest_singular(&g, &zp).unwrap()[0].ln();
            let fm = exact_smallest_singular(&g, &zm).unwrap()[0].ln();
            let want = -z.data()[i] - 3.0 * (fp - fm) / (2.0 * h);
            let got = ours.data()[i];
            assert!((got - want).abs() / want.abs().max(1.0) <= 1e-3, "seed {seed} i {i}: {got} vs {want}");
        }
    }
}

#[test]
fn penalty_vanishes_in_tight_gaussian_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = normal(&mut rng, 64, 2);
    let (_, sp) = entropy_lower(&identity(2), &z, &LobpcgConfig::converged(), None, &mut rng).unwrap();
    let cfg = UpperBoundConfig {
        n_hutchinson: 4,
        ..UpperBoundConfig::default()
    };
    let pen = penalty_term(&quadratic(2), &identity(2), &z, &sp, &cfg, &mut rng).unwrap();
    assert_eq!(pen.item().unwrap(), 0.0);
}

#[test]
fn hutchinson_identity_for_fixed_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let norm2: f64 = u.iter().map(|x| x * x).sum();
    let n = 100_000;
    let v = normal(&mut rng, n, 5);
    let est: f64 = (0..n)
        .map(|i| v.row(i).iter().zip(&u).map(|(a, b)| a * b).sum::<f64>().powi(2))
        .sum::<f64>()
        / n as f64;
    assert!((est - norm2).abs() / norm2 <= 0.01);
}

#[test]
fn loosened_penalty_direction() {
    // ‖u‖ ≤ ‖uᵀJ‖/s₁ for square J (u then lies in the range of J)
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10_000 {
        let d = rng.random_range(1..5);
        let j = Tensor::new(vec![d, d], (0..d * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let s1 = spectral::singular_values(&j)[0];
        if s1 < 1e-8 {
            continue;
        }
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let uj: Vec<f64> = (0..d).map(|c| (0..d).map(|r| u[r] * j.row(r)[c]).sum()).collect();
        let lhs = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rhs = uj.iter().map(|x| x * x).sum::<f64>().sqrt() / s1;
        assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12, "{lhs} > {rhs}");
    }
}

#[test]
fn lower_bound_gaussian_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 20_000;
    let data = normal(&mut rng, n, 2);
    let z = normal(&mut rng, n, 2);
    let cfg = LobpcgConfig::default();
    let (r, _) = lower_bound(&quadratic(2), &identity(2), &data, &z, &cfg, None, &mut rng).unwrap();
    // both energies have mean 1 and variance ½ per sample
    let se = (0.5 / n as f64 + 0.5 / n as f64).sqrt();
    assert!((r.lower - H2).abs() <= 4.0 * se, "{}", r.lower);

    // doubling the generator: E[‖2z‖²/2] = 4, entropy + 2 log 2
    let g2 = LinearMap::scaled_identity(2, 2.0);
    let (r2, _) = lower_bound(&quadratic(2), &g2, &data, &z, &cfg, None, &mut rng).unwrap();
    assert!((r2.entropy_term - (H2 + 2.0 * 2.0_f64.ln())).abs() < 1e-12);
    let analytic = 1.0 - 4.0 + H2 + 2.0 * 2.0_f64.ln();
    assert!((analytic - 1.2242).abs() < 1e-4);
    assert!((r2.sample_energy - 4.0).abs() < 0.1);
    assert!(r2.lower < H2);
}

#[test]
fn lower_bound_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = normal(&mut rng, 50, 2);
    let z = normal(&mut rng, 50, 2);
    let shifted = FnMapping::new(2, 1, |x: &Tensor<f64>| quadratic(2).apply(x)?.shift(7.5));
    let cfg = LobpcgConfig::converged();
    let mut r1 = ChaCha8Rng::seed_from_u64(0);
    let mut r2 = ChaCha8Rng::seed_from_u64(0);
    let (a, _) = lower_bound(&quadratic(2), &identity(2), &data, &z, &cfg, None, &mut r1).unwrap();
    let (b, _) = lower_bound(&shifted, &identity(2), &data, &z, &cfg, None, &mut r2).unwrap();
    assert!((a.lower - b.lower).abs() < 1e-12);
}

#[test]
fn upper_bound_hinge_cases() {
    let base = BoundReport::lower_only(1.0, 0.5, 2.0);
    let cfg = UpperBoundConfig::default();
    assert_eq!(upper_bound(&base, 0.0, 0.1, &cfg).upper, base.lower);
    assert_eq!(upper_bound(&base, 10.0, 0.1, &cfg).upper, base.lower);
    let r = upper_bound(&base, 60.0, 0.1, &cfg);
    assert!((r.upper - (base.lower + 5.0)).abs() < 1e-12);
    assert!((r.hinge - 5.0).abs() < 1e-12);
}

#[test]
fn zero_gp_examples() {
    let data = t(&[1, 2], &[1.0, 0.0]);
    let gen = t(&[1, 2], &[0.0, 2.0]);
    let v = zero_gp_penalty(&quadratic(2), &data, &gen).unwrap();
    assert_eq!(v.item().unwrap(), 2.5);

    let constant = FnMapping::new(2, 1, |x: &Tensor<f64>| Ok(Tensor::full(vec![x.rows(), 1], 3.0)));
    assert_eq!(zero_gp_penalty(&constant, &data, &gen).unwrap().item().unwrap(), 0.0);

    let a = t(&[1, 2], &[0.5, -2.0]);
    let linear = FnMapping::new(2, 1, move |x: &Tensor<f64>| x.matmul_t(&a, false, true));
    assert_eq!(zero_gp_penalty(&linear, &data, &gen).unwrap().item().unwrap(), 4.25);
}

#[test]
fn penalty_gradient_reaches_energy_parameters_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let energy = Mlp::<f64>::build(&ArchSpec::energy(2, &[16], Activation::Prelu), 1).unwrap();
    let gen = small_mlp(2, 2, 2);
    let z = normal(&mut rng, 8, 2);
    let (_, sp) = entropy_lower(&gen, &z, &LobpcgConfig::default(), None, &mut rng).unwrap();
    let tape = Tape::new();
    let be = energy.bind(&tape);
    let gen_params_tape = gen.bind(&tape);
    // generator parameters share the tape but the penalty sees the generator
    // only through detached products
    let pen = penalty_term(&be, &gen, &z, &sp, &UpperBoundConfig::default(), &mut rng).unwrap();
    let ge = grad(&pen, &be.params(), false).unwrap();
    assert!(ge.iter().any(|g| g.data().iter().any(|&x| x != 0.0)));
    let gg = grad(&pen, &gen_params_tape.params(), false).unwrap();
    assert!(gg.iter().all(|g| g.data().iter().all(|&x| x == 0.0)));
}

mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn upper_never_below_lower(
            data in -50.0..50.0f64,
            sample in -50.0..50.0f64,
            entropy in -10.0..10.0f64,
            penalty in 0.0..1e6f64,
            coeff in 1e-6..1.0f64,
            zeta in 0.0..5.0f64,
        ) {
            let cfg = UpperBoundConfig { zeta, ..UpperBoundConfig::default() };
            let r = upper_bound(&BoundReport::lower_only(data, sample, entropy), penalty, coeff, &cfg);
            prop_assert!(r.hinge >= 0.0);
            prop_assert!(r.upper >= r.lower);
            prop_assert!(r.entropy_term.is_finite());
        }

        #[test]
        fn lower_bound_ignores_energy_offset(seed in 0u64..1000, offset in -100.0..100.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = normal(&mut rng, 8, 2);
            let z = normal(&mut rng, 8, 2);
            let energy = Mlp::<f64>::build(&ArchSpec::energy(2, &[8], Activation::Prelu), seed).unwrap();
            let shifted = FnMapping::new(2, 1, |x: &Tensor<f64>| energy.apply(x)?.shift(offset));
            let gen = small_mlp(seed, 2, 2);
            let cfg = LobpcgConfig::default();
            let (a, _) = lower_bound(&energy, &gen, &data, &z, &cfg, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let (b, _) = lower_bound(&shifted, &gen, &data, &z, &cfg, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            prop_assert!((a.lower - b.lower).abs() <= 1e-9 * (1.0 + offset.abs()));
        }

        #[test]
        fn penalty_is_nonnegative_and_finite(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let energy = Mlp::<f64>::build(&ArchSpec::energy(3, &[8], Activation::Prelu), seed).unwrap();
            let gen = small_mlp(seed, 2, 3);
            let z = normal(&mut rng, 4, 2);
            let (_, sp) = entropy_lower(&gen, &z, &LobpcgConfig::default(), None, &mut rng).unwrap();
            let p = penalty_term(&energy, &gen, &z, &sp, &UpperBoundConfig::default(), &mut rng)
                .unwrap()
                .item()
                .unwrap();
            prop_assert!(p.is_finite() && p >= 0.0);
        }
    }
}
