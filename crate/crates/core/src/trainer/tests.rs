use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nets::{Activation, ArchSpec};

/// Toy 25-Gaussians with small networks, for fast loop tests.
fn small(iterations: u64) -> TrainConfig {
    let mut c = TrainConfig::toy25();
    c.generator = ArchSpec::generator(&[2, 16, 16, 2], Activation::Prelu, Activation::Identity);
    c.energy = ArchSpec::energy(2, &[16, 16], Activation::Prelu);
    c.train.iterations = iterations;
    c.train.batch_size = 32;
    c.train.checkpoint_every = 10;
    c
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn gaussian_sanity_run_is_tight() {
    let mut c = TrainConfig::gaussian_sanity();
    c.train.iterations = 10_000;
    let mut t = Trainer::new(&c).unwrap();
    for _ in 0..c.train.iterations {
        t.step().unwrap();
    }
    let r = t.evaluate(10_000, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let h = 1.0 + (2.0 * std::f64::consts::PI).ln();
    assert!((r.lower - h).abs() <= 0.05, "{r:?}");
    assert_eq!(r.hinge, 0.0);
}

#[test]
fn same_seed_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(25);
    train(&c, &dir.path().join("a")).unwrap();
    train(&c, &dir.path().join("b")).unwrap();
    let a = read(&dir.path().join("a").join(STEPS_FILE));
    assert_eq!(a, read(&dir.path().join("b").join(STEPS_FILE)));
    assert_eq!(a.lines().count(), 25);

    let mut other = c.clone();
    other.seed = 1;
    train(&other, &dir.path().join("c")).unwrap();
    assert_ne!(a, read(&dir.path().join("c").join(STEPS_FILE)));
}

#[test]
fn logs_are_finite_ordered_and_sandwiched() {
    let dir = tempfile::tempdir().unwrap();
    let summary = train(&small(40), dir.path()).unwrap();
    assert_eq!(summary.final_iteration, 40);
    let logs = read_steps(&dir.path().join(STEPS_FILE)).unwrap();
    for (i, l) in logs.iter().enumerate() {
        assert_eq!(l.iteration, i as u64 + 1);
        assert!(l.is_finite());
        let b = l.bounds.unwrap();
        assert!(b.upper >= b.lower && b.hinge >= 0.0);
        assert_eq!(l.objective, b.lower);
    }
    let ckpt = dir.path().join(CHECKPOINT_DIR);
    for tag in ["0000000", "0000010", "0000040", "final"] {
        assert!(ckpt.join(format!("gen_{tag}.json")).exists(), "{tag}");
    }
    assert!(ckpt.join("state_0000040.json").exists());
    assert_eq!(read(&dir.path().join(TIMINGS_FILE)).lines().count(), 40);
}

#[test]
fn resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(2000);
    c.train.checkpoint_every = 500;
    train(&c, &dir.path().join("straight")).unwrap();

    let split = dir.path().join("split");
    let mut first = c.clone();
    first.train.iterations = 1000;
    train(&first, &split).unwrap();
    resume(&split, &c).unwrap();
    assert_eq!(
        read(&dir.path().join("straight").join(STEPS_FILE)),
        read(&split.join(STEPS_FILE))
    );
    let g = |p: &Path| read(&p.join(CHECKPOINT_DIR).join("gen_final.json"));
    assert_eq!(g(&dir.path().join("straight")), g(&split));
}

#[test]
fn resume_drops_entries_past_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(30);
    train(&c, &dir.path().join("straight")).unwrap();
    let run = dir.path().join("cut");
    train(&c, &run).unwrap();
    // simulate a crash after iteration 25: the last checkpoint is 20
    let ckpt = run.join(CHECKPOINT_DIR);
    for f in ["gen_0000030.json", "energy_0000030.json", "state_0000030.json"] {
        fs::remove_file(ckpt.join(f)).unwrap();
    }
    let text = read(&run.join(STEPS_FILE));
    let partial: String = text.lines().take(25).map(|l| format!("{l}\n")).collect();
    fs::write(run.join(STEPS_FILE), partial).unwrap();
    resume(&run, &c).unwrap();
    assert_eq!(read(&run.join(STEPS_FILE)), read(&dir.path().join("straight").join(STEPS_FILE)));
}

#[test]
fn resume_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(10);
    train(&c, dir.path()).unwrap();

    let mut longer = c.clone();
    longer.train.iterations = 20;

    let mut arch = longer.clone();
    arch.energy = ArchSpec::energy(2, &[16, 8], Activation::Prelu);
    let err = resume(dir.path(), &arch).unwrap_err();
    assert!(matches!(err, Error::Resume(ref m) if m.contains("energy architecture")), "{err}");

    let mut seed = longer.clone();
    seed.seed = 9;
    let err = resume(dir.path(), &seed).unwrap_err();
    assert!(matches!(err, Error::Resume(ref m) if m.contains("seed")), "{err}");

    let mut lr = longer.clone();
    lr.optimizer.lr = 1e-3;
    let err = resume(dir.path(), &lr).unwrap_err();
    assert!(matches!(err, Error::Resume(ref m) if m.contains("optimizer.lr")), "{err}");

    fs::remove_file(dir.path().join(CHECKPOINT_DIR).join("state_0000010.json")).unwrap();
    let err = resume(dir.path(), &longer).unwrap_err();
    assert!(matches!(err, Error::Resume(ref m) if m.contains("optimizer state")), "{err}");
}

#[test]
fn updates_touch_only_their_own_network() {
    let mut t = Trainer::new(&small(1)).unwrap();
    let g0 = t.generator.flat_params();
    let e0 = t.energy.flat_params();
    let mut rng = t.stream(1);
    t.energy_step(&mut rng).unwrap();
    assert_eq!(t.generator.flat_params(), g0);
    let e1 = t.energy.flat_params();
    assert_ne!(e1, e0);
    t.generator_step(&mut rng).unwrap();
    assert_eq!(t.energy.flat_params(), e1);
    assert_ne!(t.generator.flat_params(), g0);
}

#[test]
fn energy_offset_leaves_bounds_unchanged() {
    let mut t = Trainer::new(&small(5)).unwrap();
    for _ in 0..5 {
        t.step().unwrap();
    }
    let before = t.evaluate(64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let names = t.energy().param_names();
    let last = names.iter().rposition(|n| n.ends_with(".bias")).unwrap();
    for v in t.energy_mut().params_mut()[last].data_mut() {
        *v += 12.5;
    }
    let after = t.evaluate(64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert!((after.data_energy - before.data_energy - 12.5).abs() < 1e-9);
    for (a, b) in [
        (after.lower, before.lower),
        (after.entropy_term, before.entropy_term),
        (after.penalty, before.penalty),
        (after.hinge, before.hinge),
        (after.upper, before.upper),
    ] {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn non_finite_energy_aborts_with_log() {
    let mut t = Trainer::new(&small(3)).unwrap();
    t.energy_mut().params_mut()[0].data_mut()[0] = f64::NAN;
    let err = t.step().unwrap_err();
    match err {
        Error::Diverged { iteration, log } => {
            assert_eq!(iteration, 1);
            assert!(log.contains("\"iteration\":1"), "{log}");
        }
        other => panic!("{other}"),
    }
}

#[test]
fn ablation_modes_run() {
    for mode in [Mode::Ebm0gp, Mode::Wgan0gp] {
        let mut c = small(15);
        c.train.mode = mode;
        let dir = tempfile::tempdir().unwrap();
        train(&c, dir.path()).unwrap();
        let logs = read_steps(&dir.path().join(STEPS_FILE)).unwrap();
        assert_eq!(logs.len(), 15);
        for l in &logs {
            assert!(l.is_finite());
            assert!(l.zero_gp.is_some());
            assert_eq!(l.bounds.is_some(), mode == Mode::Ebm0gp);
            if let Some(b) = l.bounds {
                assert!(b.upper >= b.lower);
            }
        }
    }
}

#[test]
fn wgan_objective_is_lower_bound_without_entropy() {
    let t = Trainer::new(&small(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = t.sampler().sample_with::<f64, _>(64, &mut rng).unwrap();
    let z = gaussian_probes::<f64, _>(&mut rng, 64, 2);
    let (r, _) = bounds::lower_bound(t.energy(), t.generator(), &x, &z, &t.config().spectral, None, &mut rng).unwrap();
    let w = bounds::wgan_objective(t.energy(), &x, &t.generator().forward(&z).unwrap()).unwrap();
    assert!((r.lower - r.entropy_term - w).abs() <= 1e-12);
}

#[test]
fn config_parsing_and_validation() {
    let err = TrainConfig::from_json(r#"{"dataset": {}}"#).unwrap().validate().unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "dataset.kind"));
    let err = TrainConfig::from_json(r#"{"train": {"iterations": "ten"}}"#).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "train.iterations"), "{err}");
    let err = TrainConfig::from_json(r#"{"train": {"speed": 1}}"#).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field.starts_with("train")), "{err}");

    let mut c = TrainConfig::toy25();
    c.train.batch_size = 0;
    assert!(matches!(c.validate(), Err(Error::Config { ref field, .. }) if field == "train.batch_size"));
    let mut c = TrainConfig::toy25();
    c.generator = ArchSpec::generator(&[2, 1, 2], Activation::Prelu, Activation::Identity);
    assert!(matches!(c.validate(), Err(Error::Config { ref field, .. }) if field.starts_with("generator.")));
    let mut c = TrainConfig::toy25();
    c.energy = ArchSpec::energy(3, &[8], Activation::Prelu);
    assert!(matches!(c.validate(), Err(Error::Config { ref field, .. }) if field == "energy.widths"));

    let text = serde_json::to_string(&TrainConfig::toy25()).unwrap();
    assert_eq!(TrainConfig::from_json(&text).unwrap(), TrainConfig::toy25());
}

#[test]
fn synthetic_modes_config_is_valid() {
    let c = TrainConfig::synthetic_modes(25, 8);
    c.validate().unwrap();
    let mut t = Trainer::new(&c).unwrap();
    t.step().unwrap();
}
