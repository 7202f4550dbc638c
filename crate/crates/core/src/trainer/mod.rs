//! Alternating minimax training: the energy descends the upper bound, the
//! generator ascends the lower bound.

mod config;
mod log;
mod state;

pub use config::{Mode, Schedule, TrainConfig};
pub use log::{Stats, StepLog};
pub use state::{checkpoint_paths, latest_checkpoint, TrainState};

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad, Mapping, Tape, Tensor};
use crate::bounds::{
    self, entropy_from_spectra, gaussian_probes, log_pg_grad_z, log_s1_surrogate, penalty_on, upper_bound,
    v_min_tensor, zero_gp_penalty, BoundReport,
};
use crate::data::Sampler;
use crate::error::{Error, Result};
use crate::nets::{AdamState, Mlp};
use crate::spectral::{lobpcg, SpectralEstimate};

/// Networks, optimizer states and the iteration counter of a run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    sampler: Sampler,
    generator: Mlp<f64>,
    energy: Mlp<f64>,
    generator_adam: AdamState<f64>,
    energy_adam: AdamState<f64>,
    iteration: u64,
}

/// Terms produced by one energy update.
struct EnergyStep {
    bounds: Option<BoundReport>,
    zero_gp: Option<f64>,
    objective: f64,
    loss: f64,
    spectra: Vec<SpectralEstimate<f64>>,
}

fn scalar(t: &Tensor<f64>) -> Result<f64> {
    t.item()
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Mlp::build(&config.generator, seeds.next_u64())?;
        let energy = Mlp::build(&config.energy, seeds.next_u64())?;
        let generator_adam = AdamState::new(config.optimizer, &generator.params());
        let energy_adam = AdamState::new(config.optimizer, &energy.params());
        Ok(Trainer {
            config: config.clone(),
            sampler: Sampler::new(&config.dataset)?,
            generator,
            energy,
            generator_adam,
            energy_adam,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn sampler(&self) -> &Sampler {
        &self.sampler
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn generator(&self) -> &Mlp<f64> {
        &self.generator
    }

    pub fn energy(&self) -> &Mlp<f64> {
        &self.energy
    }

    pub fn energy_mut(&mut self) -> &mut Mlp<f64> {
        &mut self.energy
    }

    pub fn generator_mut(&mut self) -> &mut Mlp<f64> {
        &mut self.generator
    }

    /// Random stream of iteration `t` (1-based). Stream 0 seeds the nets.
    pub fn stream(&self, t: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(t);
        rng
    }

    fn latent_dim(&self) -> usize {
        self.config.generator.input_dim()
    }

    fn uses_entropy(&self) -> bool {
        self.config.train.mode != Mode::Wgan0gp
    }

    fn energy_step(&mut self, rng: &mut ChaCha8Rng) -> Result<EnergyStep> {
        let n = self.config.train.batch_size;
        let d = self.latent_dim();
        let x = self.sampler.sample_with::<f64, _>(n, rng)?;
        let z = gaussian_probes::<f64, _>(rng, n, d);

        let tape = Tape::new();
        let be = self.energy.bind(&tape);
        let lin = self.generator.linearize(&z)?;
        let xg = lin.value();
        let data_e = be.energies(&x)?.mean()?;
        let sample_e = be.energies(&xg)?.mean()?;
        let gap = data_e.sub(&sample_e)?;

        let mut step = EnergyStep {
            bounds: None,
            zero_gp: None,
            objective: scalar(&gap)?,
            loss: 0.0,
            spectra: Vec::new(),
        };
        let mut loss = gap;
        if self.uses_entropy() {
            let spectra = lobpcg(&lin, &self.config.spectral, None, rng)?;
            let entropy = entropy_from_spectra(d, &spectra)?;
            let gz = log_pg_grad_z(&self.generator, &z, &spectra)?;
            let pen = penalty_on(&be, &lin, &gz, self.config.bound.n_hutchinson, rng)?;
            let coeff = self.config.bound.coeff(d);
            let report = upper_bound(
                &BoundReport::lower_only(scalar(&data_e)?, scalar(&sample_e)?, entropy),
                scalar(&pen)?,
                coeff,
                &self.config.bound,
            );
            if self.config.train.mode == Mode::EbmBb && report.hinge > 0.0 {
                loss = loss.add(&pen.scale(coeff)?)?;
            }
            step.objective = report.lower;
            step.bounds = Some(report);
            step.spectra = spectra;
        }
        if self.config.train.mode != Mode::EbmBb {
            let gp = zero_gp_penalty(&be, &x, &xg)?;
            step.zero_gp = Some(scalar(&gp)?);
            loss = loss.add(&gp.scale(self.config.train.gp_weight)?)?;
        }
        step.loss = scalar(&loss)?;
        if step.loss.is_finite() {
            let grads = grad(&loss, &be.params(), false)?;
            self.energy_adam.step(&mut self.energy.params_mut(), &grads)?;
        }
        Ok(step)
    }

    fn generator_step(&mut self, rng: &mut ChaCha8Rng) -> Result<f64> {
        let n = self.config.train.batch_size;
        let d = self.latent_dim();
        let z = gaussian_probes::<f64, _>(rng, n, d);
        let tape = Tape::new();
        let bg = self.generator.bind(&tape);
        let zv = tape.variable(&z);
        let y = bg.forward(&zv)?;
        let mut loss = self.energy.energies(&y)?.mean()?;
        if self.uses_entropy() {
            let spectra = lobpcg(&self.generator.linearize(&z)?, &self.config.spectral, None, rng)?;
            entropy_from_spectra(d, &spectra)?;
            let surrogate = log_s1_surrogate(&y, &zv, &v_min_tensor(&spectra))?.mean()?;
            loss = loss.sub(&surrogate.scale(d as f64)?)?;
        }
        let value = scalar(&loss)?;
        if value.is_finite() {
            let grads = grad(&loss, &bg.params(), false)?;
            self.generator_adam.step(&mut self.generator.params_mut(), &grads)?;
        }
        Ok(value)
    }

    /// Runs one iteration and returns its log entry.
    pub fn step(&mut self) -> Result<StepLog> {
        let t = self.iteration + 1;
        let mut rng = self.stream(t);
        let diverged = |log: &StepLog, cause: String| Error::Diverged {
            iteration: t,
            log: format!("{cause}; {}", serde_json::to_string(log).unwrap_or_default()),
        };
        let mut log = StepLog::empty(t, self.config.train.mode);

        let mut last = None;
        for _ in 0..self.config.train.energy_steps {
            match self.energy_step(&mut rng) {
                Ok(s) => {
                    log.energy_loss = s.loss;
                    last = Some(s);
                }
                Err(e @ Error::NonFinite { .. }) => return Err(diverged(&log, e.to_string())),
                Err(e) => return Err(e),
            }
            if !log.energy_loss.is_finite() {
                return Err(diverged(&log, "non-finite energy loss".into()));
            }
        }
        let s = last.expect("at least one energy step");
        log.bounds = s.bounds;
        log.zero_gp = s.zero_gp;
        log.objective = s.objective;
        log.record_spectra(&s.spectra);

        for _ in 0..self.config.train.generator_steps {
            match self.generator_step(&mut rng) {
                Ok(v) => log.generator_loss = v,
                Err(e @ Error::NonFinite { .. }) => return Err(diverged(&log, e.to_string())),
                Err(e) => return Err(e),
            }
            if !log.generator_loss.is_finite() {
                return Err(diverged(&log, "non-finite generator loss".into()));
            }
        }
        if !log.is_finite() {
            return Err(diverged(&log, "non-finite logged value".into()));
        }
        self.iteration = t;
        Ok(log)
    }

    /// Bound terms on a fresh batch of `n` from `rng`, without updating
    /// anything.
    pub fn evaluate(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<BoundReport> {
        let d = self.latent_dim();
        let x = self.sampler.sample_with::<f64, _>(n, rng)?;
        let z = gaussian_probes::<f64, _>(rng, n, d);
        let (report, spectra) =
            bounds::lower_bound(&self.energy, &self.generator, &x, &z, &self.config.spectral, None, rng)?;
        let lin = self.generator.linearize(&z)?;
        let gz = log_pg_grad_z(&self.generator, &z, &spectra)?;
        let pen = penalty_on(&self.energy, &lin, &gz, self.config.bound.n_hutchinson, rng)?;
        Ok(upper_bound(&report, pen.item()?, self.config.bound.coeff(d), &self.config.bound))
    }

    /// Writes generator, energy and optimizer state for the current iteration.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let (g, e, s) = checkpoint_paths(dir, &format!("{:07}", self.iteration));
        crate::nets::save_checkpoint(&self.generator, &g)?;
        crate::nets::save_checkpoint(&self.energy, &e)?;
        TrainState {
            iteration: self.iteration,
            config: self.config.clone(),
            generator_adam: self.generator_adam.clone(),
            energy_adam: self.energy_adam.clone(),
        }
        .save(&s)
    }

    /// Copies of the latest networks under the `final` tag.
    fn save_final(&self, dir: &Path) -> Result<()> {
        let (g, e, _) = checkpoint_paths(dir, "final");
        crate::nets::save_checkpoint(&self.generator, &g)?;
        crate::nets::save_checkpoint(&self.energy, &e)
    }

    /// Rebuilds a trainer from the newest checkpoint in `dir`, continuing
    /// under `config`. Only the iteration budget and output cadence may
    /// differ from the checkpointed configuration.
    pub fn restore(dir: &Path, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let (iteration, state_path) = latest_checkpoint(dir)?;
        let state = TrainState::load(&state_path)?;
        state.check_compatible(config)?;
        let (g, e, _) = checkpoint_paths(dir, &format!("{iteration:07}"));
        let generator = crate::nets::load_checkpoint(&g, Some(&config.generator))?;
        let energy = crate::nets::load_checkpoint(&e, Some(&config.energy))?;
        if !state.generator_adam.matches(&generator.params()) || !state.energy_adam.matches(&energy.params()) {
            return Err(Error::Resume(format!(
                "optimizer state in {} does not match the network shapes",
                state_path.display()
            )));
        }
        Ok(Trainer {
            config: config.clone(),
            sampler: Sampler::new(&config.dataset)?,
            generator,
            energy,
            generator_adam: state.generator_adam,
            energy_adam: state.energy_adam,
            iteration: state.iteration,
        })
    }
}

/// Outcome of [`train`] or [`resume`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub first_iteration: u64,
    pub final_iteration: u64,
    pub last_log: Option<StepLog>,
}

pub const STEPS_FILE: &str = "steps.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn open_log(path: &Path, keep_through: Option<u64>) -> Result<File> {
    match keep_through {
        None => File::create(path).map_err(|e| Error::io(path, e)),
        Some(t) => {
            // drop entries written after the checkpoint being resumed
            let kept: Vec<String> = match File::open(path) {
                Ok(f) => BufReader::new(f)
                    .lines()
                    .map_while(|l| l.ok())
                    .filter(|l| log::line_iteration(l).is_some_and(|i| i <= t))
                    .collect(),
                Err(_) => Vec::new(),
            };
            let mut body = kept.join("\n");
            if !body.is_empty() {
                body.push('\n');
            }
            crate::fsutil::write_atomic(path, body.as_bytes())?;
            OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
        }
    }
}

fn run(mut trainer: Trainer, out_dir: &Path, resumed: bool) -> Result<RunSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt = out_dir.join(CHECKPOINT_DIR);
    let keep = resumed.then_some(trainer.iteration);
    let steps_path = out_dir.join(STEPS_FILE);
    let timings_path = out_dir.join(TIMINGS_FILE);
    let mut steps = open_log(&steps_path, keep)?;
    let mut timings = open_log(&timings_path, keep)?;
    let sched = trainer.config.train.clone();
    let first = trainer.iteration + 1;
    if !resumed {
        trainer.save(&ckpt)?;
    }
    let mut last_log = None;
    while trainer.iteration < sched.iterations {
        let started = Instant::now();
        let log = trainer.step()?;
        let elapsed = started.elapsed().as_secs_f64();
        let t = log.iteration;
        if t % sched.log_every == 0 || t == sched.iterations {
            let line = serde_json::to_string(&log).map_err(|e| Error::json(&steps_path, e))?;
            writeln!(steps, "{line}").map_err(|e| Error::io(&steps_path, e))?;
            writeln!(timings, "{{\"iteration\":{t},\"seconds\":{elapsed}}}")
                .map_err(|e| Error::io(&timings_path, e))?;
        }
        if t % sched.checkpoint_every == 0 || t == sched.iterations {
            trainer.save(&ckpt)?;
        }
        last_log = Some(log);
    }
    steps.sync_all().map_err(|e| Error::io(&steps_path, e))?;
    trainer.save_final(&ckpt)?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        first_iteration: first,
        final_iteration: trainer.iteration,
        last_log,
    })
}

/// Trains from scratch, writing logs and checkpoints under `out_dir`.
pub fn train(config: &TrainConfig, out_dir: &Path) -> Result<RunSummary> {
    run(Trainer::new(config)?, out_dir, false)
}

/// Continues the run in `out_dir` from its newest checkpoint up to
/// `config.train.iterations`.
pub fn resume(out_dir: &Path, config: &TrainConfig) -> Result<RunSummary> {
    run(Trainer::restore(&out_dir.join(CHECKPOINT_DIR), config)?, out_dir, true)
}

/// Parses a step log written by [`train`].
pub fn read_steps(path: &Path) -> Result<Vec<StepLog>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

#[cfg(test)]
mod tests;
