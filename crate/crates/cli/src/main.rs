mod eval;
mod manifest;
mod overrides;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ebm_bibound::{Error, Result};

/// Train energy-based models with bidirectional likelihood bounds and
/// evaluate the results.
#[derive(Parser)]
#[command(name = "ebm-bibound", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a training run from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config field by dotted path, e.g. train.iterations=100.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to $EBM_BIBOUND_OUT/<config name>-seed<seed>, or runs/ when unset.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Continue a run from its newest checkpoint.
    Resume {
        #[arg(long)]
        out_dir: PathBuf,
        /// Typically a larger train.iterations.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluation harnesses; each prints a JSON summary.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args)]
struct Sampling {
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// exp(−E) on a square grid, written as CSV.
    Density {
        #[arg(long)]
        ckpt: PathBuf,
        /// Checks the checkpoint against this config's energy architecture.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [-4.0, 4.0])]
        range: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        res: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mode coverage of generator samples against the config's dataset.
    Modes {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
        /// Also write the generated samples.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact, truncated LOBPCG, converged LOBPCG and Hutchinson entropies,
    /// one CSV row per matching generator checkpoint.
    Entropy {
        #[arg(long)]
        ckpt_glob: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spread of generator Jacobian column norms.
    Anisotropy {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        sampling: Sampling,
        /// Also write the per-sample values.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AUROC, AUPRC and FPR at 80% TPR; in-distribution scores are positives.
    Ood {
        #[arg(long)]
        in_scores: PathBuf,
        #[arg(long)]
        out_scores: PathBuf,
    },
}

fn optional_config(path: Option<&PathBuf>) -> Result<Option<ebm_bibound::trainer::TrainConfig>> {
    path.map(|p| eval::read_config(p)).transpose()
}

fn run_eval(cmd: EvalCommand) -> Result<serde_json::Value> {
    match cmd {
        EvalCommand::Density { ckpt, config, range, res, out } => {
            let c = optional_config(config.as_ref())?;
            eval::density(&ckpt, c.as_ref(), [range[0], range[1]], res, out)
        }
        EvalCommand::Modes { ckpt, config, sampling, out } => {
            eval::modes(&ckpt, &eval::read_config(&config)?, sampling.samples, sampling.seed, out)
        }
        EvalCommand::Entropy { ckpt_glob, config, samples, seed, out } => {
            let c = optional_config(config.as_ref())?;
            eval::entropy(&ckpt_glob, c.as_ref(), samples, seed, out)
        }
        EvalCommand::Anisotropy { ckpt, config, sampling, out } => {
            let c = optional_config(config.as_ref())?;
            eval::anisotropy(&ckpt, c.as_ref(), sampling.samples, sampling.seed, out)
        }
        EvalCommand::Ood { in_scores, out_scores } => eval::ood(&in_scores, &out_scores),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, sets, seed, out_dir } => train::cmd_train(train::TrainArgs {
            config: &config,
            sets: &sets,
            seed,
            out_dir,
        })
        .map(|dir| serde_json::json!({"status": "completed", "out_dir": dir})),
        Command::Resume { out_dir, sets } => {
            train::cmd_resume(&out_dir, &sets).map(|dir| serde_json::json!({"status": "completed", "out_dir": dir}))
        }
        Command::Eval(cmd) => run_eval(cmd),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
