//! `gaitcast` experiment driver.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use config::RunConfig;
use error::{CliError, CliResult};

const AFTER_HELP: &str = "\
Every command writes provenance.json into its output directory. Passing that
file back with `--config` and no subcommand replays the recorded command.

Environment:
  GAITCAST_LOG   log level filter (error, warn, info, debug, trace); default warn";

#[derive(Debug, Parser)]
#[command(name = "gaitcast", version, about = "sEMG to joint kinematics experiments", after_help = AFTER_HELP)]
struct Cli {
    /// JSON run config (per-module sections) or a provenance file to replay.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every stochastic stage; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Label {
    Dns,
    Ups,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
enum Command {
    /// Write a synthetic gait trial (CSV + JSON sidecar).
    Synth {
        /// Gait cycles to generate; overrides `synth.cycles`.
        #[arg(long)]
        cycles: Option<usize>,
        /// Gait condition; overrides `synth.label`.
        #[arg(long, value_enum)]
        label: Option<Label>,
    },
    /// Preprocess and featurize a record into feature/target tensors.
    Pipeline {
        /// Canonical CSV record (sidecar JSON next to it).
        #[arg(long)]
        input: PathBuf,
    },
    /// Fit one Gaussian process per joint output and report MAE/RMSE.
    Gpr {
        /// Directory written by `pipeline`.
        #[arg(long)]
        tensors: PathBuf,
        /// Evaluate on another record's tensors instead of a held-out split.
        #[arg(long)]
        eval_tensors: Option<PathBuf>,
    },
    /// Train the xLSTM regressor and report the loss curve and MAE/RMSE.
    Xlstm {
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        eval_tensors: Option<PathBuf>,
    },
    /// Train the lag-feature forecaster on each target's history and score its tail with CRPS.
    Forecast {
        #[arg(long)]
        tensors: PathBuf,
        /// Tensors whose target series pretrain the model before fine-tuning.
        #[arg(long)]
        pretrain_tensors: Option<PathBuf>,
    },
    /// Recompute and tabulate metrics from finished run directories.
    Eval {
        /// Run directories written by gpr, xlstm or forecast.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Provenance {
    command: Command,
    version: String,
    out: PathBuf,
    config: RunConfig,
}

/// Provenance fields other than the config.
#[derive(Debug, Deserialize)]
struct Replay {
    command: Command,
    out: PathBuf,
}

fn absolute(p: &std::path::Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

impl Command {
    fn absolutize(self) -> Self {
        match self {
            Command::Synth { .. } => self,
            Command::Pipeline { input } => Command::Pipeline { input: absolute(&input) },
            Command::Gpr { tensors, eval_tensors } => Command::Gpr {
                tensors: absolute(&tensors),
                eval_tensors: eval_tensors.as_deref().map(absolute),
            },
            Command::Xlstm { tensors, eval_tensors } => Command::Xlstm {
                tensors: absolute(&tensors),
                eval_tensors: eval_tensors.as_deref().map(absolute),
            },
            Command::Forecast {
                tensors,
                pretrain_tensors,
            } => Command::Forecast {
                tensors: absolute(&tensors),
                pretrain_tensors: pretrain_tensors.as_deref().map(absolute),
            },
            Command::Eval { runs } => Command::Eval {
                runs: runs.iter().map(|r| absolute(r)).collect(),
            },
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let (mut config, recorded) = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => (RunConfig::default(), None),
    };
    let recorded = recorded
        .map(serde_json::from_value::<Replay>)
        .transpose()
        .map_err(|e| CliError::Config(format!("provenance file is invalid: {e}")))?;
    let recorded_out = recorded.as_ref().map(|r| r.out.clone());
    let command = match (cli.command, recorded) {
        (Some(c), _) => c,
        (None, Some(r)) => r.command,
        (None, None) => {
            return Err(CliError::Usage(
                "no subcommand given (see --help); only a provenance file can be replayed without one".into(),
            ))
        }
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Command::Synth { cycles, label } = &command {
        if let Some(c) = cycles {
            config.synth.cycles = *c;
        }
        if let Some(l) = label {
            config.synth.label = match l {
                Label::Dns => gaitcast_core::ingest::GaitLabel::DNS,
                Label::Ups => gaitcast_core::ingest::GaitLabel::UPS,
            };
        }
    }
    config.validate()?;
    let out = absolute(&cli.out.or(recorded_out).unwrap_or_else(|| PathBuf::from("gaitcast-out")));
    output::ensure_dir(&out)?;
    let command = command.absolutize();
    log::info!("running {command:?} into {}", out.display());

    match &command {
        Command::Synth { .. } => commands::synth(&config, &out)?,
        Command::Pipeline { input } => commands::pipeline(&config, input, &out)?,
        Command::Gpr { tensors, eval_tensors } => commands::gpr(&config, tensors, eval_tensors.as_deref(), &out)?,
        Command::Xlstm { tensors, eval_tensors } => {
            commands::xlstm(&config, tensors, eval_tensors.as_deref(), &out)?
        }
        Command::Forecast {
            tensors,
            pretrain_tensors,
        } => commands::forecast(&config, tensors, pretrain_tensors.as_deref(), &out)?,
        Command::Eval { runs } => commands::eval(runs, &out)?,
    }
    output::write_json(
        &out.join("provenance.json"),
        &Provenance {
            command,
            version: env!("CARGO_PKG_VERSION").into(),
            out: out.clone(),
            config,
        },
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GAITCAST_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
