//! `tablesvc` — benchmark generator and experiment harness for the
//! table-service suggestion models.
//!
//! Exit codes: 0 success, 1 a check ran and failed (gradcheck), 2 bad
//! usage, bad config, or an I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tablesvc::dataset::LabelMode;
use tablesvc::harness::{
    cmd_ablate_combo, cmd_ablate_features, cmd_ablate_selection, cmd_ablate_temporal, cmd_eval,
    cmd_gradcheck, cmd_synth, cmd_train, load_world_config, ExperimentConfig, HarnessError,
};
use tablesvc::synthworld::WorldConfig;

#[derive(Parser)]
#[command(
    name = "tablesvc",
    version,
    about = "Synthetic table-service benchmark and experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelModeArg {
    /// Independent per-class sigmoid labels.
    Multi,
    /// Five mutually exclusive classes (four services + none).
    Exclusive,
}

impl From<LabelModeArg> for LabelMode {
    fn from(arg: LabelModeArg) -> LabelMode {
        match arg {
            LabelModeArg::Multi => LabelMode::MultiLabel,
            LabelModeArg::Exclusive => LabelMode::Exclusive,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a train/test benchmark pair and report label frequencies.
    Synth {
        /// World or experiment config JSON; defaults to the cafeteria preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (receives train/, test/, frequencies.csv).
        #[arg(long)]
        out: PathBuf,
        /// Episodes to simulate (split ~2/9 train, rest test).
        #[arg(long, default_value_t = 9)]
        episodes: u32,
        /// Generator seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Label mode override.
        #[arg(long, value_enum)]
        label_mode: Option<LabelModeArg>,
    },
    /// Train the combined backbone+table-info model; save a checkpoint.
    Train {
        /// Experiment config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (a split dir, or a synth output with train/).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path to write.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seed list; the first seed is used.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Evaluate a checkpoint; write report.json and report.csv.
    Eval {
        /// Dataset directory (a split dir, or a synth output with test/).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to load.
        #[arg(long)]
        model: PathBuf,
        /// Output directory for the reports.
        #[arg(long)]
        out: PathBuf,
    },
    /// Input-source × aggregator grid (one head per cell, mean ± std).
    AblateFeatures {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seed list overriding the config.
        #[arg(long)]
        seeds: Option<String>,
        /// Label mode override.
        #[arg(long, value_enum)]
        label_mode: Option<LabelModeArg>,
    },
    /// Baseline ⊕ candidate source combinations.
    AblateCombo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, value_enum)]
        label_mode: Option<LabelModeArg>,
    },
    /// Single frame vs temporal windows (max/avg/attention).
    AblateTemporal {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, value_enum)]
        label_mode: Option<LabelModeArg>,
    },
    /// Labeling strategies (all/random/uncertainty/diversity) × budgets.
    AblateSelection {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
        /// Single budget fraction in (0, 1] replacing the config list.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long, value_enum)]
        label_mode: Option<LabelModeArg>,
    },
    /// Verify analytic gradients against central differences (exit 1 on
    /// failure). Set TABLESVC_GRADCHECK_CORRUPT=1 to force the negative
    /// control.
    Gradcheck {
        /// Base seed for the checked configurations.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, HarnessError> {
    let seeds: Result<Vec<u64>, _> = text
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect();
    match seeds {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(HarnessError::Config {
            detail: format!("--seeds expects a comma-separated u64 list, got {text:?}"),
        }),
    }
}

/// Resolve the experiment config for a command: file if given, defaults
/// otherwise, then CLI overrides.
fn experiment_config(
    config: Option<&PathBuf>,
    seeds: Option<&str>,
    label_mode: Option<LabelModeArg>,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(text) = seeds {
        cfg.seeds = parse_seeds(text)?;
    }
    if let Some(mode) = label_mode {
        cfg.world.label_mode = mode.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Synth {
            config,
            out,
            episodes,
            seed,
            label_mode,
        } => {
            let mut world = match &config {
                Some(path) => load_world_config(path)?,
                None => WorldConfig::cafeteria(),
            };
            if let Some(mode) = label_mode {
                world.label_mode = mode.into();
            }
            let output = cmd_synth(&world, episodes, seed, &out)?;
            print!("{}", output.text);
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            config,
            data,
            out,
            seeds,
        } => {
            let cfg = experiment_config(config.as_ref(), seeds.as_deref(), None)?;
            let output = cmd_train(&cfg, &data, &out)?;
            print!("{}", output.text);
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { data, model, out } => {
            let output = cmd_eval(&data, &model, &out)?;
            print!("{}", output.text);
            Ok(ExitCode::SUCCESS)
        }
        Command::AblateFeatures {
            config,
            out,
            seeds,
            label_mode,
        } => {
            let cfg = experiment_config(config.as_ref(), seeds.as_deref(), label_mode)?;
            let output = cmd_ablate_features(&cfg, &out)?;
            print!("{}", output.text);
            Ok(ExitCode::SUCCESS)
        }
        Command::AblateCombo {
            config,
            out,
            seeds,
            label_mode,
        } => {
            let cfg = experiment_config(config.as_ref(), seeds.as_deref(), label_mode)?;
            let output = cmd_ablate_combo(&cfg, &out)?;
            print!("{}", output.text);
            Ok(ExitCode::SUCCESS)
        }
        Command::AblateTemporal {
            config,
            out,
            seeds,
            label_mode,
        } => {
            let cfg = experiment_config(config.as_ref(), seeds.as_deref(), label_mode)?;
            let output = cmd_ablate_temporal(&cfg, &out)?;
            print!("{}", output.text);
            Ok(ExitCode::SUCCESS)
        }
        Command::AblateSelection {
            config,
            out,
            seeds,
            budget,
            label_mode,
        } => {
            let cfg = experiment_config(config.as_ref(), seeds.as_deref(), label_mode)?;
            let output = cmd_ablate_selection(&cfg, &out, budget)?;
            print!("{}", output.text);
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { seed } => {
            let corrupt = std::env::var("TABLESVC_GRADCHECK_CORRUPT")
                .map(|v| v == "1")
                .unwrap_or(false);
            let outcome = cmd_gradcheck(seed, corrupt)?;
            print!("{}", outcome.text);
            Ok(if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("TABLESVC_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // Ignore the error if a global pool already exists.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: TABLESVC_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
