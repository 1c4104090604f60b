use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use famf::commands;
use famf::config::RunConfig;
use famf::{Error, Result};

/// Train and evaluate frame-aggregation / multi-modal fusion models on
/// synthetic or precomputed features.
///
/// Every command reads one TOML config (defaults when --config is absent),
/// applies --set overrides and then the dedicated flags, and writes all
/// output under the run directory together with the resolved config.
#[derive(Debug, Parser)]
#[command(name = "famf", version)]
struct Cli {
    /// Run config file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Output directory (output.run_dir).
    #[arg(long, global = true, value_name = "DIR")]
    run_dir: Option<PathBuf>,

    /// Run seed (seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Training epochs (train.epochs).
    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Mini-batch size (train.schedule.batch_size).
    #[arg(long, global = true)]
    batch_size: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the [synth] dataset into <run_dir>/data.
    Synth,
    /// Train on the training split; writes checkpoint.famf and metrics.jsonl.
    Train,
    /// Evaluate a checkpoint on the validation split; writes eval.json.
    Eval {
        /// Defaults to <run_dir>/checkpoint.famf.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the [ablation] grid; writes ablation.tsv.
    Ablate {
        /// Grid cells trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Frame-weight and fusion-attention reports under <run_dir>/inspect.
    Inspect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated episode ids; defaults to [inspect] settings.
        #[arg(long, value_delimiter = ',')]
        episodes: Vec<u64>,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut config = base.with_overrides(&cli.sets)?;
    if let Some(dir) = &cli.run_dir {
        config.output.run_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(epochs) = cli.epochs {
        config.train.epochs = epochs;
    }
    if let Some(b) = cli.batch_size {
        config.train.schedule.batch_size = b;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    match cli.command {
        Command::Synth => {
            let s = commands::synth(&config)?;
            println!("wrote {} episodes to {}", s.episodes, s.manifest.display());
        }
        Command::Train => {
            let s = commands::train(&config)?;
            if let Some(r) = s.last {
                println!("epoch {} loss {:.6} accuracy {:.4}", r.epoch, r.loss, r.accuracy);
            }
            println!("checkpoint {} ({})", s.checkpoint.display(), &s.fingerprint[..16]);
        }
        Command::Eval { checkpoint } => {
            let e = commands::eval(&config, checkpoint.as_deref())?;
            if e.report.skipped_identities > 0 {
                eprintln!(
                    "warning: {} identities have no validation episode and were left out of mAP",
                    e.report.skipped_identities
                );
            }
            println!(
                "mAP@{} {} accuracy {} over {} episodes",
                e.cutoff, e.report.map, e.report.accuracy, e.report.episodes
            );
        }
        Command::Ablate { jobs } => {
            let rows = commands::ablate(&config, jobs)?;
            for r in &rows {
                println!("{}\t{}\t{}\t{}\t{}\t{:.4}", r.aggregation, r.fusion, r.modalities, r.clusters, r.seed, r.map);
            }
            println!("{} cells", rows.len());
        }
        Command::Inspect { checkpoint, episodes } => {
            for e in commands::inspect(&config, checkpoint.as_deref(), &episodes)? {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "episode {} frames {} clean {} corrupt {}",
                    e.episode,
                    e.frames,
                    fmt(e.clean_mean),
                    fmt(e.corrupt_mean)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("famf: {} (see --help)", line.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("famf: {}", one_line(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn one_line(e: &Error) -> String {
    e.to_string().lines().map(str::trim).collect::<Vec<_>>().join(" ")
}
