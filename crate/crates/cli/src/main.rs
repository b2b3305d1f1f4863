use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use freqforensics::config::Config;
use freqforensics::pipeline::{self, AblationAxis, ExtractMode};
use freqforensics::{Error, Result};

/// Frequency-domain forgery detection toolkit.
#[derive(Parser, Debug)]
#[command(name = "ffx", version)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override any configuration key, e.g. `--set steps=200`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic real/fake corpus.
    Gen {
        #[arg(long)]
        n_pairs: Option<usize>,
        #[arg(long)]
        side: Option<usize>,
        /// Comma-separated subset of RAW,HQ,LQ.
        #[arg(long)]
        tiers: Option<String>,
        /// Comma-separated subset of blur_splice,resample,checkerboard.
        #[arg(long)]
        manipulations: Option<String>,
    },
    /// Dump decomposition and/or local-statistics features of images.
    Extract {
        /// Image file or directory of images.
        #[arg(long)]
        input: PathBuf,
        /// fad, lfs or both.
        #[arg(long, default_value = "both")]
        mode: String,
        /// Take filter state from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a classifier on a corpus.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint on a corpus, or score files without a model.
    Eval {
        #[arg(long, required_unless_present = "scores_csv")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Test scores (`id,group,label,score`).
        #[arg(long, conflicts_with = "checkpoint")]
        scores_csv: Option<PathBuf>,
        /// Validation scores for fitting the threshold; defaults to the test scores.
        #[arg(long, requires = "scores_csv")]
        val_scores_csv: Option<PathBuf>,
    },
    /// Train and evaluate every point of an ablation axis.
    Ablate {
        /// window, stride, bands or branch.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Time the transform kernels.
    Bench,
}

fn build_config(common: &Common, command: &Command) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let mut cfg = Config::default();
            cfg.apply_text(&text)?;
            cfg
        }
        None => Config::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let mut set = |key: &str, value: Option<String>| match value {
        Some(v) => cfg.set(key, &v),
        None => Ok(()),
    };
    set("seed", common.seed.map(|s| s.to_string()))?;
    set("out", common.out.as_ref().map(|p| p.display().to_string()))?;
    match command {
        Command::Gen {
            n_pairs,
            side,
            tiers,
            manipulations,
        } => {
            set("n_pairs", n_pairs.map(|v| v.to_string()))?;
            set("side", side.map(|v| v.to_string()))?;
            set("tiers", tiers.clone())?;
            set("manipulations", manipulations.clone())?;
        }
        Command::Extract { checkpoint, .. } => {
            set(
                "checkpoint",
                checkpoint.as_ref().map(|p| p.display().to_string()),
            )?;
        }
        Command::Train {
            corpus,
            variant,
            steps,
        } => {
            set("corpus", corpus.as_ref().map(|p| p.display().to_string()))?;
            set("variant", variant.clone())?;
            set("steps", steps.map(|v| v.to_string()))?;
        }
        Command::Eval { corpus, .. } | Command::Ablate { corpus, .. } => {
            set("corpus", corpus.as_ref().map(|p| p.display().to_string()))?;
        }
        Command::Bench => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.common, &cli.command)?;
    match cli.command {
        Command::Gen { .. } => {
            let samples = pipeline::cmd_gen(&cfg)?;
            println!("wrote {} images to {}", samples.len(), cfg.out.display());
        }
        Command::Extract { input, mode, .. } => {
            let mode: ExtractMode = mode.parse()?;
            for path in pipeline::cmd_extract(&cfg, &input, mode)? {
                println!("{}", path.display());
            }
        }
        Command::Train { .. } => {
            let summary = pipeline::cmd_train(&cfg)?;
            println!(
                "final loss {:.6}, checkpoint {}",
                summary.final_loss,
                summary.checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            scores_csv,
            val_scores_csv,
            ..
        } => {
            let report = match (scores_csv, checkpoint) {
                (Some(test), _) => {
                    pipeline::cmd_eval_scores(&test, val_scores_csv.as_deref(), &cfg.out)?
                }
                (None, Some(ckpt)) => pipeline::cmd_eval(&cfg, &ckpt)?,
                (None, None) => {
                    return Err(Error::Argument(
                        "eval needs --checkpoint or --scores-csv".into(),
                    ))
                }
            };
            println!("{}", report.to_json());
        }
        Command::Ablate { axis, .. } => {
            let axis: AblationAxis = axis.parse()?;
            println!("variant,auc,acc_greedy,wall_secs");
            for r in pipeline::cmd_ablate(&cfg, axis)? {
                println!(
                    "{},{:.6},{:.6},{:.3}",
                    r.variant, r.auc, r.acc_greedy, r.wall_secs
                );
            }
        }
        Command::Bench => {
            println!("op,size,window,stride,runs,mean_ms,std_ms");
            for r in pipeline::cmd_bench(&cfg)? {
                println!(
                    "{},{},{},{},{},{:.6},{:.6}",
                    r.op, r.size, r.window, r.stride, r.runs, r.mean_ms, r.std_ms
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
