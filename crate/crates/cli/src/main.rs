//! `panel-mdp`: train, evaluate and compare panel re-ranking policies.
//!
//! Exit status is 0 on success, 1 on usage or config errors and 2 on
//! runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use panel_mdp_core::baselines::PolicyKind;
use panel_mdp_core::harness::{
    compare, export_curves, load_metrics, run_eval, run_training, write_curves_csv, write_manifest,
    ExperimentConfig, Task,
};
use panel_mdp_core::Error;

#[derive(Parser)]
#[command(name = "panel-mdp", version, about = "Grid-panel re-ranking with a dueling deep-Q agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; keys left out take the task defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task used when no config file is given.
    #[arg(long, default_value = "re_org")]
    task: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write checkpoint, metrics and curves.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `train_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate one policy on held-out simulated requests.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "learned")]
        policy: String,
        /// Checkpoint directory or file; its `config.toml` is used when
        /// `--config` is absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate every applicable policy on the same requests.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Bucket a metrics file into plot-ready means.
    Curves {
        /// Metrics CSV written by `train`.
        metrics: PathBuf,
        #[arg(long, default_value_t = 100)]
        bucket: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn checkpoint_dir(path: &Path) -> &Path {
    if path.is_dir() {
        path
    } else {
        path.parent().unwrap_or(Path::new("."))
    }
}

fn resolve_config(common: &Common, checkpoint: Option<&Path>) -> Result<ExperimentConfig, Error> {
    if let Some(ckpt) = checkpoint.filter(|p| !p.exists()) {
        return Err(Error::Checkpoint(format!("{} does not exist", ckpt.display())));
    }
    let mut config = match (&common.config, checkpoint) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(ckpt)) if checkpoint_dir(ckpt).join("config.toml").is_file() => {
            ExperimentConfig::load(&checkpoint_dir(ckpt).join("config.toml"))?
        }
        _ => ExperimentConfig::for_task(common.task.parse::<Task>()?),
    };
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(common: &Common, config: &ExperimentConfig) -> Result<PathBuf, Error> {
    common.out.clone().or_else(|| config.out_dir.clone()).ok_or_else(|| Error::Config {
        field: "out".into(),
        reason: "pass --out or set out_dir in the config".into(),
    })
}

fn print_json(value: serde_json::Value) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { common, episodes } => {
            let mut config = resolve_config(&common, None)?;
            if let Some(n) = episodes {
                config.train_episodes = n;
            }
            let out = out_dir(&common, &config)?;
            let summary = run_training(&config, &out)?;
            print_json(serde_json::json!({
                "episodes": summary.episodes,
                "train_steps": summary.train_steps,
                "final_epsilon": summary.final_epsilon,
                "mean_reward_last_100": summary.mean_reward_last_100,
                "final_eval_reward": summary.curve.last().map(|p| p.mean_expected_reward),
                "out": out,
            }))
        }
        Command::Eval {
            common,
            policy,
            checkpoint,
            episodes,
        } => {
            let kind: PolicyKind = policy.parse()?;
            let config = resolve_config(&common, checkpoint.as_deref())?;
            let episodes = episodes.unwrap_or(config.eval_episodes);
            let report = run_eval(&config, kind, checkpoint.as_deref(), episodes, common.out.as_deref())?;
            print_json(serde_json::json!({
                "policy": report.policy,
                "task": report.task,
                "episodes": report.episodes,
                "average_reward": report.average_reward,
                "average_expected_reward": report.average_expected_reward,
                "auc": report.auc,
            }))
        }
        Command::Compare {
            common,
            checkpoint,
            episodes,
        } => {
            let config = resolve_config(&common, checkpoint.as_deref())?;
            let episodes = episodes.unwrap_or(config.eval_episodes);
            let rows = compare(&config, checkpoint.as_deref(), episodes, common.out.as_deref())?;
            print_json(serde_json::to_value(&rows)?)
        }
        Command::Curves { metrics, bucket, out } => {
            let rows = export_curves(&load_metrics(&metrics)?, bucket)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let path = dir.join("curves.csv");
                    write_curves_csv(&rows, std::fs::File::create(&path)?)?;
                    write_manifest(
                        &dir,
                        &[path],
                        serde_json::json!({ "command": "curves", "bucket": bucket }),
                    )?;
                }
                None => write_curves_csv(&rows, std::io::stdout().lock())?,
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
