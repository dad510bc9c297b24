use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tkrnet::flow::load_checkpoint;
use tkrnet_cli::config::{preset, ExperimentConfig, PRESETS};
use tkrnet_cli::{report, run};

#[derive(Parser)]
#[command(name = "tkrnet", version, about = "Train and evaluate tKRnet density solvers")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset name; see `tkrnet presets`.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// With `false` and no `--seed`, the root seed is drawn from system entropy.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write all artifacts.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from a checkpoint.
    Evaluate {
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples from a checkpoint at time `t` and write them as CSV.
    Sample {
        checkpoint: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the characteristics reference ensemble.
    Reference {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate errors.csv files into one table of per-iteration series.
    Report {
        /// Run directories or errors.csv files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List bundled presets.
    Presets,
}

fn load_config(args: &ConfigArgs, fallback: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match (args.config.as_deref(), &args.preset, fallback) {
        (Some(path), _, _) | (None, None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))?
        }
        (None, Some(name), _) => preset(name)?,
        (None, None, None) => bail!("pass --config PATH or --preset NAME"),
    };
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
    } else if !args.deterministic {
        cfg.training.seed = rand::random();
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn out_dir(out: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    out.clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.system.name))
}

/// The config snapshot a training run wrote next to its checkpoints.
fn snapshot_near(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint
        .ancestors()
        .skip(1)
        .take(2)
        .map(|dir| dir.join(run::CONFIG_FILE))
        .find(|p| p.is_file())
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    match cli.command {
        Command::Train { cfg, out } => {
            let cfg = load_config(&cfg, None)?;
            let out = out_dir(&out, &cfg);
            let summary = run::train(&cfg, &out)?;
            for it in &summary.iterations {
                println!(
                    "iteration {}: mean relative error {:.4e}, mean KL {:.4e}",
                    it.adapt_iter, it.mean_rel_err, it.mean_kl
                );
            }
            println!("artifacts written to {}", out.display());
        }
        Command::Evaluate { checkpoint, cfg, out } => {
            let model = load_checkpoint(&checkpoint)?;
            let cfg = load_config(&cfg, snapshot_near(&checkpoint).as_deref())?;
            let out = out.unwrap_or_else(|| checkpoint.with_extension("eval"));
            let metrics = run::evaluate(&model, &cfg, &out)?;
            let mean_kl = metrics.errors.iter().map(|r| r.kl).sum::<f64>() / metrics.errors.len() as f64;
            println!("mean KL {mean_kl:.4e}; artifacts written to {}", out.display());
        }
        Command::Sample {
            checkpoint,
            t,
            n,
            seed,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            run::sample(&model, t, n, seed, &out)?;
        }
        Command::Reference { cfg, out } => {
            let cfg = load_config(&cfg, None)?;
            let resolved = cfg.resolve()?;
            let ens = run::reference(&resolved, cfg.training.seed, cfg.evaluation.n_reference)?;
            let out = out.unwrap_or_else(|| out_dir(&None, &cfg).join("reference.csv"));
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir)?;
            }
            run::write_reference(&ens, &out)?;
        }
        Command::Report { inputs, out } => {
            let series = report::collect_series(&inputs)?;
            report::write_table(std::io::stdout().lock(), &series)?;
            if let Some(path) = out {
                let file = std::fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
                report::write_report_csv(std::io::BufWriter::new(file), &series)?;
            }
        }
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
