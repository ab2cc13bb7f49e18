use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sqlsentinel::pipeline::{self, PipelineConfig};

#[derive(Parser)]
#[command(name = "sqlsentinel", version, about = "Two-tier SQL query anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    slack_unsup: Option<f64>,
    #[arg(long, global = true)]
    slack_sup: Option<f64>,
    #[arg(long, global = true)]
    repeats: Option<usize>,
    /// External embedding file for the input corpus.
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize and deduplicate a JSON-lines corpus.
    Normalize {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a learning corpus and a labeled detection corpus.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit both tiers on the learning corpus and write the bundle.
    Learn {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        bundle_dir: Option<PathBuf>,
    },
    /// Score a corpus against a bundle.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        bundle_dir: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated masquerade evaluation; writes precision/recall/F1 rows.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Labeled corpora; may be given several times.
        #[arg(long = "in")]
        inputs: Vec<PathBuf>,
        /// Metrics CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    let seed = c.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(v) = c.slack_unsup {
        cfg.slack_unsup = v;
    }
    if let Some(v) = c.slack_sup {
        cfg.slack_sup = v;
    }
    if let Some(v) = c.repeats {
        cfg.repeats = v;
    }
    if c.embeddings.is_some() {
        cfg.embeddings.clone_from(&c.embeddings);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match flag.or_else(|| configured.clone()) {
        Some(p) => Ok(p),
        None => bail!("missing --{name} (or the matching [paths] entry in the config)"),
    }
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Normalize { common, input, out } => {
            let cfg = load_config(&common)?;
            let input = pick(input, &cfg.paths.input, "in")?;
            let s = pipeline::cmd_normalize(&cfg, &input, &out)?;
            println!("read {} records, wrote {} to {}", s.read, s.written, show(&out));
        }
        Command::Gen { common, out } => {
            let cfg = load_config(&common)?;
            let out = pick(out, &cfg.paths.report_dir, "out")?;
            let s = pipeline::cmd_gen(&cfg, &out)?;
            println!("learning: {} records, detection: {} records in {}", s.learning, s.detection, show(&out));
        }
        Command::Learn {
            common,
            input,
            bundle_dir,
        } => {
            let cfg = load_config(&common)?;
            let input = pick(input, &cfg.paths.input, "in")?;
            let dir = pick(bundle_dir, &cfg.paths.bundle_dir, "bundle-dir")?;
            let s = pipeline::cmd_learn(&cfg, &input, &dir)?;
            println!(
                "learned from {} queries; users {}; pca k={}; ensemble threshold {:.6}",
                s.queries,
                s.users.join(","),
                s.pca_components,
                s.ensemble_threshold
            );
            if !s.undefined_thresholds.is_empty() {
                println!("undefined thresholds: {}", s.undefined_thresholds.join(","));
            }
        }
        Command::Detect {
            common,
            input,
            bundle_dir,
            out,
        } => {
            let cfg = load_config(&common)?;
            let input = pick(input, &cfg.paths.input, "in")?;
            let dir = pick(bundle_dir, &cfg.paths.bundle_dir, "bundle-dir")?;
            let out = pick(out, &cfg.paths.report_dir, "out")?;
            let s = pipeline::cmd_detect(&cfg, &input, &dir, &out)?;
            for line in s.lines() {
                println!("{line}");
            }
        }
        Command::Eval { common, inputs, out } => {
            let cfg = load_config(&common)?;
            let inputs = if inputs.is_empty() {
                vec![pick(None, &cfg.paths.input, "in")?]
            } else {
                inputs
            };
            let report = pipeline::cmd_eval(&cfg, &inputs, &out)?;
            let fmt = |v: Option<f64>| v.map_or("undefined".to_owned(), |x| format!("{x:.4}"));
            println!(
                "{} repeats: precision {}, recall {}, f1 {}",
                report.runs.len(),
                fmt(report.mean_precision()),
                fmt(report.mean_recall()),
                fmt(report.mean_f1())
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SQLSENTINEL_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
