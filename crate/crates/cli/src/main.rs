use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use dbloss_cli::commands::{self, write_atomic};
use dbloss_cli::config::{Settings, DATA_DIR_ENV};
use dbloss_core::SmoothingFactor;

#[derive(Parser)]
#[command(name = "dbloss", version, about = "Decomposition-based loss for time-series forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split every channel of a CSV into EMA trend and seasonal parts.
    Decompose {
        #[arg(long, visible_alias = "data")]
        input: PathBuf,
        /// Smoothing factor; values outside [0.001, 0.999] are clamped.
        #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
        alpha: f64,
        /// Output prefix; writes <output>.trend.csv and <output>.seasonal.csv.
        #[arg(long)]
        output: PathBuf,
        /// Use the cumulative-sum form instead of the recursive scan.
        #[arg(long)]
        closed_form: bool,
    },
    /// Train one configuration and write its result as JSON.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Result file; printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the Cartesian product of comma-separated horizon, loss, alpha,
    /// beta and seed lists.
    Benchmark {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
    },
}

/// Every flag mirrors a config key (dashes become underscores).
#[derive(Args)]
struct ExperimentArgs {
    /// key=value file, or a JSON result whose config is reused.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset_name: Option<String>,
    /// CSV path; defaults to $DBLOSS_DATA_DIR/<name>.csv, then data/<name>.csv.
    #[arg(long)]
    data: Option<String>,
    /// Ratios as a:b:c, e.g. 6:2:2.
    #[arg(long)]
    split: Option<String>,
    /// Keep only the first N rows ("none" keeps all).
    #[arg(long)]
    benchmark_length: Option<String>,
    #[arg(long)]
    lookback: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    /// linear or dlinear.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    sma_kernel: Option<String>,
    /// mse, mae or dbloss.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

impl ExperimentArgs {
    /// File settings overlaid with flags.
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        let flags = [
            ("dataset_name", &self.dataset_name),
            ("data", &self.data),
            ("split", &self.split),
            ("benchmark_length", &self.benchmark_length),
            ("lookback", &self.lookback),
            ("horizon", &self.horizon),
            ("model", &self.model),
            ("sma_kernel", &self.sma_kernel),
            ("loss", &self.loss),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("epsilon", &self.epsilon),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("batch_size", &self.batch_size),
            ("seed", &self.seed),
        ];
        let mut overlay = Settings::default();
        for (key, value) in flags {
            if let Some(v) = value {
                overlay.set(key, v.clone())?;
            }
        }
        s.merge(&overlay);
        Ok(s)
    }
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Decompose {
            input,
            alpha,
            output,
            closed_form,
        } => {
            let factor = SmoothingFactor::new(alpha)?;
            if SmoothingFactor::needs_clamp(alpha) {
                log::warn!(
                    "alpha {alpha} is outside [{}, {}]; clamped to {}",
                    SmoothingFactor::MIN,
                    SmoothingFactor::MAX,
                    factor.get()
                );
            }
            let out = commands::decompose(&input, factor, &output, closed_form)?;
            println!("{}\n{}", out.trend.display(), out.seasonal.display());
        }
        Command::Train { exp, output } => {
            let (cfg, warnings) = exp.settings()?.resolve(data_dir().as_deref())?;
            warnings.iter().for_each(|w| log::warn!("{w}"));
            let result = commands::run_experiment(&cfg)?;
            let json = serde_json::to_string_pretty(&result)? + "\n";
            match output {
                Some(path) => {
                    write_atomic(&path, json.as_bytes())?;
                    println!("mse={} mae={} -> {}", result.mse, result.mae, path.display());
                }
                None => print!("{json}"),
            }
        }
        Command::Benchmark { exp, jobs, out_dir } => {
            let settings = exp.settings()?;
            let mut configs = Vec::new();
            for run in settings.expand_sweep()? {
                let (cfg, warnings) = run.resolve(data_dir().as_deref())?;
                warnings.iter().for_each(|w| log::warn!("{w}"));
                configs.push(cfg);
            }
            let rows = commands::benchmark(&configs, jobs, &out_dir)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!(
                "{} runs ({} failed) -> {}",
                rows.len(),
                failed,
                summary_path(&out_dir).display()
            );
        }
    }
    Ok(())
}

fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.csv")
}
