use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dbloss_core::data::{load_csv, RawSeries};
use dbloss_core::decomp::{ema_decompose, ema_decompose_closed_form};
use dbloss_core::train::train;
use dbloss_core::{SmoothingFactor, Tensor, WindowedDataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const VERSION: &str = concat!("dbloss ", env!("CARGO_PKG_VERSION"));

/// One run's record. Apart from `wall_clock_seconds`, two runs of the same
/// config serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub version: String,
    pub config: ExperimentConfig,
    pub mse: f64,
    pub mae: f64,
    pub train_mse: f64,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub wall_clock_seconds: f64,
}

pub fn load_series(cfg: &ExperimentConfig) -> Result<RawSeries> {
    let mut raw = load_csv(&cfg.data).with_context(|| format!("loading {}", cfg.data.display()))?;
    if let Some(len) = cfg.benchmark_length {
        raw.truncate(len);
    }
    Ok(raw)
}

pub fn run_on(cfg: &ExperimentConfig, raw: &RawSeries) -> Result<ExperimentResult> {
    let data = WindowedDataset::from_raw(raw, &cfg.split, cfg.lookback, cfg.horizon)?;
    let (_, report) = train(&cfg.model_config(), &data, &cfg.train_config())?;
    Ok(ExperimentResult {
        version: VERSION.to_string(),
        config: cfg.clone(),
        mse: report.mse,
        mae: report.mae,
        train_mse: report.train_mse,
        best_epoch: report.best_epoch,
        train_loss: report.train_loss,
        val_loss: report.val_loss,
        wall_clock_seconds: report.wall_clock_seconds,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_on(cfg, &load_series(cfg)?)
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub struct DecomposeOutput {
    pub trend: PathBuf,
    pub seasonal: PathBuf,
}

/// EMA-decomposes every channel of a CSV over its full length and writes
/// `<out>.trend.csv` and `<out>.seasonal.csv` with the input's header and dates.
pub fn decompose(input: &Path, alpha: SmoothingFactor, out: &Path, closed_form: bool) -> Result<DecomposeOutput> {
    let raw = load_csv(input).with_context(|| format!("loading {}", input.display()))?;
    let x = Tensor::new(vec![1, raw.len(), raw.channels()], raw.values.clone())?;
    let parts = if closed_form {
        ema_decompose_closed_form(&x, alpha)?
    } else {
        ema_decompose(&x, alpha)?
    };
    let path_for = |suffix: &str| {
        let mut name = out.as_os_str().to_owned();
        name.push(format!(".{suffix}.csv"));
        PathBuf::from(name)
    };
    let output = DecomposeOutput {
        trend: path_for("trend"),
        seasonal: path_for("seasonal"),
    };
    for (path, t) in [(&output.trend, &parts.trend), (&output.seasonal, &parts.seasonal)] {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        let mut header = vec!["date".to_string()];
        header.extend(raw.channel_names.iter().cloned());
        w.write_record(&header)?;
        let n = raw.channels();
        for (i, stamp) in raw.timestamps.iter().enumerate() {
            let mut row = vec![stamp.clone()];
            row.extend(t.values()[i * n..(i + 1) * n].iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(output)
}

/// One line of the benchmark summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub model: String,
    pub loss: String,
    pub horizon: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    /// `ok`, or `error: <message>` for a failed run.
    pub status: String,
}

fn run_file_name(i: usize, cfg: &ExperimentConfig) -> String {
    format!(
        "run{:03}_{}_{}_{}_h{}_a{}_b{}_s{}.json",
        i, cfg.dataset_name, cfg.model, cfg.loss, cfg.horizon, cfg.alpha, cfg.beta, cfg.seed
    )
}

/// Runs every config on a pool of `jobs` threads, writes one JSON per run
/// into `out_dir`, then writes `summary.csv` atomically. Failed runs are
/// recorded in the summary and do not stop the sweep.
pub fn benchmark(configs: &[ExperimentConfig], jobs: usize, out_dir: &Path) -> Result<Vec<SummaryRow>> {
    if configs.is_empty() {
        bail!("benchmark sweep is empty");
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;

    let outcomes: Vec<Result<ExperimentResult>> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let result = run_experiment(cfg)?;
                let json = serde_json::to_vec_pretty(&result)?;
                let path = out_dir.join(run_file_name(i, cfg));
                fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
                log::info!("run {i}: mse={:.6} mae={:.6}", result.mse, result.mae);
                Ok(result)
            })
            .collect()
    });

    let rows: Vec<SummaryRow> = configs
        .iter()
        .zip(outcomes)
        .map(|(cfg, outcome)| {
            let (mse, mae, status) = match outcome {
                Ok(r) => (Some(r.mse), Some(r.mae), "ok".to_string()),
                Err(e) => {
                    log::warn!("run failed: {e:#}");
                    (None, None, format!("error: {e:#}"))
                }
            };
            SummaryRow {
                dataset: cfg.dataset_name.clone(),
                model: cfg.model.to_string(),
                loss: cfg.loss.to_string(),
                horizon: cfg.horizon,
                alpha: cfg.alpha,
                beta: cfg.beta,
                seed: cfg.seed,
                mse,
                mae,
                status,
            }
        })
        .collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().context("flushing summary")?;
    write_atomic(&out_dir.join("summary.csv"), &bytes)?;
    Ok(rows)
}
