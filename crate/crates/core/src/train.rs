//! Adam training loop with early stopping, and normalized-space evaluation.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Segment, WindowedDataset};
use crate::error::{Error, Result};
use crate::loss::{DbLossConfig, LossKind};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub db: DbLossConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::DbLoss,
            db: DbLossConfig::default(),
            learning_rate: 0.005,
            batch_size: 64,
            max_epochs: 20,
            patience: 5,
            seed: 2021,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.db.validate()
    }
}

/// First and second moment estimates, one pair per parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. `grads` follows the parameter order.
pub fn adam_step(params: &mut ModelParams, grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.params.len() || state.m.len() != params.params.len() {
        return Err(Error::Contract(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.params.iter().zip(grads).zip(&state.m) {
        if g.len() != p.values.len() || m.len() != p.values.len() {
            return Err(Error::Contract(format!(
                "gradient for '{}' has {} entries, parameter has {}",
                p.name,
                g.len(),
                p.values.len()
            )));
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (i, p) in params.params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, theta) in p.values.iter_mut().enumerate() {
            let gj = grads[i][j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Mean squared and absolute error over every window, step and channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Test-segment metrics of the returned parameters.
    pub mse: f64,
    pub mae: f64,
    /// Train-segment MSE of the returned parameters.
    pub train_mse: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub wall_clock_seconds: f64,
}

/// Metrics on one segment. Errors are summed in window order, so the result
/// does not depend on `batch_size`.
pub fn evaluate(params: &ModelParams, data: &WindowedDataset, segment: Segment, batch_size: usize) -> Result<Metrics> {
    let weights = params.constants();
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    for batch in data.windows(segment, batch_size, None)? {
        let pred = params.forward(&weights, &batch.x)?;
        for (p, y) in pred.values().iter().zip(batch.y.values().iter()) {
            let e = p - y;
            se += e * e;
            ae += e.abs();
        }
        count += pred.numel();
    }
    Ok(Metrics {
        mse: se / count as f64,
        mae: ae / count as f64,
    })
}

/// Mean per-batch objective over a segment in chronological order.
fn segment_objective(params: &ModelParams, data: &WindowedDataset, seg: Segment, cfg: &TrainConfig) -> Result<f64> {
    let weights = params.constants();
    let (mut total, mut batches) = (0.0, 0usize);
    for batch in data.windows(seg, cfg.batch_size, None)? {
        let pred = params.forward(&weights, &batch.x)?;
        total += cfg.loss.objective(&pred, &batch.y, &cfg.db)?.item()?;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Trains from a seeded initialization and returns the parameters of the best
/// validation epoch together with their train and test metrics.
pub fn train(model: &ModelConfig, data: &WindowedDataset, cfg: &TrainConfig) -> Result<(ModelParams, EvalReport)> {
    let init = model.init(data.lookback, data.horizon, cfg.seed)?;
    train_from(init, data, cfg)
}

/// Like [`train`] but starting from the given parameters.
pub fn train_from(init: ModelParams, data: &WindowedDataset, cfg: &TrainConfig) -> Result<(ModelParams, EvalReport)> {
    cfg.validate()?;
    if init.lookback != data.lookback || init.horizon != data.horizon {
        return Err(Error::Config(format!(
            "model expects lookback {} and horizon {}, data has {} and {}",
            init.lookback, init.horizon, data.lookback, data.horizon
        )));
    }
    let started = Instant::now();
    let mut params = init;
    let mut adam = AdamState::new(&params);
    // Shuffle seeds are drawn from a stream separate from initialization.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_4E5B);

    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut stale = 0usize;
    let (mut train_curve, mut val_curve) = (Vec::new(), Vec::new());

    for epoch in 1..=cfg.max_epochs {
        let epoch_start = Instant::now();
        let (mut sum, mut batches) = (0.0, 0usize);
        for (b, batch) in data
            .windows(Segment::Train, cfg.batch_size, Some(shuffle_rng.next_u64()))?
            .enumerate()
        {
            let abort = |e: Error| Error::TrainingAborted {
                epoch,
                batch: b + 1,
                source: Box::new(e),
            };
            let graph = Graph::new();
            let weights = params.register(&graph);
            let pred = params.forward(&weights, &batch.x).map_err(abort)?;
            let loss = cfg.loss.objective(&pred, &batch.y, &cfg.db).map_err(abort)?;
            let value = loss.item().map_err(abort)?;
            if !value.is_finite() {
                return Err(abort(Error::Numeric(format!("loss is {value}"))));
            }
            let grads = loss.backward().map_err(abort)?;
            let g: Vec<Vec<f64>> = weights.iter().map(|w| grads.wrt(w)).collect();
            if g.iter().flatten().any(|v| !v.is_finite()) {
                return Err(abort(Error::Numeric("non-finite gradient".into())));
            }
            adam_step(&mut params, &g, &mut adam, cfg.learning_rate)?;
            sum += value;
            batches += 1;
        }
        let train_loss = sum / batches as f64;
        let val_loss = segment_objective(&params, data, Segment::Val, cfg).map_err(|e| Error::TrainingAborted {
            epoch,
            batch: 0,
            source: Box::new(e),
        })?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingAborted {
                epoch,
                batch: 0,
                source: Box::new(Error::Numeric(format!("validation loss is {val_loss}"))),
            });
        }
        log::info!(
            "epoch={epoch} train_loss={train_loss:.6} val_loss={val_loss:.6} seconds={:.3}",
            epoch_start.elapsed().as_secs_f64()
        );
        train_curve.push(train_loss);
        val_curve.push(val_loss);

        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (_, params, best_epoch) = best;
    let test = evaluate(&params, data, Segment::Test, cfg.batch_size)?;
    let train_fit = evaluate(&params, data, Segment::Train, cfg.batch_size)?;
    let report = EvalReport {
        mse: test.mse,
        mae: test.mae,
        train_mse: train_fit.mse,
        train_loss: train_curve,
        val_loss: val_curve,
        best_epoch,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((params, report))
}
