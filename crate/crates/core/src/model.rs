//! Channel-shared linear forecasting backbones.
//!
//! Both models map a lookback window of `T` steps to a horizon of `F` steps
//! with the same `[F, T]` weights for every channel. DLinear first splits the
//! window with a moving-average decomposition and maps each part separately.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decomp::sma_decompose;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Graph, Tensor};

pub const DEFAULT_SMA_KERNEL: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    DLinear,
}

impl ModelKind {
    pub const NAMES: [&'static str; 2] = ["linear", "dlinear"];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::DLinear => "dlinear",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "dlinear" => Ok(ModelKind::DLinear),
            other => Err(Error::Config(format!(
                "unknown model '{other}', expected one of: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

/// Backbone choice, independent of the window shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub sma_kernel: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            sma_kernel: DEFAULT_SMA_KERNEL,
        }
    }

    pub fn init(&self, lookback: usize, horizon: usize, seed: u64) -> Result<ModelParams> {
        ModelParams::init_with_kernel(self.kind, lookback, horizon, self.sma_kernel, seed)
    }
}

/// One named parameter array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedParam {
    fn tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.values.clone()).expect("parameter shape is consistent")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub lookback: usize,
    pub horizon: usize,
    pub sma_kernel: usize,
    pub params: Vec<NamedParam>,
}

impl ModelParams {
    /// Weights uniform in `[−1/√T, 1/√T]` from a seeded generator, biases zero.
    pub fn init(kind: ModelKind, lookback: usize, horizon: usize, seed: u64) -> Result<Self> {
        Self::init_with_kernel(kind, lookback, horizon, DEFAULT_SMA_KERNEL, seed)
    }

    pub fn init_with_kernel(
        kind: ModelKind,
        lookback: usize,
        horizon: usize,
        sma_kernel: usize,
        seed: u64,
    ) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(Error::Config(format!(
                "lookback and horizon must be positive, got {lookback} and {horizon}"
            )));
        }
        if sma_kernel == 0 || sma_kernel % 2 == 0 {
            return Err(Error::Config(format!("sma kernel must be odd, got {sma_kernel}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (lookback as f64).sqrt();
        let mut map = |prefix: &str| {
            let weight = NamedParam {
                name: format!("{prefix}weight"),
                shape: vec![horizon, lookback],
                values: (0..horizon * lookback)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect(),
            };
            let bias = NamedParam {
                name: format!("{prefix}bias"),
                shape: vec![horizon],
                values: vec![0.0; horizon],
            };
            [weight, bias]
        };
        let params = match kind {
            ModelKind::Linear => map("").to_vec(),
            ModelKind::DLinear => {
                let mut p = map("seasonal.").to_vec();
                p.extend(map("trend."));
                p
            }
        };
        Ok(Self {
            kind,
            lookback,
            horizon,
            sma_kernel,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&NamedParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedParam> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Registers every parameter as a leaf of `graph`, in declaration order.
    pub fn register(&self, graph: &Graph) -> Vec<Tensor> {
        self.params.iter().map(|p| graph.param(&p.tensor())).collect()
    }

    /// Parameters as constants (no gradient tracking).
    pub fn constants(&self) -> Vec<Tensor> {
        self.params.iter().map(NamedParam::tensor).collect()
    }

    /// Forecast `[B, F, N]` from `x: [B, T, N]` using `weights` in the order of
    /// [`register`](Self::register).
    pub fn forward(&self, weights: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let (batch, channels) = match x.shape() {
            [b, t, n] if *t == self.lookback => (*b, *n),
            [_, t, _] => {
                return dim_err(format!("input lookback {t} differs from model lookback {}", self.lookback))
            }
            s => return dim_err(format!("model input must be [B, T, N], got {s:?}")),
        };
        if weights.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                weights.len()
            )));
        }
        let map = |w: &Tensor, b: &Tensor, input: &Tensor| -> Result<Tensor> {
            let cols = input
                .permute(&[1, 0, 2])?
                .reshape(vec![self.lookback, batch * channels])?;
            w.matmul(&cols)?
                .add(&b.reshape(vec![self.horizon, 1])?)?
                .reshape(vec![self.horizon, batch, channels])?
                .permute(&[1, 0, 2])
        };
        match self.kind {
            ModelKind::Linear => map(&weights[0], &weights[1], x),
            ModelKind::DLinear => {
                let parts = sma_decompose(x, self.sma_kernel)?;
                let seasonal = map(&weights[0], &weights[1], &parts.seasonal)?;
                let trend = map(&weights[2], &weights[3], &parts.trend)?;
                seasonal.add(&trend)
            }
        }
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(&self.constants(), x)
    }
}
