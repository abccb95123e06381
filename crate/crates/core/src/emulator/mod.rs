//! Lag-indexed emulators `y(t + lag) = A_lag(x(t))`: a layer-normalized GELU
//! MLP and a closed-form ridge-regression map, plus banks of one model per lag.
//!
//! Weights are held at 32-bit precision (every stored value is exactly
//! representable as `f32`); forward passes run in 64-bit arithmetic.

mod bank;
mod linear;
pub mod mlp;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bank::{lag_seed, train_lag_bank, BankOptions, EmulatorSpec, LagModelBank, BANK_MANIFEST};
pub use linear::{fit_linear, ridge_coefficients};
pub use train::{train, TrainingLog};

use crate::binio;
use crate::dataio::{ChannelNorm, LagPairs, NormStats};
use crate::error::{ensure, Error, Result};
use mlp::Architecture;

pub const MODEL_MAGIC: &[u8; 8] = b"AIBEDOM1";

/// Rows per forward chunk when predicting large batches.
const PREDICT_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub layer_norm: bool,
    pub learning_rate: f64,
    /// Exponential decay rate: epoch `e` uses `learning_rate * exp(-lr_decay_per_epoch * e)`.
    pub lr_decay_per_epoch: f64,
    /// Decoupled weight decay applied to dense weight matrices.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            hidden_width: 256,
            layer_norm: true,
            learning_rate: 2e-4,
            lr_decay_per_epoch: 1e-6,
            weight_decay: 1e-2,
            epochs: 15,
            batch_size: 10,
            seed: crate::DEFAULT_SEED,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.hidden_layers >= 1, Validation, "hidden_layers must be at least 1");
        ensure!(self.hidden_width >= 1, Validation, "hidden_width must be at least 1");
        ensure!(self.epochs >= 1, Validation, "epochs must be at least 1");
        ensure!(self.batch_size >= 1, Validation, "batch_size must be at least 1");
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            Validation,
            "learning_rate must be positive, got {}",
            self.learning_rate
        );
        ensure!(
            self.lr_decay_per_epoch >= 0.0 && self.weight_decay >= 0.0,
            Validation,
            "decay rates must be non-negative"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Linear,
}

/// Shapes and channel names shared by every model of a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub nodes: usize,
    pub input_channels: Vec<String>,
    pub output_channels: Vec<String>,
    /// Standardization of each input channel, in `input_channels` order.
    pub input_norm: Vec<ChannelNorm>,
    pub output_norm: Vec<ChannelNorm>,
}

impl ModelShape {
    /// Shape for pairs drawn from a dataset standardized with `norm`
    /// (identity scaling when `None`).
    pub fn for_pairs(pairs: &LagPairs, norm: Option<&NormStats>) -> Result<Self> {
        let lookup = |names: &[String]| -> Result<Vec<ChannelNorm>> {
            names
                .iter()
                .map(|name| match norm {
                    Some(stats) => stats
                        .get(name)
                        .cloned()
                        .ok_or_else(|| Error::Validation(format!("norm stats lack channel {name:?}"))),
                    None => Ok(ChannelNorm {
                        name: name.clone(),
                        mean: 0.0,
                        std: 1.0,
                    }),
                })
                .collect()
        };
        Ok(Self {
            nodes: pairs.nodes,
            input_norm: lookup(&pairs.input_channels)?,
            output_norm: lookup(&pairs.output_channels)?,
            input_channels: pairs.input_channels.clone(),
            output_channels: pairs.output_channels.clone(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.nodes * self.input_channels.len()
    }

    pub fn output_dim(&self) -> usize {
        self.nodes * self.output_channels.len()
    }

    fn check_pairs(&self, pairs: &LagPairs) -> Result<()> {
        ensure!(
            pairs.nodes == self.nodes
                && pairs.input_channels == self.input_channels
                && pairs.output_channels == self.output_channels,
            Shape,
            "pairs ({} nodes, inputs {:?}, outputs {:?}) do not match the model ({} nodes, inputs {:?}, outputs {:?})",
            pairs.nodes,
            pairs.input_channels,
            pairs.output_channels,
            self.nodes,
            self.input_channels,
            self.output_channels
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorModel {
    pub lag: usize,
    pub kind: ModelKind,
    pub shape: ModelShape,
    /// Present for MLP models.
    pub config: Option<MlpConfig>,
    /// Present for linear models.
    pub ridge: Option<f64>,
    pub training: TrainingLog,
    params: Vec<f64>,
}

fn round_f32(v: &mut [f64]) {
    for p in v {
        *p = *p as f32 as f64;
    }
}

impl EmulatorModel {
    /// Freshly initialized MLP for `shape`.
    pub fn init_mlp(lag: usize, shape: ModelShape, config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let arch = mlp_architecture(&shape, &config);
        let mut params = arch.init(config.seed);
        round_f32(&mut params);
        Ok(Self {
            lag,
            kind: ModelKind::Mlp,
            shape,
            config: Some(config),
            ridge: None,
            training: TrainingLog::default(),
            params,
        })
    }

    /// Linear model from an `output_dim x input_dim` row-major coefficient
    /// matrix acting on standardized values.
    pub fn linear(lag: usize, shape: ModelShape, coefficients: Vec<f64>, ridge: f64) -> Result<Self> {
        ensure!(
            coefficients.len() == shape.input_dim() * shape.output_dim(),
            Shape,
            "coefficient matrix has {} entries, expected {}x{}",
            coefficients.len(),
            shape.output_dim(),
            shape.input_dim()
        );
        let mut params = coefficients;
        round_f32(&mut params);
        ensure!(params.iter().all(|v| v.is_finite()), NonFinite, "linear coefficients are not finite");
        Ok(Self {
            lag,
            kind: ModelKind::Linear,
            shape,
            config: None,
            ridge: Some(ridge),
            training: TrainingLog::default(),
            params,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn set_params(&mut self, mut params: Vec<f64>) {
        debug_assert_eq!(params.len(), self.params.len());
        round_f32(&mut params);
        self.params = params;
    }

    pub fn architecture(&self) -> Option<Architecture> {
        self.config.as_ref().map(|c| mlp_architecture(&self.shape, c))
    }

    fn blocks(&self) -> Vec<BlockHeader> {
        match self.architecture() {
            Some(arch) => arch
                .blocks()
                .into_iter()
                .map(|b| BlockHeader {
                    name: b.name,
                    rows: b.rows,
                    cols: b.cols,
                })
                .collect(),
            None => vec![BlockHeader {
                name: "coefficients".into(),
                rows: self.shape.output_dim(),
                cols: self.shape.input_dim(),
            }],
        }
    }

    /// Forward pass on `n` rows already in standardized units.
    pub fn forward_standardized(&self, x: &[f64], n: usize) -> Vec<f64> {
        match self.kind {
            ModelKind::Linear => {
                let (din, dout) = (self.shape.input_dim(), self.shape.output_dim());
                let mut y = vec![0.0; n * dout];
                crate::linalg::gemm(n, din, dout, 1.0, (x, din, 1), (&self.params, 1, din), 0.0, &mut y);
                y
            }
            ModelKind::Mlp => {
                let arch = self.architecture().expect("mlp has a config");
                arch.forward(&self.params, x, n)
            }
        }
    }

    /// Predicts one physical-unit output state (`[node][output channel]`)
    /// from one physical-unit input state (`[node][input channel]`).
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict_batch(x, 1)
    }

    /// Row-major batch of `n` states in, `n` states out.
    pub fn predict_batch(&self, xs: &[f64], n: usize) -> Result<Vec<f64>> {
        let (din, dout) = (self.shape.input_dim(), self.shape.output_dim());
        ensure!(
            xs.len() == n * din,
            Shape,
            "expected {n} inputs of {} nodes x {} channels ({} values), got {}",
            self.shape.nodes,
            self.shape.input_channels.len(),
            n * din,
            xs.len()
        );
        ensure!(xs.iter().all(|v| v.is_finite()), NonFinite, "prediction input contains non-finite values");
        let cin = self.shape.input_channels.len();
        let cout = self.shape.output_channels.len();
        let mut out = Vec::with_capacity(n * dout);
        for chunk in xs.chunks(PREDICT_CHUNK * din) {
            let rows = chunk.len() / din;
            let z: Vec<f64> = chunk
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let s = &self.shape.input_norm[i % cin];
                    (v - s.mean) / s.std
                })
                .collect();
            let y = self.forward_standardized(&z, rows);
            out.extend(y.iter().enumerate().map(|(i, &v)| {
                let s = &self.shape.output_norm[i % cout];
                v * s.std + s.mean
            }));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            kind: self.kind,
            lag: self.lag,
            shape: self.shape.clone(),
            input_dim: self.shape.input_dim(),
            output_dim: self.shape.output_dim(),
            config: self.config.clone(),
            ridge: self.ridge,
            training: self.training.clone(),
            blocks: self.blocks(),
        };
        let text = serde_json::to_vec(&header).map_err(|e| Error::Validation(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + text.len() + 4 * self.params.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(&text);
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(origin, m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
            return Err(bad("not a model file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated header"))?;
        let header: ModelHeader = serde_json::from_slice(body).map_err(|e| Error::format(origin, e.to_string()))?;
        let weights = binio::f32_from_le_bytes(&bytes[16 + len..]).ok_or_else(|| bad("weight payload is not whole f32 values"))?;
        let model = Self {
            lag: header.lag,
            kind: header.kind,
            shape: header.shape,
            config: header.config,
            ridge: header.ridge,
            training: header.training,
            params: weights.iter().map(|&w| w as f64).collect(),
        };
        let declared: usize = header.blocks.iter().map(|b| b.rows * b.cols).sum();
        if model.blocks() != header.blocks || declared != model.params.len() {
            return Err(bad("weight blocks disagree with the declared architecture"));
        }
        if header.input_dim != model.shape.input_dim() || header.output_dim != model.shape.output_dim() {
            return Err(bad("declared dimensions disagree with the shape"));
        }
        if model.kind == ModelKind::Mlp && model.config.is_none() {
            return Err(bad("mlp model without a config"));
        }
        if !model.params.iter().all(|v| v.is_finite()) {
            return Err(bad("weights contain non-finite values"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn mlp_architecture(shape: &ModelShape, config: &MlpConfig) -> Architecture {
    Architecture {
        input: shape.input_dim(),
        output: shape.output_dim(),
        width: config.hidden_width,
        hidden_layers: config.hidden_layers,
        layer_norm: config.layer_norm,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    kind: ModelKind,
    lag: usize,
    shape: ModelShape,
    input_dim: usize,
    output_dim: usize,
    config: Option<MlpConfig>,
    ridge: Option<f64>,
    training: TrainingLog,
    blocks: Vec<BlockHeader>,
}
