use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmulatorModel, ModelKind};
use crate::dataio::LagPairs;
use crate::error::{ensure, Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const EVAL_CHUNK: usize = 1024;

/// Losses are mean squared errors in standardized units.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub samples: usize,
    pub validation_samples: usize,
    /// Full-pass training loss before the first update.
    pub initial_train_loss: Option<f64>,
    /// Mean mini-batch loss per epoch.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Mean squared error of the model on `pairs` (standardized units).
pub fn mean_squared_error(model: &EmulatorModel, params: &[f64], pairs: &LagPairs) -> f64 {
    let (din, dout) = (pairs.input_dim(), pairs.output_dim());
    let arch = model.architecture();
    let mut total = 0.0;
    for (xs, ts) in pairs.inputs.chunks(EVAL_CHUNK * din).zip(pairs.targets.chunks(EVAL_CHUNK * dout)) {
        let rows = xs.len() / din;
        let y = match &arch {
            Some(a) => a.forward(params, xs, rows),
            None => model.forward_standardized(xs, rows),
        };
        total += y.iter().zip(ts).map(|(y, t)| (y - t) * (y - t)).sum::<f64>();
    }
    total / (pairs.len() * dout) as f64
}

/// Trains an initialized MLP on `pairs` with mini-batch AdamW and returns the
/// parameters of the epoch with the lowest validation loss. Pairs must be in
/// the model's standardized units.
pub fn train(model: &EmulatorModel, pairs: &LagPairs, validation: &LagPairs) -> Result<EmulatorModel> {
    ensure!(model.kind == ModelKind::Mlp, Validation, "only mlp models are trained iteratively");
    let config = model.config.clone().expect("mlp has a config");
    config.validate()?;
    ensure!(!pairs.is_empty(), Validation, "training pairs are empty");
    ensure!(!validation.is_empty(), Validation, "validation pairs are empty");
    model.shape.check_pairs(pairs)?;
    model.shape.check_pairs(validation)?;
    let arch = model.architecture().expect("mlp architecture");
    let (din, dout) = (pairs.input_dim(), pairs.output_dim());

    let decay_mask: Vec<bool> = {
        let mut mask = vec![false; arch.param_count()];
        for b in arch.blocks().iter().filter(|b| b.decay) {
            mask[b.range()].fill(true);
        }
        mask
    };
    let mut params = model.params().to_vec();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut grad = vec![0.0; params.len()];
    let mut step = 0i32;

    let mut log = TrainingLog {
        samples: pairs.len(),
        validation_samples: validation.len(),
        initial_train_loss: Some(mean_squared_error(model, &params, pairs)),
        ..Default::default()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut xb = Vec::with_capacity(config.batch_size * din);
    let mut tb = Vec::with_capacity(config.batch_size * dout);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate * (-config.lr_decay_per_epoch * epoch as f64).exp();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            xb.clear();
            tb.clear();
            for &i in batch {
                xb.extend_from_slice(pairs.input(i));
                tb.extend_from_slice(pairs.target(i));
            }
            let loss = arch.loss_and_grad(&params, &xb, &tb, batch.len(), &mut grad);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss became {loss} at epoch {epoch}, batch {b}; lower learning_rate (currently {})",
                    config.learning_rate
                )));
            }
            epoch_loss += loss * batch.len() as f64;
            step += 1;
            let c1 = 1.0 - BETA1.powi(step);
            let c2 = 1.0 - BETA2.powi(step);
            for i in 0..params.len() {
                let g = grad[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                if decay_mask[i] {
                    params[i] -= lr * config.weight_decay * params[i];
                }
                params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
        log.train_loss.push(epoch_loss / pairs.len() as f64);
        let val = mean_squared_error(model, &params, validation);
        if !val.is_finite() {
            return Err(Error::Diverged(format!(
                "validation loss became {val} at epoch {epoch}; lower learning_rate (currently {})",
                config.learning_rate
            )));
        }
        log.validation_loss.push(val);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, params.clone()));
            log.best_epoch = Some(epoch);
        }
    }

    let mut trained = model.clone();
    trained.set_params(best.expect("at least one epoch").1);
    trained.training = log;
    Ok(trained)
}
