use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::arch::Architecture;
use super::model::{NetworkModel, Params, PROB_CLAMP};
use crate::dataset::PatchSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_init_std: f64,
    /// Stop after the first epoch whose training accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 20,
            seed: 1,
            weight_init_std: 0.1,
            stop_at_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.weight_init_std >= 0.0 && self.weight_init_std.is_finite()) {
            return Err(Error::invalid("weight_init_std must be non-negative"));
        }
        Ok(())
    }
}

/// Momentum buffers for SGD, one per parameter.
#[derive(Debug, Clone)]
pub struct Momentum {
    velocity: Params,
}

impl Momentum {
    pub fn new(model: &NetworkModel) -> Self {
        Self {
            velocity: Params::zeros(model.architecture()),
        }
    }
}

/// `v ← momentum·v − lr·g; θ ← θ + v`.
pub fn sgd_step(
    model: &mut NetworkModel,
    grads: &Params,
    config: &TrainConfig,
    state: &mut Momentum,
) -> Result<()> {
    if !grads.same_shape(model.params()) || !state.velocity.same_shape(model.params()) {
        return Err(Error::invalid("gradient shapes do not match the model"));
    }
    let (lr, mu) = (config.learning_rate, config.momentum);
    for ((p, v), g) in model
        .params_mut()
        .iter_mut()
        .zip(state.velocity.iter_mut())
        .zip(grads.iter())
    {
        *v = mu * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NetworkModel,
    pub history: Vec<EpochMetrics>,
}

/// Mean cross-entropy and accuracy (probability ≥ 0.5 means boundary).
pub fn evaluate(model: &NetworkModel, inputs: &[Vec<f64>], labels: &[bool]) -> Result<(f64, f64)> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::invalid(
            "evaluation needs matching, nonempty inputs and labels",
        ));
    }
    let probs = model.forward(inputs)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (&p, &y) in probs.iter().zip(labels) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= if y { pc.ln() } else { (1.0 - pc).ln() };
        if (p >= 0.5) == y {
            correct += 1;
        }
    }
    let n = inputs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn to_inputs(model: &NetworkModel, samples: &[PatchSample]) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let inputs = samples
        .par_iter()
        .map(|s| {
            let x: Vec<f64> = s.stack.iter().map(|&v| v as f64).collect();
            model.gather_input(&x).map(|c| c.into_owned())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((inputs, samples.iter().map(|s| s.label).collect()))
}

/// Mini-batch SGD over `samples`, reshuffled each epoch.
///
/// All randomness (initial weights, then every epoch's shuffle) comes from
/// one generator seeded with `config.seed`, and gradient reduction runs in a
/// fixed order, so results are bit-identical for a given seed. Parameters are
/// rounded to the f32 precision of model files at the end of every epoch.
pub fn train(
    arch: Architecture,
    samples: &[PatchSample],
    validation: Option<&[PatchSample]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = NetworkModel::init(arch, config.weight_init_std, &mut rng)?;
    model.round_to_storage();
    let (inputs, labels) = to_inputs(&model, samples)?;
    let val = match validation {
        Some(v) if !v.is_empty() => Some(to_inputs(&model, v)?),
        _ => None,
    };
    let mut state = Momentum::new(&model);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let batch_labels: Vec<bool> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, grads) = model.loss_and_gradients(&batch, &batch_labels)?;
            sgd_step(&mut model, &grads, config, &mut state)?;
        }
        if model.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Internal(format!(
                "parameters diverged in epoch {epoch}; lower the learning rate"
            )));
        }
        // metrics describe exactly the model a file would hold
        model.round_to_storage();
        let (train_loss, train_acc) = evaluate(&model, &inputs, &labels)?;
        let (val_loss, val_acc) = match &val {
            Some((vi, vl)) => {
                let (l, a) = evaluate(&model, vi, vl)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let m = EpochMetrics {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5} acc {train_acc:.4}{}",
            match (val_loss, val_acc) {
                (Some(l), Some(a)) => format!(", val loss {l:.5} acc {a:.4}"),
                _ => String::new(),
            }
        );
        history.push(m);
        if config.stop_at_accuracy.is_some_and(|t| train_acc >= t) {
            break;
        }
    }
    Ok(TrainOutcome { model, history })
}
