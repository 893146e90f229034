use rand::seq::SliceRandom;

use super::model::{argmax, frames_to_tensor, Architecture, ModelParams, Network};
use super::ops::{softmax_cross_entropy, Mode};
use super::optim::Sgd;
use super::{NnError, Result};
use crate::dataset::{Dataset, SplitIndices};
use crate::seed;
use crate::sensor::TactileFrame;

/// Seed stream tags under the training seed.
const INIT_STREAM: u64 = 0x1A17;
const SHUFFLE_STREAM: u64 = 0x5AFF;

/// Frames per eval-mode chunk.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: seed::DEFAULT_SEED,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(NnError::BadConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::BadConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(NnError::BadConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(NnError::BadConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }

    /// The initial model for this configuration.
    pub fn init_model(&self, arch: Architecture) -> ModelParams {
        ModelParams::init(arch, seed::derive(self.seed, &[INIT_STREAM]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean train-mode loss over the epoch's samples.
    pub train_loss: f64,
    /// Train-mode accuracy accumulated during the epoch.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

fn label_of(f: &TactileFrame, classes: usize) -> Result<usize> {
    match f.label {
        Some(l) if usize::from(l) < classes => Ok(usize::from(l)),
        Some(l) => Err(NnError::LabelOutOfRange {
            label: l.into(),
            classes,
        }),
        None => Err(NnError::BadConfig("training frame has no label".into())),
    }
}

/// Eval-mode mean loss and accuracy over `frames`. Empty input gives NaN.
pub fn evaluate(model: &ModelParams, frames: &[&TactileFrame]) -> Result<(f64, f64)> {
    if frames.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let classes = model.arch.classes;
    let (mut loss, mut correct) = (0.0, 0usize);
    for part in frames.chunks(EVAL_CHUNK) {
        let labels = part
            .iter()
            .map(|f| label_of(f, classes))
            .collect::<Result<Vec<_>>>()?;
        let logits = model.forward_eval(&frames_to_tensor(part.iter().copied())?)?;
        let (l, _, _) = softmax_cross_entropy(&logits, &labels)?;
        loss += l * part.len() as f64;
        correct += logits
            .data()
            .chunks_exact(classes)
            .zip(&labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    let n = frames.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains `model` on the split's train indices with mini-batch SGD, reporting
/// one [`EpochStats`] per epoch to `on_epoch`. The batch order is derived
/// from `config.seed` and the epoch number.
pub fn train_with<F>(
    model: ModelParams,
    ds: &Dataset,
    split: &SplitIndices,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(ModelParams, Vec<EpochStats>)>
where
    F: FnMut(&EpochStats),
{
    config.validate()?;
    if split.train.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let classes = model.arch.classes;
    let frame = |i: usize| {
        ds.frames.get(i).ok_or_else(|| {
            NnError::BadConfig(format!("split index {i} outside dataset of {}", ds.len()))
        })
    };
    let val: Vec<&TactileFrame> = split.val.iter().map(|&i| frame(i)).collect::<Result<_>>()?;
    let mut order = split.train.clone();
    for &i in &order {
        label_of(frame(i)?, classes)?;
    }

    let mut net = Network::new(model);
    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if config.shuffle {
            let mut rng = seed::rng(seed::derive(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let frames: Vec<&TactileFrame> = batch.iter().map(|&i| &ds.frames[i]).collect();
            let labels: Vec<usize> = frames
                .iter()
                .map(|f| label_of(f, classes))
                .collect::<Result<_>>()?;
            let logits = net.forward(&frames_to_tensor(frames.iter().copied())?, Mode::Train)?;
            correct += logits
                .data()
                .chunks_exact(classes)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            let (loss, grads) = net.backward(&labels)?;
            loss_sum += loss * batch.len() as f64;
            opt.step(&mut net.params, &grads);
        }
        let (val_loss, val_accuracy) = evaluate(&net.params, &val)?;
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((net.into_params(), history))
}

pub fn train(
    model: ModelParams,
    ds: &Dataset,
    split: &SplitIndices,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    train_with(model, ds, split, config, |_| {})
}

/// Initializes from `config.seed` and trains.
pub fn fit(
    arch: Architecture,
    ds: &Dataset,
    split: &SplitIndices,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    train(config.init_model(arch), ds, split, config)
}
