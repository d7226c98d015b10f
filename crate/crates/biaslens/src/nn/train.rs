//! The training loop: mini-batch Adam with accuracy-monitored early stopping
//! and best-epoch parameter restoration.

use super::{AdamState, Mode, Network};
use crate::loss::{evaluate as evaluate_loss, LossSpec, Targets};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::{Error, Result};

/// Stream id for the epoch-shuffle generator, so the schedule seed can be
/// shared with other consumers without correlating their draws.
const SHUFFLE_STREAM: u64 = 0x5F;

/// A split ready for training or evaluation: flattened images (one sample
/// per row) with parallel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub images: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledSet {
    pub fn new(images: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<LabeledSet> {
        if images.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledSet { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers the rows selected by `indices` into a batch with targets.
    pub fn batch(&self, indices: &[usize]) -> Result<(Matrix, Targets)> {
        let images =
            Matrix::from_fn(indices.len(), self.images.cols(), |r, c| self.images[(indices[r], c)]);
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, Targets::from_labels(&labels, self.num_classes)?))
    }
}

/// Training hyperparameters. The seed drives only the epoch shuffles; network
/// initialization and dropout use the network's own stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> TrainSchedule {
        TrainSchedule {
            batch_size: 512,
            max_epochs: 40,
            patience: 12,
            lr: super::adam::DEFAULT_LR,
            weight_decay: super::adam::DEFAULT_WEIGHT_DECAY,
            seed: 1,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be ≥ 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Argument("max_epochs must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Argument(format!("lr must be positive, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::Argument(format!(
                "weight_decay must be ≥ 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Why training ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Validation accuracy failed to improve for `patience` epochs.
    EarlyStopped,
    MaxEpochs,
}

impl StopReason {
    pub fn name(&self) -> &'static str {
        match self {
            StopReason::EarlyStopped => "early_stopped",
            StopReason::MaxEpochs => "max_epochs",
        }
    }

    pub fn parse(s: &str) -> Result<StopReason> {
        match s {
            "early_stopped" => Ok(StopReason::EarlyStopped),
            "max_epochs" => Ok(StopReason::MaxEpochs),
            other => Err(Error::Argument(format!("unknown stop reason `{other}`"))),
        }
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Per-epoch history plus the stopping outcome. Two runs from identical
/// seeds compare equal bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 0-based index of the epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }
}

/// Early-stopping bookkeeping: tracks the best validation accuracy seen
/// (strict improvement) and how many epochs have passed since.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    epochs_since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper { patience, best: None, best_epoch: 0, epochs_since_best: 0 }
    }

    /// Records one epoch's validation accuracy. Returns true when it strictly
    /// improves on the best so far (the first observation always improves).
    pub fn observe(&mut self, epoch: usize, val_accuracy: f64) -> bool {
        match self.best {
            Some(best) if val_accuracy <= best => {
                self.epochs_since_best += 1;
                false
            }
            _ => {
                self.best = Some(val_accuracy);
                self.best_epoch = epoch;
                self.epochs_since_best = 0;
                true
            }
        }
    }

    /// True once `patience` consecutive epochs have failed to improve.
    pub fn should_stop(&self) -> bool {
        self.patience > 0 && self.epochs_since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_accuracy(&self) -> f64 {
        self.best.unwrap_or(0.0)
    }
}

/// Trains the network: shuffled mini-batches, Adam updates, one validation
/// pass per epoch, early stopping on validation accuracy, and restoration of
/// the best epoch's parameters (including batchnorm running statistics).
pub fn train(
    net: &mut Network,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    spec: &LossSpec,
    schedule: &TrainSchedule,
) -> Result<TrainReport> {
    schedule.validate()?;
    spec.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }

    let mut shuffle_rng = Rng::stream(schedule.seed, SHUFFLE_STREAM);
    let mut adam = AdamState::for_network(net, schedule.lr, schedule.weight_decay);
    let mut stopper = EarlyStopper::new(schedule.patience);
    let mut best_snapshot = None;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    let n = train_set.len();
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 0..schedule.max_epochs {
        shuffle_rng.shuffle(&mut indices);
        net.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        for chunk in indices.chunks(schedule.batch_size) {
            let (batch, targets) = train_set.batch(chunk)?;
            let (logits, _) = net.forward(&batch, false)?;
            let res = evaluate_loss(spec, &logits, &targets)?;
            net.backward(&res.grad)?;
            adam.step_network(net)?;
            loss_sum += res.value * chunk.len() as f64;
        }
        let train_loss = loss_sum / n as f64;
        let val_accuracy = evaluate(net, val_set, schedule.batch_size)?;
        epochs.push(EpochStats { train_loss, val_accuracy });
        if stopper.observe(epoch, val_accuracy) {
            best_snapshot = Some(net.snapshot());
        }
        if stopper.should_stop() {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    if let Some(snap) = &best_snapshot {
        net.restore(snap)?;
    }
    net.set_mode(Mode::Eval);
    Ok(TrainReport {
        epochs,
        best_epoch: stopper.best_epoch(),
        best_val_accuracy: stopper.best_accuracy(),
        stop_reason,
    })
}

/// Fraction of samples whose argmax logit (ties to the lowest class index)
/// matches the label. Runs in eval mode, batched.
pub fn evaluate(net: &mut Network, set: &LabeledSet, batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Argument("batch_size must be ≥ 1".into()));
    }
    let prev_mode = net.mode();
    net.set_mode(Mode::Eval);
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut correct = 0usize;
    let mut result = Ok(());
    for chunk in indices.chunks(batch_size) {
        let (batch, _) = match set.batch(chunk) {
            Ok(b) => b,
            Err(e) => {
                result = Err(e);
                break;
            }
        };
        let logits = match net.forward(&batch, false) {
            Ok((l, _)) => l,
            Err(e) => {
                result = Err(e);
                break;
            }
        };
        for (r, &i) in chunk.iter().enumerate() {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            if best == set.labels[i] {
                correct += 1;
            }
        }
    }
    net.set_mode(prev_mode);
    result.map(|()| correct as f64 / set.len() as f64)
}
