//! Mini-batch training with early stopping on validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::Model;
use crate::optim::{OptimizerKind, OptimizerState};
use crate::tensor::{self, Tensor};

/// Images `(N, 1, H, W)` scaled to `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledImages {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(Error::shape(
                "LabeledImages",
                format!("{} images, {} labels", images.batch(), labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            patience: 10,
            batch_size: 64,
            optimizer: OptimizerKind::adam_default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "epochs, patience and batch size must be positive".into(),
            ));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::InvalidArgument(format!(
                "patience {} must be below the epoch budget {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// CSV with header `epoch,train_loss,val_loss,train_acc,val_acc`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.epochs {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Tracks the best validation loss; a strict decrease counts as improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Loss and accuracy (percent) of `model` on a whole split.
pub fn evaluate(model: &Model, data: &LabeledImages) -> Result<(f64, f64)> {
    let (logits, _) = model.forward(&data.images)?;
    let (loss, _) = tensor::softmax_cross_entropy(&logits, &data.labels)?;
    let acc = metrics::accuracy(&tensor::argmax_rows(&logits), &data.labels)?;
    Ok((loss, acc))
}

/// Trains until the epoch budget runs out or validation loss stalls for
/// `patience` epochs, then restores the best-validation parameters.
/// Batches are reshuffled each epoch from a stream seeded with `seed`.
pub fn train(
    mut model: Model,
    train_set: &LabeledImages,
    val_set: &LabeledImages,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, History)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut optimizer = OptimizerState::new(cfg.optimizer);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.subset(chunk);
            let (logits, cache) = model.forward(&batch.images)?;
            let (loss, grad) = tensor::softmax_cross_entropy(&logits, &batch.labels)?;
            loss_sum += loss * chunk.len() as f64;
            correct += tensor::argmax_rows(&logits)
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
            let grads = model.backward(&cache, &grad)?;
            optimizer.apply(&mut model, &grads)?;
        }
        let (val_loss, val_acc) = evaluate(&model, val_set)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            train_acc: 100.0 * correct as f64 / train_set.len() as f64,
            val_acc,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let history = History {
        epochs,
        best_epoch: stopper.best_epoch(),
        stopped_early,
    };
    Ok((best, history))
}
