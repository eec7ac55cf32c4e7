//! Siamese contrastive training of the edge filter and the convolutional stack.
//!
//! Tuples pair a query with one matching positive and five hard negatives
//! mined under the current weights. Each batch of tuples is turned into
//! labeled pairs, the contrastive loss is backpropagated through both
//! branches (which share weights), and one SGD step is taken per batch.

mod dataset;
mod loss;
mod mining;
mod sgd;
mod trainer;
mod tuple;

pub use dataset::{
    load_training_set, parse_manifest, prepare_map, Anchor, ManifestRecord, Role, TrainingSet,
};
pub use loss::{contrastive_loss, contrastive_loss_raw, PairLoss};
pub use mining::{describe_items, mine_hard_negatives, select_negatives, Candidate};
pub use sgd::{lr_schedule, Sgd};
pub use trainer::{
    mean_tuple_loss, train, tuple_gradients, write_history_csv, EpochRecord, History, TrainOutcome,
};
pub use tuple::{
    apply_augmentation, augment_tuple, pairs_from_tuple, Augmentation, LabeledPair, TrainingItem,
    TrainingTuple, NEGATIVES_PER_TUPLE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Contrastive margin for non-matching pairs.
    pub margin: f64,
    pub lr0: f64,
    /// Exponential decay rate per epoch.
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Tuples per SGD step.
    pub batch: usize,
    pub max_epochs: usize,
    /// Hard-negative re-mining rounds per epoch.
    pub mining_per_epoch: usize,
    /// Longer side of every training map.
    pub train_max_side: usize,
    /// Run seed; supplied by the caller rather than read from configuration.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.7,
            lr0: 0.001,
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch: 20,
            max_epochs: 20,
            mining_per_epoch: 3,
            train_max_side: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin <= 2.0) {
            return Err(Error::config(
                "margin",
                format!("{} is outside (0, 2]", self.margin),
            ));
        }
        let positive = [("lr0", self.lr0)];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("{v} must be positive")));
            }
        }
        let nonneg = [
            ("lr_decay", self.lr_decay),
            ("weight_decay", self.weight_decay),
        ];
        for (key, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("{v} must be non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(
                "momentum",
                format!("{} is outside [0, 1)", self.momentum),
            ));
        }
        let counts = [
            ("batch", self.batch),
            ("max_epochs", self.max_epochs),
            ("mining_per_epoch", self.mining_per_epoch),
            ("train_max_side", self.train_max_side),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        Ok(())
    }
}
