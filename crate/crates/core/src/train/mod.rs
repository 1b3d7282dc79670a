//! Joint training of the restoration and classifier branches.

mod adam;
mod report;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use report::{write_epoch_csv, EpochReport};
pub use trainer::{
    class_id, evaluate_l1, loss, max_softmax_confidence, random_label_assign, LossParts,
    TrainConfig, Trainer, NUM_CLASSES,
};
