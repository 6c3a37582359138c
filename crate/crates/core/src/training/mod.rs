//! Loss, optimizer, schedule, segmentation and the training loop.

mod adam;
mod loss;
mod schedule;
mod segment;
mod trainer;

pub use adam::{Adam, AdamSlot, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use loss::{weighted_bce, weighted_bce_sum, DEFAULT_OMEGA, PROB_CLAMP};
pub use schedule::{lr_at, lr_with, LR0, LR_DECAY, LR_DECAY_EVERY};
pub use segment::{segment_recording, Segment, SegmentBatch, SEGMENT_FRAMES, SEGMENT_SAMPLES};
pub use trainer::{
    epoch_log_csv, evaluate_segments, segment_salience, write_epoch_log, Control, EpochRecord,
    Scores, StepInfo, TrainConfig, TrainObserver, TrainOutcome, Trainer,
};
