//! Masked multimodal fusion with a noise-robust teacher-student clustering
//! objective.

pub mod gmu;
pub mod losses;
pub mod model;
pub mod schedule;

pub use gmu::{
    gmu_forward, gmu_forward_tape, head_logits, modality_means, no_centers, prepare_batch, prepare_centered, Centers, GmuBatch, NetNames,
};
pub use losses::{argmax_rows, peer_loss, peer_loss_with_pairs, rince_loss, rince_pair, select_confident};
pub use model::{
    dataset_dim, infer_student, infer_teacher, kshot_assign, majority_oracle, predict, read_predictions, train_umd2,
    write_predictions, Network, PoolRecord, Prediction, PredictionRow, TrainLog, TrainState, Umd2Config, Umd2Model,
    STUDENT, TEACHER,
};
pub use schedule::{ema_update, gamma_schedule, pool_size, sample_mask, sample_mask_with};
