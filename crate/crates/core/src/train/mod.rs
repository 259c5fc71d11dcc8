//! Joint training of the front-end and classifier, checkpointing, resume and
//! the ablation matrix.

mod ablation;
mod config;
mod losses;
mod proxy;
mod trainer;

pub use ablation::{ablation_matrix, AblationRow, AblationTable, NamedRun, TestSet};
pub use config::{
    EpochRecord, FrontendInit, Losses, OptimizerKind, PretrainedBackend, SelectOn, TrainConfig, TrainState,
};
pub use losses::{bce_loss, joint_loss, BCE_EPS};
pub use trainer::{train, train_frontend, Batch, StepOutput, Trainer, BEST_DIR, DIVERGED_DIR, LAST_DIR, LOG_FILE, STATE_FILE};
pub use proxy::{pretrain_encoder, read_exported_map, ProxyConfig, ProxyReport, NAME_MAP_FILE};
