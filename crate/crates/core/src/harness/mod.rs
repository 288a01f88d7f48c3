//! Training, validation-based model selection, evaluation and inference.

pub mod dataset;
pub mod eval;
pub mod log;
pub mod threads;
pub mod train;

pub use dataset::{load_image, load_split, LoadedImage};
pub use eval::{
    default_eval_pair, evaluate, infer, infer_tensors, mean_relmse, predict_image, upsampled_lrhs, EvalRow, EvalTable,
};
pub use log::{read_log, LogRecord};
pub use threads::{threads_from_env, with_env_threads, with_threads, THREADS_ENV};
pub use train::{best_epoch_from_log, read_state, train, TrainConfig, TrainState, TrainSummary};
