//! End-to-end pipeline assembly: configuration, model binding, synthetic
//! dataset generation, the training loop, and evaluation campaigns.

mod config;
mod dataset;
mod eval;
mod model;
mod train;

pub use config::{ConfigError, PipelineConfig};
pub use dataset::{generate_dataset, generate_pair, load_dataset, load_pair, DatasetError};
pub use eval::{
    evaluate_icp, evaluate_model, evaluate_with, render_csv, render_curve, write_csv,
    write_curve, EvalOutput, PairRecord,
};
pub use model::{
    direction_head, direction_transform, register_pair, DirectionOutput, DitModel, PipelineError,
    PipelineTrace, RegistrationResult,
};
pub use train::{train, EpochStats, TrainReport};
