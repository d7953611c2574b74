//! Training on top of the differentiable simulator: losses, an adaptive
//! optimizer, quantization-aware training with fan-in control, and an
//! online local-learning interface.

mod checkpoint;
mod classifier;
mod local;
mod loss;
mod optim;
mod qat;
mod resonator;

pub use checkpoint::{Checkpoint, Matrix, CHECKPOINT_FORMAT};
pub use classifier::{
    classifier_topology, deploy, evaluate_classifier, evaluate_network, train_classifier, ClassifierConfig,
    ClassifierModel, ClassifierReport,
};
pub use local::{
    local_input, local_rule_step, local_topology, run_local_experiment, LocalExperimentConfig, LocalExperimentReport,
    LocalRule, PostState, ThreeFactorRule,
};
pub use loss::{class_margin_loss, rate_target_loss, LossSpec};
pub use optim::{
    history_csv, train_parameters, Adam, AdamConfig, Domain, Evaluation, HistoryRow, TrainOutcome, TrainParam,
    HISTORY_CSV_HEADER,
};
pub use qat::{
    fake_quantize_forward, fanin_final_adjust, fanin_regularizer, prune_to_fanin, qat_linear_regression, QatSpec,
    RegSpec,
};
pub use resonator::{resonator_rate, train_resonator, ResonatorConfig, ResonatorResult};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dpi_core::DpiError;
use crate::network::NetworkError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("config: {0}")]
    Config(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("row {row} cannot meet the fan-in limit: {reason}")]
    Infeasible { row: usize, reason: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl From<DpiError> for LearnError {
    fn from(e: DpiError) -> Self {
        LearnError::Network(e.into())
    }
}
