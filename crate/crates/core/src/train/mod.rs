//! Teacher training with curriculum erasing, offline distillation into the
//! student, evaluation, and checkpointing.

mod checkpoint;
mod evaluate;
mod loops;
mod metrics;
mod optimizer;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use evaluate::{compute_topk_accuracy, evaluate, rank_categories, EvalReport, FrequencyBaseline, PatternRow};
pub use loops::{
    distill_student, run_training, train_student_no_kd, train_teacher, TrainConfig, TrainData,
    TrainKind, TrainOutcome,
};
pub use metrics::{append_records, read_records, MetricsRecord};
pub use optimizer::AdamW;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: u64 },
    #[error("teacher checkpoint is not frozen")]
    UnfrozenTeacher,
    #[error("teacher parameters changed during distillation")]
    TeacherMutated,
    #[error("{role} model must use {expected} fusion")]
    WrongFusion {
        role: &'static str,
        expected: &'static str,
    },
    #[error("teacher and student are not shape-isomorphic: {0}")]
    TeacherStudentMismatch(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("no evaluable targets in the evaluation set")]
    EmptyEvaluation,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("metrics log: {0}")]
    Metrics(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Distill(#[from] crate::distill::DistillError),
    #[error(transparent)]
    Missing(#[from] crate::missingness::MissingnessError),
    #[error(transparent)]
    Data(#[from] crate::ehr::DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
