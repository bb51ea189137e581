//! Training, evaluation, saved model directories and the experiment matrix.

mod artifacts;
mod data;
mod matrix;
mod train;

pub use artifacts::{config_digest, AnswerOutput, load_model_dir, save_model_dir, ModelDir, Predictor};
pub use data::{build_vocab, encode_example, encode_examples, evidence_pairs, Sample};
pub use matrix::{run_evidence_matrix, run_matrix, MatrixCell, MatrixConfig, MatrixReport};
pub use train::{
    batch_gradients, evaluate_samples, lr_at, predict, span_text, train, LogEntry, OnImprove, Prediction, System,
    TrainConfig, TrainData, TrainOutcome,
};
