//! Contrastive co-training, AdamW and zero-shot evaluation.

pub mod check;
pub mod eval;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod step;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::TensorError;

pub use check::gradcheck_model;
pub use eval::{build_mcq_groups, evaluate, embed_texts, embed_videos, similarity, EvalSummary};
pub use loss::{info_nce, info_nce_graph, NORM_TOL};
pub use metrics::{
    average_precision, mcq_accuracy, mcq_predict, ranking, recall_at_k, retrieval_metrics, zeroshot_classify, McqGroup,
    RelevanceMatrix, RetrievalReport, MCQ_CANDIDATES,
};
pub use optim::{adamw_step, AdamState, AdamW, AdamWParams};
pub use step::{
    compute_gradients, cotrain_step, group_max_abs, train, Batch, Example, Gradients, StepOutput,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("bad batch: {0}")]
    Batch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{which} embedding row {row} has norm {norm}, expected 1")]
    Normalization { which: &'static str, row: usize, norm: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Fixed contrastive temperature.
    pub tau: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Also add per-pathway InfoNCE terms to the optimised loss.
    pub aux_loss: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hp = AdamWParams::default();
        Self {
            tau: 0.07,
            lr: hp.lr,
            beta1: hp.beta1,
            beta2: hp.beta2,
            eps: hp.eps,
            weight_decay: hp.weight_decay,
            epochs: 15,
            batch_size: 16,
            max_steps: None,
            seed: 0,
            aux_loss: false,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau must be positive");
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("need lr >= 0 and betas in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("need eps > 0 and weight_decay >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}
