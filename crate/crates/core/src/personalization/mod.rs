//! Post-federation personalization of the global model on one node.

mod active;
mod distill;
mod memorize;

use serde::{Deserialize, Serialize};

pub use crate::data::{select_local_subset, LocalPolicy};
pub use active::{al_personalize, al_score, top_k, AlConfig, AlStats, AlStrategy, QueryResult};
pub use distill::{kd_losses, kd_personalize, kd_regression_loss, KdConfig};
pub use memorize::{lm_personalize, LmConfig};

use crate::data::NodeDataset;
use crate::error::{Error, Result};
use crate::models::{train_epochs, Model, ModelParams, ModelSpec, TrainConfig, TrainStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "al")]
    ActiveLearning,
    #[serde(rename = "kd")]
    KnowledgeDistillation,
    #[serde(rename = "lm")]
    LocalMemorization,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::ActiveLearning => "AL",
            Method::KnowledgeDistillation => "KD",
            Method::LocalMemorization => "LM",
        }
    }
}

/// Exactly one method with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum PersonalizationConfig {
    Al(AlConfig),
    Kd(KdConfig),
    Lm(LmConfig),
}

impl PersonalizationConfig {
    pub fn method(&self) -> Method {
        match self {
            Self::Al(_) => Method::ActiveLearning,
            Self::Kd(_) => Method::KnowledgeDistillation,
            Self::Lm(_) => Method::LocalMemorization,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Al(c) => c.validate(),
            Self::Kd(c) => c.validate(),
            Self::Lm(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MethodStats {
    Al(AlStats),
    Kd(TrainStats),
    Lm(Vec<TrainStats>),
}

/// A personalized model. KD may change the architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Personalized {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub stats: MethodStats,
}

/// Dispatches to the configured method. `global` is never modified.
pub fn personalize(
    spec: &ModelSpec,
    global: &ModelParams,
    node: &NodeDataset,
    cfg: &PersonalizationConfig,
) -> Result<Personalized> {
    cfg.validate()?;
    global.check_spec(spec)?;
    if node.train.is_empty() {
        return Err(Error::EmptySubset(format!(
            "node {} train split",
            node.node_id
        )));
    }
    match cfg {
        PersonalizationConfig::Al(c) => {
            let (params, stats) = al_personalize(spec, global, node, c)?;
            Ok(Personalized {
                spec: spec.clone(),
                params,
                stats: MethodStats::Al(stats),
            })
        }
        PersonalizationConfig::Kd(c) => {
            let (student_spec, params, stats) = kd_personalize(spec, global, node, c)?;
            Ok(Personalized {
                spec: student_spec,
                params,
                stats: MethodStats::Kd(stats),
            })
        }
        PersonalizationConfig::Lm(c) => {
            let (params, stats) = lm_personalize(spec, global, node, c)?;
            Ok(Personalized {
                spec: spec.clone(),
                params,
                stats: MethodStats::Lm(stats),
            })
        }
    }
}

/// Optimizer settings shared by every fine-tuning loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTune {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl FineTune {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.batch_size == 0 {
            return Err(Error::Config(
                "fine-tuning needs positive learning_rate and batch_size".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0,1)",
                self.momentum
            )));
        }
        Ok(())
    }

    fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// MSE fine-tuning of a copy of `params`. Zero epochs returns the copy.
fn fine_tune(
    spec: &ModelSpec,
    params: &ModelParams,
    node: &NodeDataset,
    indices: &[usize],
    epochs: usize,
    ft: &FineTune,
    seed: u64,
) -> Result<(ModelParams, TrainStats)> {
    if epochs == 0 {
        return Ok((params.clone(), TrainStats::default()));
    }
    let mut model = Model::new(spec.clone(), params.clone())?;
    let stats = train_epochs(
        &mut model,
        &node.samples(),
        indices,
        &ft.train_config(epochs, seed),
    )?;
    Ok((model.params, stats))
}
