use serde::{Deserialize, Serialize};

use super::{fine_tune, FineTune};
use crate::data::NodeDataset;
use crate::error::{Error, Result};
use crate::federation::federated_average;
use crate::models::{ModelParams, ModelSpec, TrainStats};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    /// Weight of the copy tuned on the seen subset.
    pub alpha: f64,
    /// Weight of the copy tuned on the unseen subset.
    pub beta: f64,
    /// Weight of the copy tuned on the local subset.
    pub gamma: f64,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.4,
            gamma: 0.4,
            finetune_epochs: 4,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let c = [self.alpha, self.beta, self.gamma];
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) || (c.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::Config(format!(
                "alpha, beta, gamma must lie in [0,1] and sum to 1, got {c:?}"
            )));
        }
        self.fine_tune().validate()
    }

    fn fine_tune(&self) -> FineTune {
        FineTune {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
        }
    }
}

/// Fine-tunes one copy of `global` per subset with a nonzero weight and
/// mixes them element-wise: `α·w_seen + β·w_unseen + γ·w_local`, kept
/// inside the components' range.
pub fn lm_personalize(
    spec: &ModelSpec,
    global: &ModelParams,
    node: &NodeDataset,
    cfg: &LmConfig,
) -> Result<(ModelParams, Vec<TrainStats>)> {
    cfg.validate()?;
    let subsets = [
        ("seen", cfg.alpha, &node.seen),
        ("unseen", cfg.beta, &node.unseen),
        ("local", cfg.gamma, &node.local),
    ];
    let mut parts = Vec::new();
    let mut stats = Vec::new();
    for (k, (name, coef, idx)) in subsets.into_iter().enumerate() {
        if coef == 0.0 {
            continue;
        }
        if idx.is_empty() {
            return Err(Error::EmptySubset(format!(
                "node {} {name} subset",
                node.node_id
            )));
        }
        let seed = derive_seed(cfg.seed, &[node.node_id as u64, k as u64]);
        let (p, s) = fine_tune(
            spec,
            global,
            node,
            idx,
            cfg.finetune_epochs,
            &cfg.fine_tune(),
            seed,
        )?;
        parts.push((p, coef));
        stats.push(s);
    }
    let weighted: Vec<(&ModelParams, f64)> = parts.iter().map(|(p, c)| (p, *c)).collect();
    Ok((federated_average(&weighted)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_validation() {
        assert!(LmConfig::default().validate().is_ok());
        let bad = LmConfig {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let neg = LmConfig {
            alpha: 1.2,
            beta: -0.2,
            gamma: 0.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }
}
