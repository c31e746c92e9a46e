use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fine_tune, FineTune};
use crate::data::NodeDataset;
use crate::error::{Error, Result};
use crate::models::{gather_rows, predict, ModelParams, ModelSpec};
use crate::seed::derive_seed;
use crate::tensor::{softmax_rows, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlStrategy {
    /// `1 − max_k p_k`
    Uncertainty,
    /// `−(p₁ − p₂)` over the two most likely classes
    Margin,
    /// `|prediction − target|`, summed over outputs
    #[default]
    ErrorBased,
}

impl AlStrategy {
    fn name(self) -> &'static str {
        match self {
            AlStrategy::Uncertainty => "uncertainty",
            AlStrategy::Margin => "margin",
            AlStrategy::ErrorBased => "error_based",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlConfig {
    pub strategy: AlStrategy,
    /// Caps the candidate pool drawn from the unseen subset.
    pub pool_size: Option<usize>,
    pub queries_per_step: usize,
    pub steps: usize,
    /// Fine-tuning epochs after each query step.
    pub epochs_per_step: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            strategy: AlStrategy::ErrorBased,
            pool_size: None,
            queries_per_step: 16,
            steps: 4,
            epochs_per_step: 2,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl AlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queries_per_step == 0 || self.steps == 0 {
            return Err(Error::Config(
                "AL needs positive queries_per_step and steps".into(),
            ));
        }
        if self.pool_size == Some(0) {
            return Err(Error::Config("AL pool_size must be positive".into()));
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

/// Scores for every candidate and the chosen positions within the pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub selected: Vec<usize>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AlStats {
    /// Node sample indices labelled at each step.
    pub selected: Vec<Vec<usize>>,
    pub labeled: usize,
    pub stopped_early: bool,
    pub final_loss: Option<f64>,
}

/// Positions of the `k` largest scores; ties go to the lower position.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn probability_scores(probs: &Tensor, strategy: AlStrategy) -> Vec<f64> {
    let classes = probs.shape()[1];
    probs
        .data()
        .chunks(classes)
        .map(|row| {
            let (mut p1, mut p2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in row {
                if p > p1 {
                    p2 = p1;
                    p1 = p;
                } else if p > p2 {
                    p2 = p;
                }
            }
            match strategy {
                AlStrategy::Uncertainty => 1.0 - p1,
                _ => -(p1 - p2),
            }
        })
        .collect()
}

/// Scores `windows` with the model and picks the top `k`.
///
/// `targets` are the oracle labels, needed only by `ErrorBased`. The
/// probability strategies read the output as class logits and need at
/// least two of them.
pub fn al_score(
    spec: &ModelSpec,
    params: &ModelParams,
    windows: &Tensor,
    targets: Option<&Tensor>,
    strategy: AlStrategy,
    k: usize,
) -> Result<QueryResult> {
    if windows.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::EmptySubset("active learning pool".into()));
    }
    let pred = predict(spec, params, windows)?;
    let scores = match strategy {
        AlStrategy::Uncertainty | AlStrategy::Margin => {
            if spec.output_dim < 2 {
                return Err(Error::StrategyMismatch {
                    strategy: strategy.name(),
                    reason: format!(
                        "needs a softmax head with ≥2 classes, model has {} output",
                        spec.output_dim
                    ),
                });
            }
            probability_scores(&softmax_rows(&pred)?, strategy)
        }
        AlStrategy::ErrorBased => {
            let t = targets.ok_or_else(|| Error::StrategyMismatch {
                strategy: strategy.name(),
                reason: "oracle targets are required".into(),
            })?;
            if t.shape() != pred.shape() {
                return Err(Error::ShapeMismatch {
                    op: "al_score",
                    left: pred.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            pred.data()
                .chunks(spec.output_dim)
                .zip(t.data().chunks(spec.output_dim))
                .map(|(p, y)| p.iter().zip(y).map(|(a, b)| (a - b).abs()).sum())
                .collect()
        }
    };
    if scores.iter().any(|s: &f64| !s.is_finite()) {
        return Err(Error::NumericInstability { op: "al_score" });
    }
    Ok(QueryResult {
        selected: top_k(&scores, k),
        scores,
    })
}

/// Pool-based active learning over the node's unseen subset: each step
/// scores the remaining pool, reveals the top queries and fine-tunes on
/// everything labelled so far.
pub fn al_personalize(
    spec: &ModelSpec,
    global: &ModelParams,
    node: &NodeDataset,
    cfg: &AlConfig,
) -> Result<(ModelParams, AlStats)> {
    cfg.validate()?;
    let mut pool = node.unseen.clone();
    if let Some(cap) = cfg.pool_size.filter(|&c| c < pool.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[node.node_id as u64]));
        pool.shuffle(&mut rng);
        pool.truncate(cap);
        pool.sort_unstable();
    }
    if pool.is_empty() {
        return Err(Error::EmptySubset(format!(
            "node {} active learning pool",
            node.node_id
        )));
    }

    let mut params = global.clone();
    let mut labeled = Vec::new();
    let mut stats = AlStats::default();
    for step in 0..cfg.steps {
        if pool.is_empty() {
            stats.stopped_early = true;
            break;
        }
        let windows = gather_rows(&node.windows, &pool);
        let targets = gather_rows(&node.targets, &pool);
        let q = al_score(
            spec,
            &params,
            &windows,
            Some(&targets),
            cfg.strategy,
            cfg.queries_per_step,
        )?;
        let mut chosen: Vec<usize> = q.selected.iter().map(|&p| pool[p]).collect();
        let mut keep = vec![true; pool.len()];
        for &p in &q.selected {
            keep[p] = false;
        }
        let mut flags = keep.into_iter();
        pool.retain(|_| flags.next().unwrap_or(true));
        labeled.extend_from_slice(&chosen);
        labeled.sort_unstable();

        let seed = derive_seed(cfg.seed, &[node.node_id as u64, step as u64]);
        let (next, ts) = fine_tune(
            spec,
            &params,
            node,
            &labeled,
            cfg.epochs_per_step,
            &cfg.fine_tune(),
            seed,
        )?;
        params = next;
        stats.final_loss = ts.final_loss().or(stats.final_loss);
        chosen.sort_unstable();
        stats.selected.push(chosen);
    }
    stats.labeled = labeled.len();
    Ok((params, stats))
}
