//! Mini-batch SGD training loop shared by every model family.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::tensor::{Sgd, Tape, Tensor, Var};

/// Windows `[n×window_len×input_dim]` and aligned targets `[n×output_dim]`.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub windows: &'a Tensor,
    pub targets: &'a Tensor,
}

impl<'a> Samples<'a> {
    pub fn new(windows: &'a Tensor, targets: &'a Tensor) -> Result<Self> {
        if windows.shape().len() != 3
            || targets.shape().len() != 2
            || windows.shape()[0] != targets.shape()[0]
        {
            return Err(Error::ShapeMismatch {
                op: "samples",
                left: windows.shape().to_vec(),
                right: targets.shape().to_vec(),
            });
        }
        Ok(Self { windows, targets })
    }

    pub fn len(&self) -> usize {
        self.windows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn windows_at(&self, idx: &[usize]) -> Tensor {
        gather_rows(self.windows, idx)
    }

    pub fn targets_at(&self, idx: &[usize]) -> Tensor {
        gather_rows(self.targets, idx)
    }
}

/// Copies the first-axis slices `idx` into a new tensor.
pub fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let per: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::from_parts(shape, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, learning_rate: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate,
            momentum: 0.0,
            batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    /// Sample-weighted mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainStats {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Minimizes mean-squared forecast error over `indices` of `data`.
pub fn train_epochs(
    model: &mut Model,
    data: &Samples<'_>,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    train_with_loss(model, data, indices, cfg, |tape, pred, batch| {
        let y = tape.constant(data.targets_at(batch));
        tape.mse(pred, y)
    })
}

/// Training loop with a caller-supplied batch loss.
///
/// `loss` receives the tape, the forecast for the batch and the sample
/// indices of that batch. Batch order is a seeded shuffle per epoch.
pub fn train_with_loss<F>(
    model: &mut Model,
    data: &Samples<'_>,
    indices: &[usize],
    cfg: &TrainConfig,
    mut loss: F,
) -> Result<TrainStats>
where
    F: FnMut(&mut Tape, Var, &[usize]) -> Result<Var>,
{
    if indices.is_empty() || data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::InvalidArgument(format!(
            "sample index {bad} out of range for {} samples",
            data.len()
        )));
    }
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = indices.to_vec();
    let mut stats = TrainStats::default();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let x = tape.constant(data.windows_at(batch));
            let pred = model.forward(&mut tape, &bound, x)?;
            let l = loss(&mut tape, pred, batch)?;
            total += tape.value(l).data()[0] * batch.len() as f64;
            tape.backward(l)?;
            let vars = bound.into_vars();
            model.params.absorb_grads(&mut tape, &vars)?;
            opt.step(model.params.tensors_mut())?;
        }
        stats.epoch_losses.push(total / order.len() as f64);
    }
    Ok(stats)
}
