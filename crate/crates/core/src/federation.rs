//! Coordinator/client simulation with sample-weighted Federated Averaging.
//!
//! Clients own their [`NodeDataset`]; the coordinator only ever sees the
//! parameter snapshots and sample counts returned by
//! [`ClientHandle::local_update`].

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::NodeDataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::{snapshot, train_epochs, Model, ModelParams, ModelSpec, TrainConfig};
use crate::seed::derive_seed;
use crate::tensor::NamedTensor;

/// Which train-split indices a client fits during federation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitSubset {
    #[default]
    Seen,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub fit_on: FitSubset,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            local_epochs: 2,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
            fit_on: FitSubset::Seen,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "local_epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Parameters a client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub node_id: usize,
    pub params: ModelParams,
    pub weight: f64,
    pub losses: Vec<f64>,
}

/// A simulated client. Its data stays private to it.
#[derive(Debug, Clone)]
pub struct ClientHandle {
    dataset: NodeDataset,
    fit_on: Vec<usize>,
    seed: u64,
}

impl ClientHandle {
    pub fn new(dataset: NodeDataset, subset: FitSubset, seed: u64) -> Result<Self> {
        let fit_on = match subset {
            FitSubset::Seen => dataset.seen.clone(),
            FitSubset::Train => dataset.train.clone(),
        };
        if fit_on.is_empty() {
            return Err(Error::EmptySubset(format!(
                "node {} federation data",
                dataset.node_id
            )));
        }
        Ok(Self {
            dataset,
            fit_on,
            seed,
        })
    }

    pub fn node_id(&self) -> usize {
        self.dataset.node_id
    }

    /// `|D_i|`, the aggregation weight.
    pub fn sample_count(&self) -> usize {
        self.fit_on.len()
    }

    /// Trains a copy of `global` for `cfg.local_epochs` on local data.
    pub fn local_update(
        &self,
        spec: &ModelSpec,
        global: &ModelParams,
        cfg: &FederationConfig,
        round: usize,
    ) -> Result<ClientUpdate> {
        let mut model = Model::new(spec.clone(), global.clone())?;
        let train = TrainConfig {
            epochs: cfg.local_epochs,
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            batch_size: cfg.batch_size,
            seed: derive_seed(self.seed, &[round as u64]),
        };
        let stats = train_epochs(&mut model, &self.dataset.samples(), &self.fit_on, &train)?;
        Ok(ClientUpdate {
            node_id: self.node_id(),
            params: model.params,
            weight: self.sample_count() as f64,
            losses: stats.epoch_losses,
        })
    }

    /// Hands the dataset back to the node once federation is over.
    pub fn into_dataset(self) -> NodeDataset {
        self.dataset
    }
}

/// Element-wise `Σ wᵢ·pᵢ / Σ wᵢ`, kept inside each element's input range.
pub fn federated_average(clients: &[(&ModelParams, f64)]) -> Result<ModelParams> {
    let (first, _) = clients.first().ok_or_else(|| {
        Error::InvalidArgument("federated_average needs at least one client".into())
    })?;
    for (p, w) in clients {
        first.check_compatible(p)?;
        if !(*w > 0.0 && w.is_finite()) {
            return Err(Error::ZeroWeight);
        }
    }
    let total: f64 = clients.iter().map(|(_, w)| w).sum();
    let tensors = first
        .tensors()
        .iter()
        .enumerate()
        .map(|(t, nt)| {
            let mut tensor = nt.tensor.clone();
            for (e, out) in tensor.data_mut().iter_mut().enumerate() {
                let (mut acc, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
                for (p, w) in clients {
                    let v = p.tensors()[t].tensor.data()[e];
                    acc += w * v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                *out = (acc / total).clamp(lo, hi);
            }
            NamedTensor::new(nt.name.clone(), tensor)
        })
        .collect();
    Ok(ModelParams::new(first.family(), tensors))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    /// `(node_id, per-epoch loss)` for every client.
    pub client_losses: Vec<(usize, Vec<f64>)>,
    pub aggregation_secs: f64,
    pub snapshot: Option<PathBuf>,
}

/// Coordinator state across rounds.
#[derive(Debug)]
pub struct FederationSession {
    spec: ModelSpec,
    global: ModelParams,
    clients: Vec<ClientHandle>,
    round: usize,
    config: FederationConfig,
    execution: Execution,
    snapshot_dir: Option<PathBuf>,
}

impl FederationSession {
    pub fn new(
        spec: ModelSpec,
        global: ModelParams,
        clients: Vec<ClientHandle>,
        config: FederationConfig,
    ) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        global.check_spec(&spec)?;
        if clients.is_empty() {
            return Err(Error::InvalidArgument(
                "federation needs at least one client".into(),
            ));
        }
        Ok(Self {
            spec,
            global,
            clients,
            round: 0,
            config,
            execution: Execution::default(),
            snapshot_dir: None,
        })
    }

    /// Clients seeded from `config.seed` and their node ids.
    pub fn from_nodes(
        spec: ModelSpec,
        global: ModelParams,
        nodes: Vec<NodeDataset>,
        config: FederationConfig,
    ) -> Result<Self> {
        let clients = nodes
            .into_iter()
            .map(|n| {
                let seed = derive_seed(config.seed, &[n.node_id as u64]);
                ClientHandle::new(n, config.fit_on, seed)
            })
            .collect::<Result<_>>()?;
        Self::new(spec, global, clients, config)
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// Writes `round_<k>.params` into `dir` after each round.
    pub fn with_snapshots(mut self, dir: impl Into<PathBuf>) -> Self {
        self.snapshot_dir = Some(dir.into());
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn clients(&self) -> &[ClientHandle] {
        &self.clients
    }

    /// Dispatch, local training, then aggregation. Any client failure leaves
    /// the global model and round counter untouched.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let (spec, global, cfg, round) = (&self.spec, &self.global, &self.config, self.round);
        let updates: Vec<ClientUpdate> = self
            .execution
            .map(self.clients.iter().collect(), |c| {
                c.local_update(spec, global, cfg, round)
            })
            .into_iter()
            .collect::<Result<_>>()?;
        let started = Instant::now();
        let pairs: Vec<(&ModelParams, f64)> =
            updates.iter().map(|u| (&u.params, u.weight)).collect();
        let next = federated_average(&pairs)?;
        let aggregation_secs = started.elapsed().as_secs_f64();

        let snapshot = match &self.snapshot_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("round_{}.params", round + 1));
                snapshot::save(&next, &path)?;
                Some(path)
            }
            None => None,
        };
        self.global = next;
        self.round += 1;
        Ok(RoundReport {
            round: self.round,
            client_losses: updates.into_iter().map(|u| (u.node_id, u.losses)).collect(),
            aggregation_secs,
            snapshot,
        })
    }

    /// Runs the remaining configured rounds.
    pub fn run_session(&mut self) -> Result<Vec<RoundReport>> {
        (self.round..self.config.rounds)
            .map(|_| self.run_round())
            .collect()
    }

    pub fn into_parts(self) -> (ModelParams, Vec<ClientHandle>) {
        (self.global, self.clients)
    }
}
