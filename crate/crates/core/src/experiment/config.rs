use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    DatasetSchema, LocalPolicy, PipelineConfig, SplitRatios, SubsetConfig, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::federation::FederationConfig;
use crate::models::{Family, ModelSpec};
use crate::personalization::{AlConfig, KdConfig, LmConfig};

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Lc,
    Fl,
    Kd,
    Al,
    Lm,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Lc, Stage::Fl, Stage::Kd, Stage::Al, Stage::Lm];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Lc => "lc",
            Stage::Fl => "fl",
            Stage::Kd => "kd",
            Stage::Al => "al",
            Stage::Lm => "lm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }

    pub fn is_personalization(self) -> bool {
        matches!(self, Stage::Kd | Stage::Al | Stage::Lm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Built-in schema name; supplies columns and node count.
    pub builtin: Option<String>,
    /// Custom column list, used with `csv_dir` instead of a built-in schema.
    pub features: Option<Vec<String>>,
    /// Overrides the schema's target column.
    pub target: Option<String>,
    /// Directory of per-node CSV files, read in file-name order.
    pub csv_dir: Option<PathBuf>,
    pub synthetic: SyntheticSection,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            builtin: Some("animal_feed".into()),
            features: None,
            target: None,
            csv_dir: None,
            synthetic: SyntheticSection::default(),
        }
    }
}

/// Synthetic generator settings; the seed comes from `[seeds].data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub records_per_node: usize,
    pub periods: Vec<f64>,
    pub noise_std: f64,
    pub node_shift_scale: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            records_per_node: d.records_per_node,
            periods: d.periods,
            noise_std: d.noise_std,
            node_shift_scale: d.node_shift_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub window_len: usize,
    pub horizon: usize,
    pub train_ratio: f64,
    pub seen: f64,
    pub unseen: f64,
    pub local_fraction: f64,
    pub local_policy: LocalPolicy,
}

impl Default for DataSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            window_len: p.window_len,
            horizon: p.horizon,
            train_ratio: p.ratios.train,
            seen: p.subsets.seen,
            unseen: p.subsets.unseen,
            local_fraction: p.subsets.local_fraction,
            local_policy: p.subsets.local_policy,
        }
    }
}

impl DataSection {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            window_len: self.window_len,
            horizon: self.horizon,
            ratios: SplitRatios {
                train: self.train_ratio,
                test: 1.0 - self.train_ratio,
            },
            subsets: SubsetConfig {
                seen: self.seen,
                unseen: self.unseen,
                local_fraction: self.local_fraction,
                local_policy: self.local_policy,
            },
        }
    }
}

/// Architecture; input and window sizes come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    pub hidden_dims: Option<Vec<usize>>,
    pub num_heads: usize,
    pub d_model: usize,
    pub num_layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: Family::Dnn,
            hidden_dims: None,
            num_heads: 2,
            d_model: 16,
            num_layers: 2,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, input_dim: usize, window_len: usize) -> Result<ModelSpec> {
        let hidden = |default: Vec<usize>| self.hidden_dims.clone().unwrap_or(default);
        let spec = match self.family {
            Family::Linear => ModelSpec::linear(input_dim, window_len, 1),
            Family::Dnn => ModelSpec::dnn(input_dim, window_len, hidden(vec![32, 16]), 1),
            Family::Lstm => ModelSpec::lstm(input_dim, window_len, hidden(vec![16]), 1),
            Family::Transformer => ModelSpec::transformer(
                input_dim,
                window_len,
                self.d_model,
                self.num_heads,
                self.num_layers,
                1,
            ),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Local-only baseline; shares the federation optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalSection {
    pub epochs: usize,
}

impl Default for LocalSection {
    fn default() -> Self {
        Self { epochs: 20 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonalizationSection {
    pub kd: KdConfig,
    pub al: AlConfig,
    pub lm: LmConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            data: seed,
            init: seed,
            train: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write `report_original.csv` in the target's original units.
    pub original_units: bool,
    pub snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            original_units: false,
            snapshots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub local: LocalSection,
    pub federation: FederationConfig,
    pub personalization: PersonalizationSection,
    pub seeds: Seeds,
    pub output: OutputSection,
    /// Stages to run; all by default.
    pub stages: Vec<Stage>,
    pub execution: Execution,
    /// Worker thread bound for parallel stages.
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            local: LocalSection::default(),
            federation: FederationConfig::default(),
            personalization: PersonalizationSection::default(),
            seeds: Seeds::default(),
            output: OutputSection::default(),
            stages: Stage::ALL.to_vec(),
            execution: Execution::default(),
            jobs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The schema with the configured target applied.
    pub fn schema(&self, node_count: Option<usize>) -> Result<DatasetSchema> {
        let d = &self.dataset;
        let schema = match (&d.builtin, &d.features) {
            (Some(name), None) => DatasetSchema::builtin(name)?,
            (None, Some(features)) => {
                let cols: Vec<&str> = features.iter().map(String::as_str).collect();
                let target = d
                    .target
                    .as_deref()
                    .ok_or_else(|| Error::Config("custom features need a target".into()))?;
                DatasetSchema::new("custom", &cols, target, node_count.unwrap_or(1))?
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "set either builtin or features, not both".into(),
                ))
            }
            (None, None) => return Err(Error::Config("dataset needs builtin or features".into())),
        };
        let mut schema = match &d.target {
            Some(t) => schema.with_target(t)?,
            None => schema,
        };
        if let Some(n) = node_count {
            schema.node_count = n;
        }
        schema.validate()?;
        Ok(schema)
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        let s = &self.dataset.synthetic;
        SyntheticConfig {
            seed: self.seeds.data,
            records_per_node: s.records_per_node,
            periods: s.periods.clone(),
            noise_std: s.noise_std,
            node_shift_scale: s.node_shift_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let schema = self.schema(None)?;
        if self.dataset.csv_dir.is_none() {
            if self.dataset.builtin.is_none() {
                return Err(Error::Config(
                    "synthetic data needs a builtin schema".into(),
                ));
            }
            self.synthetic().validate()?;
            let needed = self.data.window_len + 2;
            if self.dataset.synthetic.records_per_node < needed {
                return Err(Error::Config(format!(
                    "records_per_node must be at least window_len + 2 = {needed}"
                )));
            }
        }
        let p = self.data.pipeline();
        p.subsets.validate()?;
        if !(p.ratios.train > 0.0 && p.ratios.train < 1.0) {
            return Err(Error::Config(format!(
                "train_ratio {} outside (0,1)",
                p.ratios.train
            )));
        }
        if p.window_len == 0 || p.horizon == 0 {
            return Err(Error::Config(
                "window_len and horizon must be positive".into(),
            ));
        }
        self.model
            .spec(schema.input_features().len(), p.window_len)?;
        self.federation.validate()?;
        if self.local.epochs == 0 {
            return Err(Error::Config("local epochs must be positive".into()));
        }
        self.personalization.kd.validate()?;
        self.personalization.al.validate()?;
        self.personalization.lm.validate()?;
        if self.stages.is_empty() {
            return Err(Error::Config("no stages selected".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        Ok(())
    }
}
