//! Config-driven experiment: local baseline, federation, then per-node
//! personalization, evaluated on every node's held-out test windows.

mod config;
mod run;

pub use config::{
    DataSection, DatasetSection, ExperimentConfig, LocalSection, ModelSection, OutputSection,
    PersonalizationSection, Seeds, Stage,
};
pub use run::{load_node_tables, run_experiment, Outcome, RunManifest, StageRecord};
