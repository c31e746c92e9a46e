//! Dataset ingestion, windowing, normalization and per-node splits.

mod csv_io;
mod node;
mod schema;
mod synthetic;
mod window;

pub use csv_io::{load_csv, parse_timestamp, write_csv};
pub use node::{
    prepare_node, select_local_subset, split_node_dataset, LocalPolicy, NodeDataset,
    PipelineConfig, SplitRatios, SubsetConfig,
};
pub use schema::{is_time_column, DatasetSchema};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use window::{make_windows, normalize_minmax, MinMax, Windows};

/// Parsed table with columns in schema order. Time-like columns hold epoch
/// seconds (or raw day/month/year numbers); rows are sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}
