use std::f64::consts::PI;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::schema::is_timestamp_column;
use super::{DatasetSchema, RawTable};
use crate::error::{Error, Result};

const START_EPOCH: i64 = 1_577_836_800;
const STEP_SECONDS: f64 = 3600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub records_per_node: usize,
    /// Seasonal periods in time steps.
    pub periods: Vec<f64>,
    pub noise_std: f64,
    /// Scale of per-node baseline and phase offsets.
    pub node_shift_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            records_per_node: 600,
            periods: vec![24.0, 168.0],
            noise_std: 0.1,
            node_shift_scale: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.records_per_node == 0 {
            return Err(Error::Config("records_per_node must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        if !(self.node_shift_scale >= 0.0 && self.node_shift_scale.is_finite()) {
            return Err(Error::Config("node_shift_scale must be nonnegative".into()));
        }
        if self.periods.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::Config("seasonal periods must be positive".into()));
        }
        Ok(())
    }
}

struct FeatureShape {
    baseline: f64,
    amplitudes: Vec<f64>,
    phase: f64,
}

fn node_seed(seed: u64, node: usize) -> u64 {
    seed ^ (node as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn time_value(column: &str, t: usize) -> Result<f64> {
    if is_timestamp_column(column) {
        return Ok(START_EPOCH as f64 + t as f64 * STEP_SECONDS);
    }
    let date = NaiveDate::from_ymd_opt(2020, 1, 1)
        .and_then(|d| d.checked_add_days(Days::new(t as u64)))
        .ok_or_else(|| Error::Config("synthetic date range overflow".into()))?;
    use chrono::Datelike;
    Ok(match column {
        "Day" => date.day() as f64,
        "Month" => date.month() as f64,
        _ => date.year() as f64,
    })
}

/// One raw table per schema node. Deterministic in `cfg.seed`.
pub fn generate_synthetic(schema: &DatasetSchema, cfg: &SyntheticConfig) -> Result<Vec<RawTable>> {
    schema.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shapes: Vec<Option<FeatureShape>> = schema
        .feature_names
        .iter()
        .map(|f| {
            (!super::is_time_column(f)).then(|| FeatureShape {
                baseline: rng.random_range(0.0..10.0),
                amplitudes: cfg
                    .periods
                    .iter()
                    .map(|_| rng.random_range(0.5..2.0))
                    .collect(),
                phase: rng.random_range(0.0..2.0 * PI),
            })
        })
        .collect();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    (0..schema.node_count)
        .map(|node| {
            let mut rng = ChaCha8Rng::seed_from_u64(node_seed(cfg.seed, node));
            let offsets: Vec<(f64, f64)> = shapes
                .iter()
                .map(|_| {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    (sign * rng.random_range(0.5..1.5), rng.random_range(-PI..PI))
                })
                .collect();
            let mut rows = Vec::with_capacity(cfg.records_per_node);
            for t in 0..cfg.records_per_node {
                let mut row = Vec::with_capacity(shapes.len());
                for ((name, shape), (db, dphi)) in
                    schema.feature_names.iter().zip(&shapes).zip(&offsets)
                {
                    let Some(shape) = shape else {
                        row.push(time_value(name, t)?);
                        continue;
                    };
                    let scale: f64 = shape.amplitudes.iter().sum();
                    let baseline = shape.baseline + cfg.node_shift_scale * scale * db;
                    let phase = shape.phase + cfg.node_shift_scale * dphi;
                    let seasonal: f64 = cfg
                        .periods
                        .iter()
                        .zip(&shape.amplitudes)
                        .map(|(p, a)| a * (2.0 * PI * t as f64 / p + phase).sin())
                        .sum();
                    let noise = cfg.noise_std * unit.sample(&mut rng);
                    row.push(baseline + seasonal + noise);
                }
                rows.push(row);
            }
            Ok(RawTable {
                columns: schema.feature_names.clone(),
                rows,
            })
        })
        .collect()
}
