use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::window::{make_windows, MinMax, Windows};
use super::RawTable;
use crate::error::{Error, Result};
use crate::models::Samples;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalPolicy {
    #[default]
    Uniform,
    Centroid,
}

/// Proportions of the train split drawn into each personalization subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubsetConfig {
    pub seen: f64,
    pub unseen: f64,
    pub local_fraction: f64,
    pub local_policy: LocalPolicy,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        Self {
            seen: 0.6,
            unseen: 0.2,
            local_fraction: 0.2,
            local_policy: LocalPolicy::Uniform,
        }
    }
}

impl SubsetConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.seen) || !unit(self.unseen) || self.seen + self.unseen > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "seen {} and unseen {} must lie in [0,1] and sum to at most 1",
                self.seen, self.unseen
            )));
        }
        if !(self.local_fraction > 0.0 && self.local_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "local_fraction {} outside (0,1]",
                self.local_fraction
            )));
        }
        Ok(())
    }
}

/// One client's windowed, normalized data and its index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDataset {
    pub node_id: usize,
    /// Normalized `[samples×window_len×features]`.
    pub windows: Tensor,
    /// Normalized `[samples×1]`.
    pub targets: Tensor,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub local: Vec<usize>,
    pub norm: MinMax,
    pub feature_names: Vec<String>,
}

impl NodeDataset {
    pub fn samples(&self) -> Samples<'_> {
        Samples::new(&self.windows, &self.targets).expect("aligned by construction")
    }

    pub fn len(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.windows.shape()[2]
    }

    pub fn window_len(&self) -> usize {
        self.windows.shape()[1]
    }
}

fn rounded(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).min(n)
}

/// Chronological train/test split, train-only normalization and seeded
/// seen/unseen/local subsets of the train split.
pub fn split_node_dataset(
    node_id: usize,
    raw: &Windows,
    ratios: SplitRatios,
    subsets: SubsetConfig,
    seed: u64,
) -> Result<NodeDataset> {
    if !(ratios.train > 0.0 && ratios.test > 0.0 && (ratios.train + ratios.test - 1.0).abs() < 1e-9)
    {
        return Err(Error::Config(format!(
            "split ratios ({}, {}) must be positive and sum to 1",
            ratios.train, ratios.test
        )));
    }
    subsets.validate()?;
    let n = raw.len();
    let n_train = rounded(n, ratios.train);
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "{n} samples give a degenerate split of {n_train} train / {} test",
            n - n_train
        )));
    }
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..n).collect();
    let norm = MinMax::fit(&raw.windows, &raw.targets, &train)?;
    let windows = norm.transform_features(&raw.windows)?;
    let targets = norm.transform_targets(&raw.targets)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = train.clone();
    order.shuffle(&mut rng);
    let n_seen = rounded(n_train, subsets.seen);
    let n_unseen = rounded(n_train, subsets.unseen).min(n_train - n_seen);
    let mut seen = order[..n_seen].to_vec();
    let mut unseen = order[n_seen..n_seen + n_unseen].to_vec();
    seen.sort_unstable();
    unseen.sort_unstable();

    let mut node = NodeDataset {
        node_id,
        windows,
        targets,
        train,
        test,
        seen,
        unseen,
        local: Vec::new(),
        norm,
        feature_names: raw.feature_names.clone(),
    };
    node.local = select_local_subset(
        &node,
        subsets.local_fraction,
        subsets.local_policy,
        seed.wrapping_add(1),
    )?;
    Ok(node)
}

/// Picks `ceil(fraction·|train|)` train indices, sorted ascending.
///
/// `Centroid` keeps the samples whose per-feature window means lie closest
/// to the node-wide mean; ties go to the lower index.
pub fn select_local_subset(
    node: &NodeDataset,
    fraction: f64,
    policy: LocalPolicy,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "local fraction {fraction} outside (0,1]"
        )));
    }
    let n = node.train.len();
    let k = ((n as f64 * fraction).ceil() as usize).min(n);
    if k == 0 {
        return Err(Error::EmptySubset("local".into()));
    }
    let mut picked = match policy {
        LocalPolicy::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = node.train.clone();
            idx.shuffle(&mut rng);
            idx.truncate(k);
            idx
        }
        LocalPolicy::Centroid => {
            let (t, f) = (node.window_len(), node.input_dim());
            let data = node.windows.data();
            let means: Vec<Vec<f64>> = node
                .train
                .iter()
                .map(|&i| {
                    let mut m = vec![0.0; f];
                    for step in data[i * t * f..(i + 1) * t * f].chunks(f) {
                        for (a, v) in m.iter_mut().zip(step) {
                            *a += v / t as f64;
                        }
                    }
                    m
                })
                .collect();
            let mut center = vec![0.0; f];
            for m in &means {
                for (c, v) in center.iter_mut().zip(m) {
                    *c += v / n as f64;
                }
            }
            let mut ranked: Vec<(f64, usize)> = means
                .iter()
                .zip(&node.train)
                .map(|(m, &i)| {
                    (
                        m.iter()
                            .zip(&center)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>(),
                        i,
                    )
                })
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            ranked.into_iter().take(k).map(|(_, i)| i).collect()
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Windowing, splitting and subset parameters for one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub window_len: usize,
    pub horizon: usize,
    pub ratios: SplitRatios,
    pub subsets: SubsetConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_len: 16,
            horizon: 1,
            ratios: SplitRatios::default(),
            subsets: SubsetConfig::default(),
        }
    }
}

/// Raw table to a ready [`NodeDataset`].
pub fn prepare_node(
    node_id: usize,
    table: &RawTable,
    target: &str,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<NodeDataset> {
    let raw = make_windows(table, cfg.window_len, target, cfg.horizon)?;
    split_node_dataset(node_id, &raw, cfg.ratios, cfg.subsets, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(n: usize) -> Windows {
        let table = RawTable {
            columns: vec!["x".into(), "y".into()],
            rows: (0..n + 2)
                .map(|r| vec![(r as f64 * 0.3).sin(), r as f64])
                .collect(),
        };
        make_windows(&table, 2, "y", 1).unwrap()
    }

    #[test]
    fn chronological_split_counts() {
        let d = split_node_dataset(
            0,
            &raw(100),
            SplitRatios::default(),
            SubsetConfig::default(),
            1,
        )
        .unwrap();
        assert_eq!((d.train.len(), d.test.len()), (80, 20));
        assert!(d.test.iter().all(|&t| t > *d.train.last().unwrap()));
        assert_eq!((d.seen.len(), d.unseen.len(), d.local.len()), (48, 16, 16));
        assert!(d.seen.iter().all(|i| !d.unseen.contains(i)));
        assert!(d.local.iter().all(|i| d.train.contains(i)));
        assert!(d
            .windows
            .data()
            .iter()
            .chain(d.targets.data())
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn stats_reproducible_from_train_rows() {
        let r = raw(50);
        let d =
            split_node_dataset(0, &r, SplitRatios::default(), SubsetConfig::default(), 3).unwrap();
        assert_eq!(
            MinMax::fit(&r.windows, &r.targets, &d.train).unwrap(),
            d.norm
        );
        assert_eq!(d.norm.target_max, vec![41.0]);
    }

    #[test]
    fn full_seen_leaves_unseen_empty() {
        let s = SubsetConfig {
            seen: 1.0,
            unseen: 0.0,
            ..Default::default()
        };
        let d = split_node_dataset(0, &raw(40), SplitRatios::default(), s, 0).unwrap();
        assert!(d.unseen.is_empty());
        assert_eq!(d.seen, d.train);
    }

    #[test]
    fn deterministic_masks() {
        let a = split_node_dataset(
            0,
            &raw(60),
            SplitRatios::default(),
            SubsetConfig::default(),
            9,
        )
        .unwrap();
        let b = split_node_dataset(
            0,
            &raw(60),
            SplitRatios::default(),
            SubsetConfig::default(),
            9,
        )
        .unwrap();
        let c = split_node_dataset(
            0,
            &raw(60),
            SplitRatios::default(),
            SubsetConfig::default(),
            10,
        )
        .unwrap();
        assert_eq!(
            (&a.seen, &a.unseen, &a.local),
            (&b.seen, &b.unseen, &b.local)
        );
        assert_ne!(a.seen, c.seen);
    }

    #[test]
    fn bad_ratios() {
        let bad = SplitRatios {
            train: 0.7,
            test: 0.2,
        };
        assert!(split_node_dataset(0, &raw(20), bad, SubsetConfig::default(), 0).is_err());
        let all = SplitRatios {
            train: 0.99,
            test: 0.01,
        };
        assert!(split_node_dataset(0, &raw(20), all, SubsetConfig::default(), 0).is_err());
    }

    #[test]
    fn local_fraction_one_and_centroid_outliers() {
        let d = split_node_dataset(
            0,
            &raw(30),
            SplitRatios::default(),
            SubsetConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(
            select_local_subset(&d, 1.0, LocalPolicy::Centroid, 0).unwrap(),
            d.train
        );
        assert_eq!(
            select_local_subset(&d, 1.0, LocalPolicy::Uniform, 0).unwrap(),
            d.train
        );
        assert!(select_local_subset(&d, 0.0, LocalPolicy::Uniform, 0).is_err());

        let mut rows: Vec<Vec<f64>> = (0..40)
            .map(|r| vec![0.5 + 0.01 * (r % 3) as f64, 1.0])
            .collect();
        for r in [5, 17, 29] {
            rows[r][0] = 9.0;
        }
        let table = RawTable {
            columns: vec!["x".into(), "y".into()],
            rows,
        };
        let w = make_windows(&table, 1, "y", 1).unwrap();
        let all = SubsetConfig {
            local_fraction: 0.5,
            ..Default::default()
        };
        let node = split_node_dataset(
            0,
            &w,
            SplitRatios {
                train: 0.75,
                test: 0.25,
            },
            all,
            0,
        )
        .unwrap();
        let local = select_local_subset(&node, 0.5, LocalPolicy::Centroid, 0).unwrap();
        assert!(![5, 17, 29].iter().any(|o| local.contains(o)));
    }
}
