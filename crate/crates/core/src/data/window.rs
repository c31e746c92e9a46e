use serde::{Deserialize, Serialize};

use super::schema::is_time_column;
use super::RawTable;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sliding windows over the non-time columns of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    /// `[samples×window_len×features]`
    pub windows: Tensor,
    /// `[samples×1]`
    pub targets: Tensor,
    pub feature_names: Vec<String>,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Window `i` holds rows `[i, i+window_len)`; its target is the target
/// column at row `i + window_len + horizon - 1`.
pub fn make_windows(
    table: &RawTable,
    window_len: usize,
    target_name: &str,
    horizon: usize,
) -> Result<Windows> {
    if window_len == 0 || horizon == 0 {
        return Err(Error::InvalidArgument(
            "window_len and horizon must be positive".into(),
        ));
    }
    let inputs: Vec<usize> = (0..table.columns.len())
        .filter(|&i| !is_time_column(&table.columns[i]))
        .collect();
    let target = inputs
        .iter()
        .copied()
        .find(|&i| table.columns[i] == target_name)
        .ok_or_else(|| Error::MissingColumn(target_name.to_string()))?;
    let needed = window_len + horizon;
    if table.len() < needed {
        return Err(Error::TooFewRows {
            rows: table.len(),
            needed,
        });
    }
    let count = table.len() - needed + 1;
    let f = inputs.len();
    let mut data = Vec::with_capacity(count * window_len * f);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        for row in &table.rows[i..i + window_len] {
            data.extend(inputs.iter().map(|&c| row[c]));
        }
        targets.push(table.rows[i + window_len + horizon - 1][target]);
    }
    Ok(Windows {
        windows: Tensor::new(vec![count, window_len, f], data)?,
        targets: Tensor::new(vec![count, 1], targets)?,
        feature_names: inputs.iter().map(|&i| table.columns[i].clone()).collect(),
    })
}

/// Per-feature and per-target min/max fitted on the training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
    pub target_min: Vec<f64>,
    pub target_max: Vec<f64>,
}

fn column_range(
    data: &[f64],
    width: usize,
    rows: impl Iterator<Item = usize>,
    block: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    for r in rows {
        for chunk in data[r * block..(r + 1) * block].chunks(width) {
            for (j, &v) in chunk.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
    }
    (lo, hi)
}

fn scale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn unscale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        v * (hi - lo) + lo
    } else {
        lo
    }
}

impl MinMax {
    pub fn fit(windows: &Tensor, targets: &Tensor, fit_on: &[usize]) -> Result<Self> {
        let ws = windows.shape();
        let ts = targets.shape();
        if ws.len() != 3 || ts.len() != 2 || ws[0] != ts[0] {
            return Err(Error::ShapeMismatch {
                op: "normalize_minmax",
                left: ws.to_vec(),
                right: ts.to_vec(),
            });
        }
        if fit_on.is_empty() {
            return Err(Error::EmptySubset("normalization train split".into()));
        }
        if let Some(&bad) = fit_on.iter().find(|&&i| i >= ws[0]) {
            return Err(Error::InvalidArgument(format!(
                "fit index {bad} out of range {}",
                ws[0]
            )));
        }
        let (feature_min, feature_max) =
            column_range(windows.data(), ws[2], fit_on.iter().copied(), ws[1] * ws[2]);
        let (target_min, target_max) =
            column_range(targets.data(), ts[1], fit_on.iter().copied(), ts[1]);
        Ok(Self {
            feature_min,
            feature_max,
            target_min,
            target_max,
        })
    }

    fn apply(data: &[f64], lo: &[f64], hi: &[f64], f: fn(f64, f64, f64) -> f64) -> Vec<f64> {
        data.chunks(lo.len())
            .flat_map(|c| c.iter().enumerate().map(|(j, &v)| f(v, lo[j], hi[j])))
            .collect()
    }

    /// Scales to `[0,1]`; values outside the fitted range are clipped.
    pub fn transform_features(&self, windows: &Tensor) -> Result<Tensor> {
        let data = Self::apply(windows.data(), &self.feature_min, &self.feature_max, scale);
        Tensor::new(windows.shape().to_vec(), data)
    }

    pub fn transform_targets(&self, targets: &Tensor) -> Result<Tensor> {
        let data = Self::apply(targets.data(), &self.target_min, &self.target_max, scale);
        Tensor::new(targets.shape().to_vec(), data)
    }

    pub fn inverse_features(&self, windows: &Tensor) -> Result<Tensor> {
        let data = Self::apply(
            windows.data(),
            &self.feature_min,
            &self.feature_max,
            unscale,
        );
        Tensor::new(windows.shape().to_vec(), data)
    }

    pub fn inverse_targets(&self, targets: &Tensor) -> Result<Tensor> {
        let data = Self::apply(targets.data(), &self.target_min, &self.target_max, unscale);
        Tensor::new(targets.shape().to_vec(), data)
    }
}

/// Fits on `fit_on` and scales every sample. Constant features map to 0.
pub fn normalize_minmax(
    windows: &Tensor,
    targets: &Tensor,
    fit_on: &[usize],
) -> Result<(Tensor, Tensor, MinMax)> {
    let mm = MinMax::fit(windows, targets, fit_on)?;
    Ok((
        mm.transform_features(windows)?,
        mm.transform_targets(targets)?,
        mm,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: usize) -> RawTable {
        RawTable {
            columns: vec!["DateTime".into(), "a".into(), "y".into()],
            rows: (0..rows)
                .map(|r| vec![r as f64 * 60.0, r as f64, 100.0 + r as f64])
                .collect(),
        }
    }

    #[test]
    fn counts_and_alignment() {
        let w = make_windows(&table(5), 3, "y", 1).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.windows.shape(), &[2, 3, 2]);
        assert_eq!(w.feature_names, vec!["a", "y"]);
        assert_eq!(
            &w.windows.data()[6..],
            &[1.0, 101.0, 2.0, 102.0, 3.0, 103.0]
        );
        assert_eq!(w.targets.data(), &[103.0, 104.0]);
        let h = make_windows(&table(10), 4, "y", 3).unwrap();
        assert_eq!(h.len(), 10 - 4 - 3 + 1);
        assert_eq!(h.targets.data()[0], 106.0);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            make_windows(&table(3), 3, "y", 1),
            Err(Error::TooFewRows { rows: 3, needed: 4 })
        ));
        assert!(matches!(
            make_windows(&table(9), 3, "DateTime", 1),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn hand_values_and_constant() {
        let w = Tensor::new(vec![3, 1, 2], vec![0.0, 7.0, 10.0, 7.0, 5.0, 7.0]).unwrap();
        let t = Tensor::new(vec![3, 1], vec![1.0, 3.0, 2.0]).unwrap();
        let (nw, nt, mm) = normalize_minmax(&w, &t, &[0, 1]).unwrap();
        assert_eq!(nw.data(), &[0.0, 0.0, 1.0, 0.0, 0.5, 0.0]);
        assert_eq!(nt.data(), &[0.0, 1.0, 0.5]);
        assert_eq!(mm.feature_min, vec![0.0, 7.0]);
        assert_eq!(mm.inverse_targets(&nt).unwrap().data(), t.data());
    }

    #[test]
    fn out_of_range_clipped_and_stats_train_only() {
        let w = Tensor::new(vec![3, 1, 1], vec![0.0, 4.0, 9.0]).unwrap();
        let t = Tensor::new(vec![3, 1], vec![0.0, 4.0, -9.0]).unwrap();
        let (nw, nt, mm) = normalize_minmax(&w, &t, &[0, 1]).unwrap();
        assert_eq!(nw.data()[2], 1.0);
        assert_eq!(nt.data()[2], 0.0);
        assert_eq!((mm.feature_max[0], mm.target_min[0]), (4.0, 0.0));
        assert!(normalize_minmax(&w, &t, &[]).is_err());
    }
}
