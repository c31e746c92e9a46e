//! Forecast error metrics and the per-node comparison report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch {
            op: "metric",
            left: vec![truth.len()],
            right: vec![pred.len()],
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    Ok(truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (t - p).abs())
        .sum::<f64>()
        / truth.len() as f64)
}

pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    Ok(truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (t - p).powi(2))
        .sum::<f64>()
        / truth.len() as f64)
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    mse(truth, pred).map(f64::sqrt)
}

/// Non-finite values become 0.0 with the flag set.
pub fn sanitize(value: f64) -> (f64, bool) {
    if value.is_finite() {
        (value, false)
    } else {
        (0.0, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReportMethod {
    LC,
    FL,
    KD,
    AL,
    LM,
}

impl ReportMethod {
    pub const ALL: [ReportMethod; 5] = [Self::LC, Self::FL, Self::KD, Self::AL, Self::LM];

    pub fn label(self) -> &'static str {
        match self {
            Self::LC => "LC",
            Self::FL => "FL",
            Self::KD => "KD",
            Self::AL => "AL",
            Self::LM => "LM",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MetricKind {
    Mse,
    Mae,
    Rmse,
}

impl MetricKind {
    /// Block order in the CSV report.
    pub const ALL: [MetricKind; 3] = [Self::Mse, Self::Mae, Self::Rmse];

    pub fn label(self) -> &'static str {
        match self {
            Self::Mse => "MSE",
            Self::Mae => "MAE",
            Self::Rmse => "RMSE",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub sanitized: bool,
}

impl Metric {
    fn new(raw: f64) -> Self {
        let (value, sanitized) = sanitize(raw);
        Self { value, sanitized }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub mse: Metric,
    pub mae: Metric,
    pub rmse: Metric,
}

impl MetricValues {
    pub fn evaluate(truth: &[f64], pred: &[f64]) -> Result<Self> {
        Ok(Self {
            mse: Metric::new(mse(truth, pred)?),
            mae: Metric::new(mae(truth, pred)?),
            rmse: Metric::new(rmse(truth, pred)?),
        })
    }

    pub fn get(&self, kind: MetricKind) -> Metric {
        match kind {
            MetricKind::Mse => self.mse,
            MetricKind::Mae => self.mae,
            MetricKind::Rmse => self.rmse,
        }
    }

    fn mean(rows: &[MetricValues]) -> Self {
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricValues) -> Metric| Metric {
            value: rows.iter().map(|r| f(r).value).sum::<f64>() / n,
            sanitized: rows.iter().any(|r| f(r).sanitized),
        };
        Self {
            mse: avg(|r| r.mse),
            mae: avg(|r| r.mae),
            rmse: avg(|r| r.rmse),
        }
    }
}

/// Metric values of one node, indexed by [`ReportMethod::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub node_id: usize,
    pub methods: [Option<MetricValues>; 5],
}

impl NodeRow {
    pub fn new(node_id: usize) -> Self {
        Self {
            node_id,
            methods: [None; 5],
        }
    }

    pub fn set(&mut self, method: ReportMethod, values: MetricValues) {
        self.methods[method.index()] = Some(values);
    }

    pub fn get(&self, method: ReportMethod) -> Option<&MetricValues> {
        self.methods[method.index()].as_ref()
    }
}

/// Node rows plus an average row; a method's average is present only when
/// every node has a value for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nodes: Vec<NodeRow>,
    pub average: [Option<MetricValues>; 5],
}

impl MetricReport {
    pub fn new(nodes: Vec<NodeRow>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument(
                "report needs at least one node".into(),
            ));
        }
        let average = ReportMethod::ALL.map(|m| {
            let rows: Option<Vec<MetricValues>> = nodes.iter().map(|n| n.get(m).copied()).collect();
            rows.map(|r| MetricValues::mean(&r))
        });
        Ok(Self { nodes, average })
    }

    pub fn average(&self, method: ReportMethod) -> Option<&MetricValues> {
        self.average[method.index()].as_ref()
    }

    /// Three blocks (MSE, MAE, RMSE), each with one line per node and an
    /// `Average` line. Missing cells are empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string(), "row".to_string()];
        header.extend(ReportMethod::ALL.iter().map(|m| m.label().to_string()));
        w.write_record(&header)?;
        let cell = |v: Option<&MetricValues>, k: MetricKind| {
            v.map(|v| v.get(k).value.to_string()).unwrap_or_default()
        };
        for kind in MetricKind::ALL {
            for node in &self.nodes {
                let mut rec = vec![kind.label().to_string(), format!("Node{}", node.node_id)];
                rec.extend(ReportMethod::ALL.iter().map(|&m| cell(node.get(m), kind)));
                w.write_record(&rec)?;
            }
            let mut rec = vec![kind.label().to_string(), "Average".to_string()];
            rec.extend(
                ReportMethod::ALL
                    .iter()
                    .map(|&m| cell(self.average(m), kind)),
            );
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join("report.csv");
        let json_path = dir.join("report.json");
        std::fs::write(&csv_path, self.to_csv()?)?;
        std::fs::write(&json_path, self.to_json()?)?;
        Ok(vec![csv_path, json_path])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let (t, p) = ([0.0, 2.0], [1.0, 0.0]);
        assert_eq!(mae(&t, &p).unwrap(), 1.5);
        assert_eq!(mse(&t, &p).unwrap(), 2.5);
        assert_eq!(rmse(&t, &p).unwrap(), 2.5f64.sqrt());
        assert!((rmse(&t, &p).unwrap() - 1.58114).abs() < 1e-5);
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
        assert_eq!(mae(&p, &p).unwrap(), 0.0);
        assert_eq!(rmse(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn length_errors() {
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(matches!(mse(&[], &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn sanitize_values() {
        assert_eq!(sanitize(f64::INFINITY), (0.0, true));
        assert_eq!(sanitize(f64::NEG_INFINITY), (0.0, true));
        assert_eq!(sanitize(f64::NAN), (0.0, true));
        assert_eq!(sanitize(0.37), (0.37, false));
        let v = MetricValues::evaluate(&[1e200, 0.0], &[-1e200, 0.0]).unwrap();
        assert!(v.mse.sanitized && v.rmse.sanitized && !v.mae.sanitized);
    }

    fn report() -> MetricReport {
        let mut rows = Vec::new();
        for n in 0..2 {
            let mut r = NodeRow::new(n);
            for (k, m) in ReportMethod::ALL.iter().enumerate() {
                let p = [0.1 * (k + n) as f64, 0.3];
                r.set(*m, MetricValues::evaluate(&[0.0, 0.2], &p).unwrap());
            }
            rows.push(r);
        }
        MetricReport::new(rows).unwrap()
    }

    #[test]
    fn csv_layout() {
        let csv = report().to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "metric,row,LC,FL,KD,AL,LM");
        assert_eq!(lines.len(), 1 + 3 * 3);
        assert!(lines[1].starts_with("MSE,Node0,"));
        assert!(lines[3].starts_with("MSE,Average,"));
        assert!(lines[9].starts_with("RMSE,Average,"));
    }

    #[test]
    fn average_and_missing() {
        let r = report();
        let avg = r.average(ReportMethod::KD).unwrap().mse.value;
        let manual = (r.nodes[0].get(ReportMethod::KD).unwrap().mse.value
            + r.nodes[1].get(ReportMethod::KD).unwrap().mse.value)
            / 2.0;
        assert!((avg - manual).abs() < 1e-12);
        let mut partial = r.nodes.clone();
        partial[1].methods[ReportMethod::AL.index()] = None;
        let p = MetricReport::new(partial).unwrap();
        assert!(p.average(ReportMethod::AL).is_none());
        assert_eq!(
            p.to_csv()
                .unwrap()
                .lines()
                .nth(3)
                .unwrap()
                .split(',')
                .nth(5),
            Some("")
        );
        assert!(MetricReport::new(vec![]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let r = report();
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
