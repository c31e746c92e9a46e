use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column layout of one dataset family and the number of nodes it spans.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub node_count: usize,
}

const TIMESTAMP_COLUMNS: [&str; 2] = ["DateTime", "eventDate"];
const DATE_PART_COLUMNS: [&str; 3] = ["Day", "Month", "Year"];

/// Timestamp or calendar columns, used for ordering but not as model inputs.
pub fn is_time_column(name: &str) -> bool {
    TIMESTAMP_COLUMNS.contains(&name) || DATE_PART_COLUMNS.contains(&name)
}

pub(crate) fn is_timestamp_column(name: &str) -> bool {
    TIMESTAMP_COLUMNS.contains(&name)
}

impl DatasetSchema {
    pub fn new(name: &str, features: &[&str], target: &str, node_count: usize) -> Result<Self> {
        let s = Self {
            name: name.to_string(),
            feature_names: features.iter().map(|f| f.to_string()).collect(),
            target_name: target.to_string(),
            node_count,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.feature_names.iter().enumerate() {
            if self.feature_names[..i].contains(f) {
                return Err(Error::Config(format!(
                    "duplicate feature `{f}` in schema `{}`",
                    self.name
                )));
            }
        }
        if !self.feature_names.contains(&self.target_name) {
            return Err(Error::MissingColumn(self.target_name.clone()));
        }
        if is_time_column(&self.target_name) {
            return Err(Error::Config(format!(
                "target `{}` is a time column",
                self.target_name
            )));
        }
        if self.node_count == 0 {
            return Err(Error::Config("node_count must be positive".into()));
        }
        Ok(())
    }

    /// Non-time features, in schema order; these form the model input.
    pub fn input_features(&self) -> Vec<String> {
        self.feature_names
            .iter()
            .filter(|f| !is_time_column(f))
            .cloned()
            .collect()
    }

    pub fn with_target(mut self, target: &str) -> Result<Self> {
        self.target_name = target.to_string();
        self.validate()?;
        Ok(self)
    }

    pub fn builtin_names() -> [&'static str; 5] {
        [
            "animal_welfare",
            "animal_feed",
            "electricity_meter",
            "smart_building",
            "dairy_sales",
        ]
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let (features, target, nodes): (&[&str], &str, usize) = match name {
            "animal_welfare" => (
                &[
                    "DateTime",
                    "Air Humidity",
                    "Air Temp",
                    "Ch4",
                    "CO2 Avg",
                    "CO2 Max",
                    "CO2 Min",
                    "Counter",
                    "Dew Point Temp",
                ],
                "Air Temp",
                2,
            ),
            "animal_feed" => (
                &[
                    "DateTime",
                    "Air Humidity",
                    "Air Pressure",
                    "Air Temperature",
                    "Battery",
                    "Counter",
                    "Dew Point Temp",
                    "Volumetric WC",
                    "Soil Temp",
                ],
                "Soil Temp",
                6,
            ),
            "electricity_meter" => (
                &[
                    "eventDate",
                    "VAR_S",
                    "PF_L1",
                    "PF_L2",
                    "VA_S",
                    "PF_L3",
                    "V_L2_N",
                    "VA_L2",
                    "V_L3_N",
                    "VA_L3",
                    "V_L1_N",
                    "VA_L1",
                    "VAR_L3",
                    "VAR_L2",
                    "W_L1",
                    "VAR_L1",
                    "W_L2",
                    "W_L3",
                    "W_S",
                    "Wh_S",
                    "PF_S",
                    "Hz",
                    "A_L2",
                    "A_L3",
                    "A_L1",
                    "VArh_Ind_S",
                    "VArh_Cap_S",
                ],
                "W_S",
                2,
            ),
            "smart_building" => (
                &[
                    "eventDate",
                    "setTemp",
                    "operationMode",
                    "userControl",
                    "fanSpeed",
                    "tempAct",
                    "status",
                    "accumulatedPower",
                    "dimming",
                    "luminance",
                    "temperature",
                    "humidity",
                    "gustWindSpeed",
                    "averageWindSpeed",
                    "airTemperature",
                    "solarRadiation",
                    "airHumidity",
                    "windDirection",
                ],
                "temperature",
                2,
            ),
            "dairy_sales" => (
                &[
                    "Day",
                    "Month",
                    "Year",
                    "Daily Sales",
                    "Daily Sales (Previous Year)",
                    "Daily Sales (percentage difference)",
                    "Daily Sales KG",
                    "Daily Sales KG (Previous Year)",
                    "Daily Sales KG (percentage difference)",
                    "Daily Returns KG",
                    "Daily Returns KG (Previous Year)",
                    "Points of Distribution",
                    "Points of Distribution (Previous Year)",
                ],
                "Daily Sales",
                7,
            ),
            other => return Err(Error::Config(format!("unknown builtin schema `{other}`"))),
        };
        Self::new(name, features, target, nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_node_counts() {
        let counts: Vec<usize> = DatasetSchema::builtin_names()
            .iter()
            .map(|n| DatasetSchema::builtin(n).unwrap().node_count)
            .collect();
        assert_eq!(counts, vec![2, 6, 2, 2, 7]);
    }

    #[test]
    fn input_features_drop_time_columns() {
        let s = DatasetSchema::builtin("dairy_sales").unwrap();
        assert_eq!(s.input_features().len(), 10);
        assert!(!s.input_features().iter().any(|f| is_time_column(f)));
        assert_eq!(
            DatasetSchema::builtin("animal_feed")
                .unwrap()
                .input_features()
                .len(),
            8
        );
    }

    #[test]
    fn invalid_schemas() {
        assert!(DatasetSchema::new("x", &["a", "a"], "a", 1).is_err());
        assert!(matches!(
            DatasetSchema::new("x", &["a"], "b", 1),
            Err(Error::MissingColumn(_))
        ));
        assert!(DatasetSchema::new("x", &["DateTime", "a"], "DateTime", 1).is_err());
        assert!(DatasetSchema::new("x", &["a"], "a", 0).is_err());
        assert!(DatasetSchema::builtin("nope").is_err());
    }
}
