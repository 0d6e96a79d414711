//! Evaluation reports as stable JSON documents.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub task: String,
    pub protocol: String,
    pub metrics: BTreeMap<String, f64>,
    /// Fully resolved configuration the run used.
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub runtime_s: f64,
}

impl MetricsReport {
    pub fn new(task: &str, protocol: &str, seed: u64) -> Self {
        Self {
            version: REPORT_VERSION,
            task: task.to_string(),
            protocol: protocol.to_string(),
            metrics: BTreeMap::new(),
            config: BTreeMap::new(),
            seed,
            runtime_s: 0.0,
        }
    }

    /// Range checks: AUC-family values live in [0,1], error metrics
    /// are nonnegative.
    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, value) in &self.metrics {
            if !value.is_finite() {
                return Err(EvalError::Config(format!("metric {name} is {value}")));
            }
            if name.contains("auc") && !(0.0..=1.0).contains(value) {
                return Err(EvalError::Config(format!(
                    "metric {name} = {value} outside [0,1]"
                )));
            }
            if (name.contains("mse") || name.contains("mad")) && *value < 0.0 {
                return Err(EvalError::Config(format!("metric {name} = {value} negative")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        self.validate()?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| EvalError::Config(format!("report serialization: {e}")))?;
        std::fs::write(path, json).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let report: Self = serde_json::from_str(&text).map_err(|e| {
            EvalError::Config(format!("malformed report {}: {e}", path.display()))
        })?;
        if report.version != REPORT_VERSION {
            return Err(EvalError::Config(format!(
                "report {} has schema version {}, expected {REPORT_VERSION}",
                path.display(),
                report.version
            )));
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let mut report = MetricsReport::new("mortality", "linear", 7);
        report.metrics.insert("auc_roc".into(), 0.81);
        report.metrics.insert("auc_pr".into(), 0.44);
        report.config.insert("lr".into(), "0.1".into());
        report.runtime_s = 1.25;
        report.save(&path).unwrap();
        let loaded = MetricsReport::load(&path).unwrap();
        assert_eq!(loaded.task, "mortality");
        assert_eq!(loaded.metrics["auc_roc"], 0.81);
        assert_eq!(loaded.config["lr"], "0.1");
    }

    #[test]
    fn rejects_out_of_range_metrics_and_bad_versions() {
        let mut report = MetricsReport::new("mortality", "linear", 7);
        report.metrics.insert("auc_roc".into(), 1.5);
        assert!(report.validate().is_err());
        report.metrics.insert("auc_roc".into(), 0.5);
        report.metrics.insert("mse".into(), -0.1);
        assert!(report.validate().is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let mut ok = MetricsReport::new("mortality", "impute", 7);
        ok.metrics.insert("mse".into(), 0.4);
        ok.version = 99;
        std::fs::write(&path, serde_json::to_string(&ok).unwrap()).unwrap();
        assert!(matches!(
            MetricsReport::load(&path),
            Err(EvalError::Config(_))
        ));
    }
}
