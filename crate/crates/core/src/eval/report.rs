//! Named scalar metric reports, serializable to JSON and to an aligned plain
//! text table. Ordered maps keep serialization byte-reproducible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub family: String,
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
    pub config: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(family: &str) -> MetricReport {
        MetricReport {
            family: family.to_string(),
            metrics: BTreeMap::new(),
            counts: BTreeMap::new(),
            config: BTreeMap::new(),
        }
    }

    /// Every reported metric must be finite.
    pub fn insert(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "metric {name} is not finite: {value}"
            )));
        }
        self.metrics.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn set_count(&mut self, name: &str, count: u64) {
        self.counts.insert(name.to_string(), count);
    }

    pub fn count(&self, name: &str) -> Option<u64> {
        self.counts.get(name).copied()
    }

    pub fn set_config(&mut self, key: &str, value: &str) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<MetricReport> {
        serde_json::from_str(s)
            .map_err(|e| Error::InvalidParameter(format!("bad report json: {e}")))
    }

    /// Aligned two-column table for terminal output.
    pub fn to_table(&self) -> String {
        let width = self
            .metrics
            .keys()
            .chain(self.counts.keys())
            .map(|k| k.len())
            .max()
            .unwrap_or(8)
            .max(8);
        let mut out = String::new();
        out.push_str(&format!("[{}]\n", self.family));
        for (k, v) in &self.metrics {
            out.push_str(&format!("  {k:<width$}  {v:.9}\n"));
        }
        for (k, v) in &self.counts {
            out.push_str(&format!("  {k:<width$}  {v}\n"));
        }
        if !self.config.is_empty() {
            out.push_str("  --\n");
            for (k, v) in &self.config {
                out.push_str(&format!("  {k:<width$}  {v}\n"));
            }
        }
        out
    }
}
