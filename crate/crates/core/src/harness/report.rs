use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Precision, SeededRng};

pub const REPORT_SCHEMA: u32 = 1;

/// Hex SHA-256 of configuration bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub precision: Precision,
    pub rng: String,
    pub workers: usize,
}

/// JSON report emitted by every evaluation: named finite metrics, named
/// pass/fail checks and the provenance needed to reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: u32,
    pub command: String,
    pub provenance: Provenance,
    pub metrics: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
}

impl MetricsReport {
    pub fn new(command: &str, seed: u64, config_text: &str) -> Self {
        MetricsReport {
            schema: REPORT_SCHEMA,
            command: command.to_string(),
            provenance: Provenance {
                seed,
                config_hash: config_hash(config_text.as_bytes()),
                precision: Precision::Double,
                rng: SeededRng::ALGORITHM.to_string(),
                workers: rayon::current_num_threads(),
            },
            metrics: BTreeMap::new(),
            checks: BTreeMap::new(),
        }
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.provenance.precision = precision;
        self
    }

    /// Records a metric; non-finite values are rejected.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("metric {name} = {value}")));
        }
        self.metrics.insert(name.to_string(), value);
        Ok(())
    }

    pub fn check(&mut self, name: &str, passed: bool) {
        self.checks.insert(name.to_string(), passed);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.values().all(|&p| p)
    }

    /// Folds another report's metrics and checks in under `prefix.`.
    pub fn absorb(&mut self, prefix: &str, other: &MetricsReport) {
        for (k, v) in &other.metrics {
            self.metrics.insert(format!("{prefix}.{k}"), *v);
        }
        for (k, v) in &other.checks {
            self.checks.insert(format!("{prefix}.{k}"), *v);
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_sha256() {
        assert_eq!(config_hash(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn json_shape() {
        let mut r = MetricsReport::new("selftest", 7, "seed = 7");
        r.set("a", 1.5).unwrap();
        assert!(r.set("b", f64::NAN).is_err());
        r.check("ok", true);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["provenance"]["seed"], 7);
        assert_eq!(v["provenance"]["precision"], "double");
        assert_eq!(v["metrics"]["a"], 1.5);
        assert!(r.all_passed());
    }
}
