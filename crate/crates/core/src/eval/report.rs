use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};

/// Named metric values for one task run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub support: BTreeMap<String, usize>,
    pub seed: u64,
}

impl EvalReport {
    pub fn new(task: &str) -> Self {
        EvalReport {
            task: task.to_string(),
            metrics: BTreeMap::new(),
            support: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    /// Flat `key=value` lines: `task`, `seed`, then `metric.<name>` and
    /// `support.<name>` in key order.
    pub fn to_kv(&self) -> String {
        let mut s = format!("task={}\nseed={}\n", self.task, self.seed);
        for (k, v) in &self.metrics {
            s.push_str(&format!("metric.{k}={v:?}\n"));
        }
        for (k, v) in &self.support {
            s.push_str(&format!("support.{k}={v}\n"));
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let bad = |line: &str| DseError::Invalid(format!("malformed report line {line:?}"));
        let mut report = EvalReport::new("");
        let mut have_task = false;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            if k == "task" {
                report.task = v.to_string();
                have_task = true;
            } else if k == "seed" {
                report.seed = v.parse().map_err(|_| bad(line))?;
            } else if let Some(name) = k.strip_prefix("metric.") {
                report.metrics.insert(name.to_string(), v.parse().map_err(|_| bad(line))?);
            } else if let Some(name) = k.strip_prefix("support.") {
                report.support.insert(name.to_string(), v.parse().map_err(|_| bad(line))?);
            } else {
                return Err(bad(line));
            }
        }
        if !have_task {
            return Err(DseError::Invalid("report has no task line".into()));
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DseError::Invalid(format!("bad report JSON: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn kv_and_json_roundtrip(
            task in "[a-z-]{1,12}",
            seed in any::<u64>(),
            metrics in proptest::collection::btree_map("[A-Za-z0-9-]{1,10}", 0.0f64..=1.0, 0..6),
            support in proptest::collection::btree_map("[a-z_]{1,8}", any::<usize>(), 0..4),
        ) {
            let r = EvalReport { task, metrics, support, seed };
            prop_assert_eq!(EvalReport::from_kv(&r.to_kv()).unwrap(), r.clone());
            prop_assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(EvalReport::from_kv("nonsense").is_err());
        assert!(EvalReport::from_kv("seed=1\n").is_err());
        assert!(EvalReport::from_kv("task=x\nmetric.a=zz\n").is_err());
    }
}
