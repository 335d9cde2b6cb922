//! Per-run counters and report serialization.
//!
//! Counter keys come from a fixed namespace; recording under any other key
//! is an internal error. Reads of never-recorded keys yield zero; exports
//! contain only recorded keys, so an empty report serializes to a bare CSV
//! header. Real values are rounded to six decimals in both formats, which
//! keeps CSV and JSON exports equal key-by-key and makes golden-file diffs
//! bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

pub mod keys {
    pub const BYTES_ACCESS_UP_FIRST_TX: &str = "bytes.access_up.first_tx";
    pub const BYTES_ACCESS_UP_RETRANSMIT: &str = "bytes.access_up.retransmit";
    pub const BYTES_ACCESS_DOWN_FIRST_TX: &str = "bytes.access_down.first_tx";
    pub const BYTES_ACCESS_DOWN_RETRANSMIT: &str = "bytes.access_down.retransmit";
    pub const BYTES_FRONTHAUL_FIRST_TX: &str = "bytes.fronthaul.first_tx";
    pub const BYTES_FRONTHAUL_RETRANSMIT: &str = "bytes.fronthaul.retransmit";
    pub const BYTES_BACKHAUL_FIRST_TX: &str = "bytes.backhaul.first_tx";
    pub const BYTES_BACKHAUL_RETRANSMIT: &str = "bytes.backhaul.retransmit";
    pub const BYTES_INTRA_CLOUD_FIRST_TX: &str = "bytes.intra_cloud.first_tx";
    pub const BYTES_INTRA_CLOUD_RETRANSMIT: &str = "bytes.intra_cloud.retransmit";
    pub const TIME_TASK_FINISH: &str = "time.task.finish";
    pub const TIME_STREAM_COMPLETION: &str = "time.stream.completion";
    pub const COUNT_SPAWN: &str = "count.spawn";
    pub const COUNT_DESTROY: &str = "count.destroy";
    pub const COUNT_MIGRATE: &str = "count.migrate";
    pub const COUNT_CACHE_HIT: &str = "count.cache.hit";
    pub const COUNT_CACHE_MISS: &str = "count.cache.miss";
    pub const COUNT_OFFLOAD_LOCAL: &str = "count.offload.local";
    pub const COUNT_OFFLOAD_REMOTE: &str = "count.offload.remote";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueKind {
    Int,
    Real,
}

/// The full counter namespace. `sweep.*` metadata keys are reserved for the
/// sweep driver and attached via [`MetricsReport::set_sweep_meta`].
const NAMESPACE: &[(&str, ValueKind)] = &[
    (keys::BYTES_ACCESS_UP_FIRST_TX, ValueKind::Int),
    (keys::BYTES_ACCESS_UP_RETRANSMIT, ValueKind::Int),
    (keys::BYTES_ACCESS_DOWN_FIRST_TX, ValueKind::Int),
    (keys::BYTES_ACCESS_DOWN_RETRANSMIT, ValueKind::Int),
    (keys::BYTES_FRONTHAUL_FIRST_TX, ValueKind::Int),
    (keys::BYTES_FRONTHAUL_RETRANSMIT, ValueKind::Int),
    (keys::BYTES_BACKHAUL_FIRST_TX, ValueKind::Int),
    (keys::BYTES_BACKHAUL_RETRANSMIT, ValueKind::Int),
    (keys::BYTES_INTRA_CLOUD_FIRST_TX, ValueKind::Int),
    (keys::BYTES_INTRA_CLOUD_RETRANSMIT, ValueKind::Int),
    (keys::TIME_TASK_FINISH, ValueKind::Real),
    (keys::TIME_STREAM_COMPLETION, ValueKind::Real),
    (keys::COUNT_SPAWN, ValueKind::Int),
    (keys::COUNT_DESTROY, ValueKind::Int),
    (keys::COUNT_MIGRATE, ValueKind::Int),
    (keys::COUNT_CACHE_HIT, ValueKind::Int),
    (keys::COUNT_CACHE_MISS, ValueKind::Int),
    (keys::COUNT_OFFLOAD_LOCAL, ValueKind::Int),
    (keys::COUNT_OFFLOAD_REMOTE, ValueKind::Int),
];

fn kind_of(key: &str) -> Option<ValueKind> {
    NAMESPACE.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("internal error: counter key `{0}` is not in the metrics namespace")]
    UnknownKey(String),
    #[error("internal error: negative delta for counter `{0}`")]
    NegativeDelta(String),
    #[error("internal error: value kind mismatch for counter `{0}`")]
    KindMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Int(u64),
    Real(f64),
}

impl MetricValue {
    pub fn as_f64(self) -> f64 {
        match self {
            MetricValue::Int(v) => v as f64,
            MetricValue::Real(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Deterministic counters for one run, immutable once the run finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    counters: BTreeMap<&'static str, MetricValue>,
    sweep_meta: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn new(scenario: impl Into<String>, seed: u64) -> Self {
        MetricsReport {
            scenario: scenario.into(),
            seed,
            counters: BTreeMap::new(),
            sweep_meta: BTreeMap::new(),
        }
    }

    /// Add `delta` to a namespace counter. Unknown keys are a programming
    /// bug, reported as [`MetricsError::UnknownKey`].
    pub fn record(&mut self, key: &str, delta: MetricValue) -> Result<(), MetricsError> {
        let Some((canon, kind)) = NAMESPACE.iter().find(|(k, _)| *k == key) else {
            return Err(MetricsError::UnknownKey(key.to_string()));
        };
        match (kind, delta) {
            (ValueKind::Int, MetricValue::Int(d)) => {
                let cur = match self.counters.get(canon) {
                    Some(MetricValue::Int(v)) => *v,
                    _ => 0,
                };
                self.counters.insert(canon, MetricValue::Int(cur + d));
                Ok(())
            }
            (ValueKind::Real, MetricValue::Real(d)) => {
                if d < 0.0 {
                    return Err(MetricsError::NegativeDelta(key.to_string()));
                }
                let cur = match self.counters.get(canon) {
                    Some(MetricValue::Real(v)) => *v,
                    _ => 0.0,
                };
                self.counters.insert(canon, MetricValue::Real(cur + d));
                Ok(())
            }
            _ => Err(MetricsError::KindMismatch(key.to_string())),
        }
    }

    pub fn add_bytes(&mut self, key: &str, bytes: u64) {
        self.record(key, MetricValue::Int(bytes)).expect("byte key");
    }

    pub fn add_count(&mut self, key: &str) {
        self.record(key, MetricValue::Int(1)).expect("count key");
    }

    pub fn add_time(&mut self, key: &str, seconds: f64) {
        self.record(key, MetricValue::Real(seconds))
            .expect("time key");
    }

    /// Current value of a counter; never-recorded keys read as zero.
    pub fn value(&self, key: &str) -> MetricValue {
        match self.counters.get(key) {
            Some(v) => *v,
            None => match kind_of(key) {
                Some(ValueKind::Real) => MetricValue::Real(0.0),
                _ => MetricValue::Int(0),
            },
        }
    }

    pub fn int(&self, key: &str) -> u64 {
        match self.value(key) {
            MetricValue::Int(v) => v,
            MetricValue::Real(_) => panic!("counter `{key}` is real-valued"),
        }
    }

    pub fn real(&self, key: &str) -> f64 {
        self.value(key).as_f64()
    }

    /// Attach sweep metadata; serialized under the reserved `sweep.` prefix.
    pub fn set_sweep_meta(&mut self, param: &str, value: impl Into<String>) {
        self.sweep_meta
            .insert(format!("sweep.{param}"), value.into());
    }

    fn rows(&self) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = self
            .counters
            .iter()
            .map(|(k, v)| (k.to_string(), format_value(*v)))
            .collect();
        rows.extend(self.sweep_meta.iter().map(|(k, v)| (k.clone(), v.clone())));
        rows.sort();
        rows
    }

    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Csv => self.export_csv(),
            ExportFormat::Json => self.export_json(),
        }
    }

    /// Long-format CSV: `scenario,seed,key,value`, rows sorted by key.
    pub fn export_csv(&self) -> String {
        let mut out = String::from("scenario,seed,key,value\n");
        for (key, value) in self.rows() {
            writeln!(out, "{},{},{},{}", self.scenario, self.seed, key, value).unwrap();
        }
        out
    }

    /// JSON mirror: same keys and formatting under a flat `counters` object.
    pub fn export_json(&self) -> String {
        let mut counters = serde_json::Map::new();
        for (key, value) in self.rows() {
            let jv = match value.parse::<u64>() {
                Ok(i) => serde_json::Value::from(i),
                Err(_) => match value.parse::<f64>() {
                    Ok(f) => serde_json::Value::from(f),
                    Err(_) => serde_json::Value::from(value),
                },
            };
            counters.insert(key, jv);
        }
        let doc = serde_json::json!({
            "scenario": self.scenario,
            "seed": self.seed,
            "counters": counters,
        });
        serde_json::to_string_pretty(&doc).expect("json export")
    }
}

fn format_value(v: MetricValue) -> String {
    match v {
        MetricValue::Int(i) => i.to_string(),
        MetricValue::Real(r) => format!("{r:.6}"),
    }
}
