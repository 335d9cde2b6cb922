//! Run configuration: TOML parsing, validation and dotted-key overrides
//! for parameter sweeps.
//!
//! Parsing is total: every malformed input comes back as a diagnostic that
//! names the offending key and the violated constraint, never a crash or a
//! partial run.

use thiserror::Error;

use crate::clone::ContentItem;
use crate::scenarios::{
    AbrLadder, AllocationParams, C2cSpec, C2cVariant, CloneParams, MptcpSpec, NetParams,
    SegmentParams, StreamingSpec, TaskParams,
};

pub const BUILTIN_SCENARIOS: &[&str] =
    &["streaming", "c2c", "mptcp", "abr", "offload", "evolved_bs"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config invalid: {key}: {constraint}")]
    Invalid { key: String, constraint: String },
}

impl ConfigError {
    fn invalid(key: &str, constraint: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            constraint: constraint.into(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct C2cConfig {
    pub variant: C2cVariant,
    #[serde(default = "one")]
    pub n_receivers: usize,
    #[serde(default = "default_content_id")]
    pub content_id: String,
    pub content_size: u64,
    #[serde(default = "one")]
    pub repeat_requests: usize,
    #[serde(default)]
    pub distinct_sites: bool,
}

fn one() -> usize {
    1
}

fn default_content_id() -> String {
    "content".to_string()
}

impl C2cConfig {
    pub fn to_spec(&self) -> C2cSpec {
        C2cSpec {
            variant: self.variant,
            n_receivers: self.n_receivers,
            content: ContentItem::new(self.content_id.clone(), self.content_size),
            repeat_requests: self.repeat_requests,
            distinct_sites: self.distinct_sites,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbrConfig {
    pub ladder: Vec<f64>,
    #[serde(default = "default_safety")]
    pub safety_factor: f64,
    /// Override for the rate the clone reads off the base station; defaults
    /// to the configured access-down rate.
    #[serde(default)]
    pub measured_rate: Option<f64>,
}

fn default_safety() -> f64 {
    0.8
}

impl AbrConfig {
    pub fn to_ladder(&self) -> AbrLadder {
        AbrLadder {
            rungs_bps: self.ladder.clone(),
            safety_factor: self.safety_factor,
        }
    }
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub links: NetParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }

    pub fn to_export(self) -> crate::metrics::ExportFormat {
        match self {
            OutputFormat::Csv => crate::metrics::ExportFormat::Csv,
            OutputFormat::Json => crate::metrics::ExportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<String>,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default, rename = "clone")]
    pub clone_params: CloneParams,
    #[serde(default)]
    pub task: Option<TaskParams>,
    #[serde(default)]
    pub tasks: Vec<TaskParams>,
    #[serde(default)]
    pub allocation: Option<AllocationParams>,
    #[serde(default)]
    pub streaming: Option<StreamingSpec>,
    #[serde(default)]
    pub c2c: Option<C2cConfig>,
    #[serde(default)]
    pub mptcp: Option<MptcpSpec>,
    #[serde(default)]
    pub abr: Option<AbrConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Seeds to run: the `seeds` list when given, otherwise the single seed.
    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(list) => list.clone(),
            None => vec![self.seed],
        }
    }

    /// Per-user task list: `tasks` when given, else the single `task`,
    /// else defaults.
    pub fn task_list(&self) -> Vec<TaskParams> {
        if !self.tasks.is_empty() {
            self.tasks.clone()
        } else {
            vec![self.task.unwrap_or_default()]
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !BUILTIN_SCENARIOS.contains(&self.scenario.as_str()) {
            return Err(ConfigError::invalid(
                "scenario",
                format!(
                    "unknown scenario `{}`; expected one of {}",
                    self.scenario,
                    BUILTIN_SCENARIOS.join(", ")
                ),
            ));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(ConfigError::invalid(
                    "seeds",
                    "must be non-empty when given",
                ));
            }
        }

        let links = &self.topology.links;
        validate_segment("topology.links.access_up", &links.access_up)?;
        validate_segment("topology.links.access_down", &links.access_down)?;
        validate_segment("topology.links.fronthaul", &links.fronthaul)?;
        validate_segment("topology.links.backhaul", &links.backhaul)?;
        validate_segment("topology.links.intra_cloud", &links.intra_cloud)?;

        let c = &self.clone_params;
        if !(c.cpu_capacity > 0.0) {
            return Err(ConfigError::invalid("clone.cpu_capacity", "must be > 0"));
        }
        if !(c.cpu_pool > 0.0) {
            return Err(ConfigError::invalid("clone.cpu_pool", "must be > 0"));
        }
        if c.slot_capacity == 0 {
            return Err(ConfigError::invalid("clone.slot_capacity", "must be >= 1"));
        }

        for (i, t) in self.task_list().iter().enumerate() {
            let key = |field: &str| {
                if self.tasks.is_empty() {
                    format!("task.{field}")
                } else {
                    format!("tasks[{i}].{field}")
                }
            };
            if t.data_cached_bits > t.data_total_bits {
                return Err(ConfigError::invalid(&key("S"), "must be <= D"));
            }
            if !(t.local_cpu > 0.0) {
                return Err(ConfigError::invalid(&key("local_cpu"), "must be > 0"));
            }
        }

        if let Some(a) = &self.allocation {
            if !(a.radio_total > 0.0) {
                return Err(ConfigError::invalid(
                    "allocation.radio_total",
                    "must be > 0",
                ));
            }
            if !(a.cloud_total > 0.0) {
                return Err(ConfigError::invalid(
                    "allocation.cloud_total",
                    "must be > 0",
                ));
            }
            if a.grid_steps < 2 {
                return Err(ConfigError::invalid(
                    "allocation.grid_steps",
                    "must be >= 2",
                ));
            }
        }

        match self.scenario.as_str() {
            "streaming" => {
                let s = self
                    .streaming
                    .as_ref()
                    .ok_or_else(|| ConfigError::invalid("streaming", "block required"))?;
                if !(s.bitrate_bps > 0.0) {
                    return Err(ConfigError::invalid("streaming.bitrate", "must be > 0"));
                }
                if !(s.duration_s > 0.0) {
                    return Err(ConfigError::invalid("streaming.duration", "must be > 0"));
                }
                if !(0.0..1.0).contains(&s.wireless_loss) {
                    return Err(ConfigError::invalid(
                        "streaming.wireless_loss",
                        "must be in [0, 1)",
                    ));
                }
                if s.packet_payload == 0 {
                    return Err(ConfigError::invalid(
                        "streaming.packet_payload",
                        "must be >= 1",
                    ));
                }
            }
            "c2c" => {
                let c = self
                    .c2c
                    .as_ref()
                    .ok_or_else(|| ConfigError::invalid("c2c", "block required"))?;
                if c.n_receivers < 1 {
                    return Err(ConfigError::invalid("c2c.n_receivers", "must be >= 1"));
                }
                if c.repeat_requests < 1 {
                    return Err(ConfigError::invalid("c2c.repeat_requests", "must be >= 1"));
                }
                if c.content_size == 0 {
                    return Err(ConfigError::invalid("c2c.content_size", "must be >= 1"));
                }
                if c.variant == C2cVariant::S1OneToOne && c.n_receivers != 1 {
                    return Err(ConfigError::invalid(
                        "c2c.n_receivers",
                        "variant s1_one_to_one implies n_receivers = 1",
                    ));
                }
            }
            "mptcp" => {
                let m = self
                    .mptcp
                    .as_ref()
                    .ok_or_else(|| ConfigError::invalid("mptcp", "block required"))?;
                if m.access_paths.is_empty() {
                    return Err(ConfigError::invalid(
                        "mptcp.access_paths",
                        "must be non-empty",
                    ));
                }
                for (i, p) in m.access_paths.iter().enumerate() {
                    validate_segment(&format!("mptcp.access_paths[{i}]"), p)?;
                }
                validate_segment("mptcp.clone_to_server", &m.clone_to_server)?;
                if m.bytes == 0 {
                    return Err(ConfigError::invalid("mptcp.bytes", "must be >= 1"));
                }
            }
            "abr" => {
                let a = self
                    .abr
                    .as_ref()
                    .ok_or_else(|| ConfigError::invalid("abr", "block required"))?;
                if a.ladder.is_empty() {
                    return Err(ConfigError::invalid("abr.ladder", "must be non-empty"));
                }
                if !a.ladder.windows(2).all(|w| w[0] < w[1]) {
                    return Err(ConfigError::invalid(
                        "abr.ladder",
                        "bitrates must be strictly increasing",
                    ));
                }
                if !(a.safety_factor > 0.0 && a.safety_factor <= 1.0) {
                    return Err(ConfigError::invalid(
                        "abr.safety_factor",
                        "must be in (0, 1]",
                    ));
                }
                if let Some(rate) = a.measured_rate {
                    if !(rate > 0.0) {
                        return Err(ConfigError::invalid("abr.measured_rate", "must be > 0"));
                    }
                }
            }
            "offload" | "evolved_bs" => {}
            _ => unreachable!("scenario checked against the builtin list"),
        }
        Ok(())
    }
}

fn validate_segment(key: &str, p: &SegmentParams) -> Result<(), ConfigError> {
    if !(p.rate_bps > 0.0) {
        return Err(ConfigError::invalid(&format!("{key}.rate"), "must be > 0"));
    }
    if !(p.latency_s >= 0.0) || !p.latency_s.is_finite() {
        return Err(ConfigError::invalid(
            &format!("{key}.latency"),
            "must be finite and >= 0",
        ));
    }
    if !(0.0..1.0).contains(&p.loss_prob) {
        return Err(ConfigError::invalid(
            &format!("{key}.loss"),
            "must be in [0, 1)",
        ));
    }
    Ok(())
}

/// Parse `raw` the way TOML would: bool, integer, float, then string.
fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

/// Re-parse `text` with the dotted `param` replaced by `raw`, e.g.
/// `streaming.wireless_loss = 0.05`. Intermediate tables are created as
/// needed; the resulting config is fully re-validated.
pub fn with_param(text: &str, param: &str, raw: &str) -> Result<RunConfig, ConfigError> {
    let mut doc: toml::Value =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut cursor = &mut doc;
    let parts: Vec<&str> = param.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::invalid(param, "empty path component"));
    }
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| ConfigError::invalid(param, format!("`{part}` is not a table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let last = parts[parts.len() - 1];
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| ConfigError::invalid(param, "parent is not a table"))?;
    table.insert(last.to_string(), parse_scalar(raw));

    let cfg: RunConfig = doc
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STREAMING: &str = r#"
scenario = "streaming"
seed = 7

[streaming]
bitrate = 1508000.0
duration = 60.0
wireless_loss = 0.05
with_clone = true
"#;

    #[test]
    fn parses_a_minimal_streaming_config() {
        let cfg = RunConfig::from_toml_str(STREAMING).unwrap();
        assert_eq!(cfg.scenario, "streaming");
        assert_eq!(cfg.seed, 7);
        let s = cfg.streaming.unwrap();
        assert_eq!(s.bitrate_bps, 1_508_000.0);
        assert_eq!(s.packet_payload, 1500);
    }

    #[test]
    fn out_of_range_loss_names_the_key() {
        let text = STREAMING.replace("wireless_loss = 0.05", "wireless_loss = 1.2");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("streaming.wireless_loss"), "{msg}");
        assert!(msg.contains("[0, 1)"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{STREAMING}\nmystery = 1\n");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("mystery"), "{err}");
    }

    #[test]
    fn unknown_scenario_is_rejected() {
        let err = RunConfig::from_toml_str("scenario = \"quantum\"").unwrap_err();
        assert!(err.to_string().contains("quantum"), "{err}");
    }

    #[test]
    fn missing_required_block_is_reported() {
        let err = RunConfig::from_toml_str("scenario = \"mptcp\"").unwrap_err();
        assert!(err.to_string().contains("mptcp"), "{err}");
    }

    #[test]
    fn sweep_override_rewrites_one_key() {
        let cfg = with_param(STREAMING, "streaming.wireless_loss", "0.1").unwrap();
        assert_eq!(cfg.streaming.unwrap().wireless_loss, 0.1);
        let cfg = with_param(STREAMING, "streaming.with_clone", "false").unwrap();
        assert!(!cfg.streaming.unwrap().with_clone);
        let cfg = with_param(STREAMING, "seed", "12").unwrap();
        assert_eq!(cfg.seed, 12);
    }

    #[test]
    fn sweep_override_is_validated() {
        let err = with_param(STREAMING, "streaming.wireless_loss", "1.5").unwrap_err();
        assert!(err.to_string().contains("streaming.wireless_loss"), "{err}");
    }

    #[test]
    fn task_invariant_is_checked() {
        let text = r#"
scenario = "offload"

[task]
D = 100
S = 200
F = 1000
"#;
        let err = RunConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("task.S"), "{err}");
    }

    #[test]
    fn c2c_config_builds_a_spec() {
        let text = r#"
scenario = "c2c"

[c2c]
variant = "s2_fan_out_via_clones"
n_receivers = 5
content_size = 100000000
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        let spec = cfg.c2c.unwrap().to_spec();
        assert_eq!(spec.variant, C2cVariant::S2FanOutViaClones);
        assert_eq!(spec.n_receivers, 5);
        assert_eq!(spec.content.size, 100_000_000);
    }
}
