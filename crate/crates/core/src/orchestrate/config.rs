//! Pipeline configuration file (TOML).
//!
//! ```toml
//! machine_id = "M1"
//! scenario_path = "scenario.toml"   # or an inline [scenario] table
//!
//! [monitor]                         # window, bandwidth, defect_orders, ...
//! [segment]                         # gap_split
//! [cut]                             # idle_power, margin
//! [[metrics]]                       # metric_id, source, operator, cut_only, threshold
//! [thresholds]                      # mode = "learn" | "fixed", values = { nh = 20.0 }
//! [[kpis]]                          # kpi_id, aggregation, source_metric, group_by, ...
//! [[reports]]                       # name, models, formats, [reports.context]
//! [store]                           # dump_raw, sync
//! [runtime]                         # chunk_blocks, queue_capacity
//! ```
//!
//! `docs/config.md` describes every key. [`DEMO_CONFIG`] is a complete example.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::report::ReportSpec;
use crate::aggregate::{Criterion, CutRule, MetricDef, SegmentRule};
use crate::kpi::KpiModel;
use crate::monitor::MonitorConfig;
use crate::synth::{read_scenario, ScenarioScript};

/// The built-in configuration selected by `--config demo`.
pub const DEMO_CONFIG: &str = include_str!("demo.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Learn every needed threshold not fixed in `values`.
    #[default]
    Learn,
    /// Use `values` only.
    Fixed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub mode: ThresholdMode,
    /// Configured thresholds keyed by criterion name.
    pub values: BTreeMap<String, f64>,
}

impl ThresholdConfig {
    pub fn configured(&self) -> Result<BTreeMap<Criterion, f64>, String> {
        self.values
            .iter()
            .map(|(k, v)| {
                let c: Criterion = k.parse()?;
                if !(v.is_finite() && *v > 0.0) {
                    return Err(format!("threshold for {k} must be positive, got {v}"));
                }
                Ok((c, *v))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    /// Also persist raw signal blocks (about 100 kB per 0.1 s).
    pub dump_raw: bool,
    /// fsync after each append.
    pub sync: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            dump_raw: false,
            sync: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    /// Blocks generated and monitored per batch sent to the store.
    pub chunk_blocks: u64,
    /// Capacity of every agent inbox.
    pub queue_capacity: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            chunk_blocks: 600,
            queue_capacity: 4,
        }
    }
}

fn default_machine() -> String {
    "M1".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_machine")]
    pub machine_id: String,
    /// Scenario file, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_path: Option<PathBuf>,
    /// Inline scenario; resolved from `scenario_path` after loading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioScript>,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub segment: SegmentRule,
    #[serde(default)]
    pub cut: CutRule,
    #[serde(default = "MetricDef::defaults")]
    pub metrics: Vec<MetricDef>,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub kpis: Vec<KpiModel>,
    #[serde(default)]
    pub reports: Vec<ReportSpec>,
    #[serde(default)]
    pub store: StoreConfig,
    #[serde(default)]
    pub runtime: RuntimeConfig,
}

impl PipelineConfig {
    /// Loads `source`, which is either a path or `demo`.
    pub fn load(source: &str) -> Result<Self, ConfigError> {
        if source == "demo" {
            return Self::parse(DEMO_CONFIG, Path::new("<demo>"));
        }
        let path = Path::new(source);
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    pub fn demo() -> Self {
        Self::parse(DEMO_CONFIG, Path::new("<demo>")).expect("demo config is valid")
    }

    /// Parses and validates `text`; a `scenario_path` is read relative to `path`.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| crate::synth::line_column(text, s.start))
                .unwrap_or((0, 0));
            ConfigError::Parse {
                path: path.to_path_buf(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let invalid = |message: String| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        };
        match (&cfg.scenario, &cfg.scenario_path) {
            (Some(_), Some(_)) => return Err(invalid("give either scenario or scenario_path, not both".into())),
            (None, None) => return Err(invalid("missing scenario or scenario_path".into())),
            (None, Some(rel)) => {
                let base = path.parent().unwrap_or(Path::new("."));
                let script = read_scenario(&base.join(rel)).map_err(|e| invalid(e.to_string()))?;
                cfg.scenario = Some(script);
            }
            (Some(_), None) => {}
        }
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    pub fn scenario(&self) -> &ScenarioScript {
        self.scenario.as_ref().expect("scenario resolved at load")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Some(s) = self.scenario.as_mut() {
            s.seed = seed;
        }
        self
    }

    /// Checks cross-references between sections.
    pub fn validate(&self) -> Result<(), String> {
        if self.machine_id.trim().is_empty() {
            return Err("machine_id is empty".into());
        }
        let scenario = self.scenario.as_ref().ok_or("scenario not resolved")?;
        scenario.validate().map_err(|e| format!("scenario: {e}"))?;
        self.monitor.validate().map_err(|e| format!("monitor: {e}"))?;
        if !(self.segment.gap_split.is_finite() && self.segment.gap_split >= 0.0) {
            return Err("segment.gap_split must be non-negative".into());
        }
        if !(self.cut.idle_power.is_finite() && self.cut.limit().is_finite()) {
            return Err("cut rule must be finite".into());
        }
        let mut metric_ids = BTreeSet::new();
        for m in &self.metrics {
            if m.metric_id.trim().is_empty() || !metric_ids.insert(m.metric_id.as_str()) {
                return Err(format!("metric id `{}` is empty or duplicated", m.metric_id));
            }
        }
        let configured = self.thresholds.configured().map_err(|e| format!("thresholds: {e}"))?;
        if self.thresholds.mode == ThresholdMode::Fixed {
            for m in self.metrics.iter().filter(|m| m.operator.needs_threshold()) {
                let c = m.threshold_criterion();
                if !configured.contains_key(&c) {
                    return Err(format!("metric {} needs a fixed threshold for {c}", m.metric_id));
                }
            }
        }
        let mut kpi_ids = BTreeSet::new();
        for k in &self.kpis {
            k.validate().map_err(|e| format!("kpi {}: {e}", k.kpi_id))?;
            if !kpi_ids.insert(k.kpi_id.as_str()) {
                return Err(format!("kpi id `{}` duplicated", k.kpi_id));
            }
            if !metric_ids.contains(k.source_metric.as_str()) {
                return Err(format!("kpi {} reads unknown metric `{}`", k.kpi_id, k.source_metric));
            }
        }
        let mut report_names = BTreeSet::new();
        for r in &self.reports {
            r.validate().map_err(|e| format!("report {}: {e}", r.name))?;
            if !report_names.insert(r.name.as_str()) {
                return Err(format!("report name `{}` duplicated", r.name));
            }
            if let Some(missing) = r.models.iter().find(|m| !kpi_ids.contains(m.as_str())) {
                return Err(format!("report {} lists unknown kpi `{missing}`", r.name));
            }
        }
        if self.runtime.chunk_blocks == 0 || self.runtime.queue_capacity == 0 {
            return Err("runtime.chunk_blocks and runtime.queue_capacity must be positive".into());
        }
        Ok(())
    }

    /// Models listed by the report, in its order.
    pub fn models_for(&self, spec: &ReportSpec) -> Vec<KpiModel> {
        spec.models
            .iter()
            .filter_map(|id| self.kpis.iter().find(|k| &k.kpi_id == id).cloned())
            .collect()
    }
}
