//! Level 3: KPI models and decision-aid indicators.
//!
//! A [`KpiModel`] groups smart data by an entity (tool, program, workpiece or
//! machine) and reduces each group to one number. A [`DecisionAidIndicator`]
//! is a set of models instantiated under an [`InstantiationContext`]: what the
//! decision is for, who reads it, which data are in scope, and when it is
//! produced.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::{SmartDatum, ToolUsagePeriod};

const EPS: f64 = 1e-9;

/// Group label used when a period has no program or workpiece.
pub const UNASSIGNED: &str = "unassigned";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KpiError {
    #[error("kpi model has an empty id")]
    EmptyId,
    #[error("{aggregation} needs weights")]
    MissingWeights { aggregation: Aggregation },
    #[error("no weight for {entity}")]
    MissingWeight { entity: String },
    #[error("baseline_comparison needs a baseline")]
    MissingBaseline,
    #[error("invalid baseline: {0}")]
    InvalidBaseline(String),
    #[error("weight for {entity} is not finite")]
    NonFiniteWeight { entity: String },
    #[error("kpi value for {entity} is not finite")]
    NonFinite { entity: String },
    #[error("invalid scope: {0}")]
    InvalidScope(String),
    #[error("invalid mode: {0}")]
    InvalidMode(String),
    #[error("no kpi models to instantiate")]
    NoModels,
    #[error("smart datum references unknown period {0}")]
    UnknownPeriod(String),
    #[error("kpi {kpi_id}: {source}")]
    Model {
        kpi_id: String,
        #[source]
        source: Box<KpiError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Tool,
    Program,
    Workpiece,
    Machine,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Tool => "tool",
            EntityKind::Program => "program",
            EntityKind::Workpiece => "workpiece",
            EntityKind::Machine => "machine",
        }
    }

    /// Entities a period contributes to. Multi-program periods count fully for each program.
    pub fn entities(self, period: &ToolUsagePeriod) -> Vec<&str> {
        let set = match self {
            EntityKind::Tool => return vec![&period.tool_id],
            EntityKind::Machine => return vec![&period.machine_id],
            EntityKind::Program => &period.programs,
            EntityKind::Workpiece => &period.workpieces,
        };
        if set.is_empty() {
            vec![UNASSIGNED]
        } else {
            set.iter().map(String::as_str).collect()
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Mean,
    /// Group sum multiplied by the group's weight.
    WeightedSum,
    /// Group mean multiplied by the group's weight.
    WeightedMean,
    /// Group mean divided by the group's usual value.
    BaselineComparison,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
            Aggregation::WeightedSum => "weighted_sum",
            Aggregation::WeightedMean => "weighted_mean",
            Aggregation::BaselineComparison => "baseline_comparison",
        })
    }
}

/// Usual value a baseline comparison divides by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Baseline {
    /// One reference value for every entity.
    Value { value: f64 },
    /// Per-entity mean of the metric over a past window, resolved at instantiation.
    HistoricalMean { from: f64, to: f64 },
    /// Explicit per-entity reference values.
    PerEntity { values: BTreeMap<String, f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpiModel {
    pub kpi_id: String,
    pub aggregation: Aggregation,
    /// Smart-data metric the model reads.
    pub source_metric: String,
    pub group_by: EntityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Baseline>,
}

impl KpiModel {
    pub fn new(kpi_id: &str, aggregation: Aggregation, source_metric: &str, group_by: EntityKind) -> Self {
        Self {
            kpi_id: kpi_id.to_string(),
            aggregation,
            source_metric: source_metric.to_string(),
            group_by,
            weights: None,
            baseline: None,
        }
    }

    pub fn validate(&self) -> Result<(), KpiError> {
        if self.kpi_id.trim().is_empty() {
            return Err(KpiError::EmptyId);
        }
        if matches!(self.aggregation, Aggregation::WeightedSum | Aggregation::WeightedMean) {
            let weights = self.weights.as_ref().ok_or(KpiError::MissingWeights {
                aggregation: self.aggregation,
            })?;
            if let Some((entity, _)) = weights.iter().find(|(_, w)| !w.is_finite()) {
                return Err(KpiError::NonFiniteWeight { entity: entity.clone() });
            }
        }
        if self.aggregation == Aggregation::BaselineComparison {
            match self.baseline.as_ref().ok_or(KpiError::MissingBaseline)? {
                Baseline::Value { value } if !(value.is_finite() && *value > 0.0) => {
                    return Err(KpiError::InvalidBaseline(format!("value {value} must be positive")));
                }
                Baseline::HistoricalMean { from, to } if !(from.is_finite() && to.is_finite() && from < to) => {
                    return Err(KpiError::InvalidBaseline(format!("empty window [{from}, {to})")));
                }
                Baseline::PerEntity { values } => {
                    if let Some((e, v)) = values.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                        return Err(KpiError::InvalidBaseline(format!("{e}: {v} must be positive")));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Half-open time interval `[from, to)` in scenario seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRange {
    pub from: f64,
    pub to: f64,
}

impl TimeRange {
    pub fn new(from: f64, to: f64) -> Self {
        Self { from, to }
    }

    pub fn validate(&self) -> Result<(), KpiError> {
        if !(self.from.is_finite() && self.to.is_finite()) || self.from >= self.to {
            return Err(KpiError::InvalidScope(format!(
                "time range [{}, {}) is empty",
                self.from, self.to
            )));
        }
        Ok(())
    }

    pub fn contains(&self, t: f64) -> bool {
        self.from <= t && t < self.to
    }

    pub fn intersect(&self, other: &TimeRange) -> TimeRange {
        TimeRange::new(self.from.max(other.from), self.to.min(other.to))
    }
}

/// Entity and time filter; every present dimension must match.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScopeFilter {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub machine: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workpiece: Option<String>,
    /// A period is in range when its start time is.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRange>,
}

impl ScopeFilter {
    pub fn validate(&self) -> Result<(), KpiError> {
        for (name, v) in [
            ("machine", &self.machine),
            ("tool", &self.tool),
            ("program", &self.program),
            ("workpiece", &self.workpiece),
        ] {
            if v.as_deref().is_some_and(|s| s.trim().is_empty()) {
                return Err(KpiError::InvalidScope(format!("empty {name} filter")));
            }
        }
        self.time_range.as_ref().map_or(Ok(()), TimeRange::validate)
    }

    pub fn matches(&self, p: &ToolUsagePeriod) -> bool {
        self.machine.as_ref().is_none_or(|m| *m == p.machine_id)
            && self.tool.as_ref().is_none_or(|t| *t == p.tool_id)
            && self.program.as_ref().is_none_or(|x| p.programs.contains(x))
            && self.workpiece.as_ref().is_none_or(|w| p.workpieces.contains(w))
            && self.time_range.is_none_or(|r| r.contains(p.t_i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Mode {
    /// Every `period` seconds of scenario time.
    Periodic { period: f64 },
    /// At each requested scenario time.
    OnDemand { requests: Vec<f64> },
    /// When a newly written datum of `metric_id` exceeds `threshold`.
    OnEvent { metric_id: String, threshold: f64 },
}

impl Mode {
    pub fn validate(&self) -> Result<(), KpiError> {
        match self {
            Mode::Periodic { period } if !(period.is_finite() && *period > 0.0) => {
                Err(KpiError::InvalidMode(format!("period {period} must be positive")))
            }
            Mode::OnDemand { requests } if requests.is_empty() => {
                Err(KpiError::InvalidMode("on_demand needs at least one request".into()))
            }
            Mode::OnDemand { requests } if requests.iter().any(|t| !t.is_finite()) => {
                Err(KpiError::InvalidMode("non-finite request time".into()))
            }
            Mode::OnEvent { metric_id, .. } if metric_id.trim().is_empty() => {
                Err(KpiError::InvalidMode("on_event needs a metric id".into()))
            }
            Mode::OnEvent { threshold, .. } if !threshold.is_finite() => {
                Err(KpiError::InvalidMode("non-finite event threshold".into()))
            }
            _ => Ok(()),
        }
    }
}

/// The four parameters that turn KPI models into a decision-aid indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstantiationContext {
    pub objective: String,
    pub decider: String,
    #[serde(default)]
    pub scope: ScopeFilter,
    pub mode: Mode,
}

impl InstantiationContext {
    pub fn validate(&self) -> Result<(), KpiError> {
        self.scope.validate()?;
        self.mode.validate()
    }
}

/// A smart datum joined with the period it summarises.
#[derive(Debug, Clone, PartialEq)]
pub struct ScopedDatum {
    pub period: Arc<ToolUsagePeriod>,
    pub datum: SmartDatum,
}

/// Attaches each datum to its period.
pub fn join_periods(periods: &[ToolUsagePeriod], data: &[SmartDatum]) -> Result<Vec<ScopedDatum>, KpiError> {
    let by_id: HashMap<&str, Arc<ToolUsagePeriod>> = periods
        .iter()
        .map(|p| (p.period_id.as_str(), Arc::new(p.clone())))
        .collect();
    data.iter()
        .map(|d| {
            let period = by_id
                .get(d.period_id.as_str())
                .ok_or_else(|| KpiError::UnknownPeriod(d.period_id.clone()))?;
            Ok(ScopedDatum {
                period: Arc::clone(period),
                datum: d.clone(),
            })
        })
        .collect()
}

/// Data whose period matches every dimension of `scope`, in input order.
pub fn select_scope(data: &[ScopedDatum], scope: &ScopeFilter) -> Result<Vec<ScopedDatum>, KpiError> {
    scope.validate()?;
    Ok(data.iter().filter(|d| scope.matches(&d.period)).cloned().collect())
}

fn group_values<'a>(model: &KpiModel, data: &'a [ScopedDatum]) -> BTreeMap<&'a str, Vec<f64>> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for d in data.iter().filter(|d| d.datum.metric_id == model.source_metric) {
        let Some(v) = d.datum.value else { continue };
        for e in model.group_by.entities(&d.period) {
            groups.entry(e).or_default().push(v);
        }
    }
    groups
}

fn mean(vs: &[f64]) -> f64 {
    vs.iter().sum::<f64>() / vs.len() as f64
}

/// Evaluates one model over scope-filtered data.
///
/// Data without a value are skipped. A `historical_mean` baseline must be
/// resolved first (see [`instantiate`]).
pub fn evaluate_kpi(model: &KpiModel, data: &[ScopedDatum]) -> Result<BTreeMap<String, f64>, KpiError> {
    model.validate()?;
    let groups = group_values(model, data);
    let mut out = BTreeMap::new();
    for (entity, vs) in &groups {
        let weight = || {
            model
                .weights
                .as_ref()
                .and_then(|w| w.get(*entity))
                .copied()
                .ok_or_else(|| KpiError::MissingWeight { entity: entity.to_string() })
        };
        let value = match model.aggregation {
            Aggregation::Sum => vs.iter().sum(),
            Aggregation::Mean => mean(vs),
            Aggregation::WeightedSum => weight()? * vs.iter().sum::<f64>(),
            Aggregation::WeightedMean => weight()? * mean(vs),
            Aggregation::BaselineComparison => {
                let reference = match model.baseline.as_ref() {
                    Some(Baseline::Value { value }) => Some(*value),
                    Some(Baseline::PerEntity { values }) => values.get(*entity).copied(),
                    Some(Baseline::HistoricalMean { .. }) => {
                        return Err(KpiError::InvalidBaseline("historical mean not resolved".into()))
                    }
                    None => return Err(KpiError::MissingBaseline),
                };
                match reference {
                    Some(r) => mean(vs) / r,
                    None => continue,
                }
            }
        };
        if !value.is_finite() {
            return Err(KpiError::NonFinite { entity: entity.to_string() });
        }
        out.insert(entity.to_string(), value);
    }
    Ok(out)
}

/// When an indicator is produced and which time window it covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    /// Scenario time, s.
    pub at: f64,
    /// Window intersected with the scope's time range; `None` keeps the scope as is.
    pub window: Option<TimeRange>,
}

/// Scenario time span a schedule is laid over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clock {
    pub start: f64,
    pub end: f64,
}

/// Instantiation triggers for `mode` over `clock`.
///
/// Periodic triggers fall at `start + k·period ≤ end` for k ≥ 1, each covering
/// the preceding period. On-event triggers fire at the end of every period
/// whose datum of the named metric exceeds the threshold.
pub fn schedule(mode: &Mode, clock: Clock, events: &[ScopedDatum]) -> Result<Vec<Trigger>, KpiError> {
    mode.validate()?;
    if !(clock.start.is_finite() && clock.end.is_finite()) {
        return Err(KpiError::InvalidMode("non-finite clock".into()));
    }
    Ok(match mode {
        Mode::Periodic { period } => {
            let mut out = Vec::new();
            let mut k = 1u64;
            loop {
                let at = clock.start + k as f64 * period;
                if at > clock.end + EPS * period {
                    break;
                }
                out.push(Trigger {
                    at,
                    window: Some(TimeRange::new(at - period, at)),
                });
                k += 1;
            }
            out
        }
        Mode::OnDemand { requests } => requests.iter().map(|&at| Trigger { at, window: None }).collect(),
        Mode::OnEvent { metric_id, threshold } => {
            let mut at: Vec<f64> = events
                .iter()
                .filter(|d| &d.datum.metric_id == metric_id && d.datum.value.is_some_and(|v| v > *threshold))
                .map(|d| d.period.t_f)
                .collect();
            at.sort_by(f64::total_cmp);
            at.dedup();
            at.into_iter().map(|at| Trigger { at, window: None }).collect()
        }
    })
}

/// Values of one model inside an indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiResult {
    pub kpi_id: String,
    pub group_by: EntityKind,
    pub source_metric: String,
    pub aggregation: Aggregation,
    pub values: BTreeMap<String, f64>,
}

impl KpiResult {
    /// Entities by descending value, ties by name.
    pub fn ranking(&self) -> Vec<(&str, f64)> {
        rank(&self.values)
    }
}

/// Entities by descending value, ties by name.
pub fn rank(values: &BTreeMap<String, f64>) -> Vec<(&str, f64)> {
    let mut v: Vec<(&str, f64)> = values.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionAidIndicator {
    pub indicator_id: String,
    pub context: InstantiationContext,
    pub kpis: Vec<KpiResult>,
    /// Scenario time of the trigger, s.
    pub computed_at: f64,
    /// Time window the data were selected from, if restricted.
    pub window: Option<TimeRange>,
    /// SHA-256 of the consumed smart data, hex.
    pub inputs_digest: String,
}

impl DecisionAidIndicator {
    pub fn kpi(&self, kpi_id: &str) -> Option<&KpiResult> {
        self.kpis.iter().find(|k| k.kpi_id == kpi_id)
    }
}

/// SHA-256 over the canonical JSON of `data`, sorted by period and metric.
pub fn inputs_digest(data: &[ScopedDatum]) -> String {
    let mut sorted: Vec<&ScopedDatum> = data.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.datum.period_id, &a.datum.metric_id).cmp(&(&b.datum.period_id, &b.datum.metric_id))
    });
    let mut h = Sha256::new();
    for d in sorted {
        let row = serde_json::to_vec(&(&*d.period, &d.datum)).expect("smart data serialize");
        h.update((row.len() as u64).to_le_bytes());
        h.update(&row);
    }
    hex::encode(h.finalize())
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    let out = out.trim_matches('-');
    if out.is_empty() {
        "indicator".into()
    } else {
        out.chars().take(40).collect()
    }
}

/// Selects the context's scope (narrowed to the trigger window), evaluates
/// every model and assembles the indicator.
pub fn instantiate(
    context: &InstantiationContext,
    models: &[KpiModel],
    data: &[ScopedDatum],
    trigger: &Trigger,
) -> Result<DecisionAidIndicator, KpiError> {
    context.validate()?;
    if models.is_empty() {
        return Err(KpiError::NoModels);
    }
    let mut scope = context.scope.clone();
    if let Some(w) = trigger.window {
        scope.time_range = Some(scope.time_range.map_or(w, |r| r.intersect(&w)));
    }
    let empty_window = scope.time_range.is_some_and(|r| r.from >= r.to);
    let selected = if empty_window {
        Vec::new()
    } else {
        select_scope(data, &scope)?
    };
    let annotate = |kpi_id: &str| {
        let kpi_id = kpi_id.to_string();
        move |e: KpiError| KpiError::Model {
            kpi_id,
            source: Box::new(e),
        }
    };
    let mut kpis = Vec::with_capacity(models.len());
    for m in models {
        let resolved = resolve_baseline(m, context, data).map_err(annotate(&m.kpi_id))?;
        let values = evaluate_kpi(&resolved, &selected).map_err(annotate(&m.kpi_id))?;
        kpis.push(KpiResult {
            kpi_id: m.kpi_id.clone(),
            group_by: m.group_by,
            source_metric: m.source_metric.clone(),
            aggregation: m.aggregation,
            values,
        });
    }
    let inputs_digest = inputs_digest(&selected);
    Ok(DecisionAidIndicator {
        indicator_id: format!(
            "{}-{}-{}",
            slug(&context.objective),
            trigger.at.round() as i64,
            &inputs_digest[..8]
        ),
        context: context.clone(),
        kpis,
        computed_at: trigger.at,
        window: scope.time_range,
        inputs_digest,
    })
}

fn resolve_baseline(model: &KpiModel, context: &InstantiationContext, data: &[ScopedDatum]) -> Result<KpiModel, KpiError> {
    let Some(Baseline::HistoricalMean { from, to }) = model.baseline else {
        return Ok(model.clone());
    };
    model.validate()?;
    let scope = ScopeFilter {
        time_range: Some(TimeRange::new(from, to)),
        ..context.scope.clone()
    };
    let history = select_scope(data, &scope)?;
    let mean_model = KpiModel {
        aggregation: Aggregation::Mean,
        baseline: None,
        ..model.clone()
    };
    let values = evaluate_kpi(&mean_model, &history)?
        .into_iter()
        .filter(|(_, v)| *v > 0.0)
        .collect();
    Ok(KpiModel {
        baseline: Some(Baseline::PerEntity { values }),
        ..model.clone()
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;
    use crate::aggregate::{Criterion, Operator};

    fn period(idx: usize, tool: &str, programs: &[&str], t_i: f64) -> Arc<ToolUsagePeriod> {
        Arc::new(ToolUsagePeriod {
            period_id: format!("M-{idx:06}"),
            machine_id: "M".into(),
            tool_id: tool.into(),
            t_i,
            t_f: t_i + 10.0,
            programs: programs.iter().map(|s| s.to_string()).collect(),
            workpieces: BTreeSet::from(["W1".to_string()]),
        })
    }

    fn datum(p: &Arc<ToolUsagePeriod>, metric: &str, value: Option<f64>) -> ScopedDatum {
        ScopedDatum {
            period: Arc::clone(p),
            datum: SmartDatum {
                period_id: p.period_id.clone(),
                metric_id: metric.into(),
                source: Criterion::Nh,
                operator: Operator::T,
                value,
                threshold_used: None,
            },
        }
    }

    fn fixture() -> Vec<ScopedDatum> {
        let a = period(0, "10026", &["P1"], 0.0);
        let b = period(1, "10026", &["P1", "P2"], 100.0);
        let c = period(2, "20001", &["P2"], 200.0);
        vec![
            datum(&a, "chatter_duration", Some(12.4)),
            datum(&b, "chatter_duration", Some(7.7)),
            datum(&c, "chatter_duration", Some(3.1)),
            datum(&c, "mean_cutting_power", None),
        ]
    }

    fn chatter(agg: Aggregation, by: EntityKind) -> KpiModel {
        KpiModel::new("chatter", agg, "chatter_duration", by)
    }

    fn ctx(mode: Mode) -> InstantiationContext {
        InstantiationContext {
            objective: "Reduce chatter".into(),
            decider: "manufacturing_department".into(),
            scope: ScopeFilter::default(),
            mode,
        }
    }

    #[test]
    fn sum_by_tool_hand_example() {
        let v = evaluate_kpi(&chatter(Aggregation::Sum, EntityKind::Tool), &fixture()).unwrap();
        assert_eq!(v.len(), 2);
        assert!((v["10026"] - 20.1).abs() < 1e-12);
        assert_eq!(v["20001"], 3.1);
    }

    #[test]
    fn mean_of_single_and_unit_weights() {
        let v = evaluate_kpi(&chatter(Aggregation::Mean, EntityKind::Tool), &fixture()).unwrap();
        assert_eq!(v["20001"], 3.1);
        let mut m = chatter(Aggregation::WeightedSum, EntityKind::Tool);
        m.weights = Some([("10026".into(), 1.0), ("20001".into(), 1.0)].into());
        let sum = evaluate_kpi(&chatter(Aggregation::Sum, EntityKind::Tool), &fixture()).unwrap();
        assert_eq!(evaluate_kpi(&m, &fixture()).unwrap(), sum);
        m.weights = Some([("10026".into(), 1.0)].into());
        assert_eq!(
            evaluate_kpi(&m, &fixture()),
            Err(KpiError::MissingWeight { entity: "20001".into() })
        );
        m.weights = None;
        assert!(matches!(evaluate_kpi(&m, &fixture()), Err(KpiError::MissingWeights { .. })));
    }

    #[test]
    fn multi_program_period_counts_for_each_program() {
        let v = evaluate_kpi(&chatter(Aggregation::Sum, EntityKind::Program), &fixture()).unwrap();
        assert!((v["P1"] - 20.1).abs() < 1e-12);
        assert!((v["P2"] - 10.8).abs() < 1e-12);
        assert!(evaluate_kpi(&chatter(Aggregation::Sum, EntityKind::Tool), &[]).unwrap().is_empty());
    }

    #[test]
    fn baseline_comparison() {
        let mut m = chatter(Aggregation::BaselineComparison, EntityKind::Tool);
        assert_eq!(evaluate_kpi(&m, &fixture()), Err(KpiError::MissingBaseline));
        m.baseline = Some(Baseline::Value { value: 2.0 });
        let v = evaluate_kpi(&m, &fixture()).unwrap();
        assert_eq!(v["20001"], 1.55);
        m.baseline = Some(Baseline::PerEntity {
            values: [("20001".into(), 3.1)].into(),
        });
        let v = evaluate_kpi(&m, &fixture()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v["20001"], 1.0);
    }

    #[test]
    fn historical_baseline_is_resolved_at_instantiation() {
        let mut m = chatter(Aggregation::BaselineComparison, EntityKind::Tool);
        m.baseline = Some(Baseline::HistoricalMean { from: 0.0, to: 150.0 });
        let mut c = ctx(Mode::OnDemand { requests: vec![300.0] });
        c.scope.time_range = Some(TimeRange::new(100.0, 300.0));
        let ind = instantiate(&c, &[m], &fixture(), &Trigger { at: 300.0, window: None }).unwrap();
        let v = &ind.kpis[0].values;
        // 10026: current mean 7.7 over historical mean (12.4 + 7.7) / 2; 20001 has no history.
        assert_eq!(v.len(), 1);
        assert!((v["10026"] - 7.7 / 10.05).abs() < 1e-12);
    }

    #[test]
    fn scope_selection() {
        let data = fixture();
        let tool = ScopeFilter {
            tool: Some("20001".into()),
            ..Default::default()
        };
        let s = select_scope(&data, &tool).unwrap();
        assert!(s.iter().all(|d| d.period.tool_id == "20001"));
        assert_eq!(s.len(), 2);
        let disjoint = ScopeFilter {
            time_range: Some(TimeRange::new(1000.0, 2000.0)),
            ..Default::default()
        };
        assert!(select_scope(&data, &disjoint).unwrap().is_empty());
        let program = ScopeFilter {
            program: Some("P2".into()),
            ..Default::default()
        };
        let want: Vec<_> = data.iter().filter(|d| d.period.programs.contains("P2")).cloned().collect();
        assert_eq!(select_scope(&data, &program).unwrap(), want);
        let bad = ScopeFilter {
            time_range: Some(TimeRange::new(5.0, 5.0)),
            ..Default::default()
        };
        assert!(matches!(select_scope(&data, &bad), Err(KpiError::InvalidScope(_))));
    }

    #[test]
    fn periodic_schedule_over_production_clock() {
        let day = 86_400.0;
        let t = schedule(
            &Mode::Periodic { period: 90.0 * day },
            Clock { start: 0.0, end: 426.0 * day },
            &[],
        )
        .unwrap();
        let days: Vec<f64> = t.iter().map(|t| t.at / day).collect();
        assert_eq!(days, vec![90.0, 180.0, 270.0, 360.0]);
        assert_eq!(t[1].window, Some(TimeRange::new(90.0 * day, 180.0 * day)));
        assert!(schedule(&Mode::Periodic { period: 0.0 }, Clock { start: 0.0, end: 1.0 }, &[]).is_err());
        assert!(schedule(&Mode::Periodic { period: -5.0 }, Clock { start: 0.0, end: 1.0 }, &[]).is_err());
    }

    #[test]
    fn on_demand_and_on_event_schedules() {
        let clock = Clock { start: 0.0, end: 300.0 };
        let t = schedule(&Mode::OnDemand { requests: vec![10.0, 20.0] }, clock, &[]).unwrap();
        assert_eq!(t.len(), 2);
        let never = Mode::OnEvent {
            metric_id: "chatter_duration".into(),
            threshold: 100.0,
        };
        assert!(schedule(&never, clock, &fixture()).unwrap().is_empty());
        let some = Mode::OnEvent {
            metric_id: "chatter_duration".into(),
            threshold: 5.0,
        };
        let at: Vec<f64> = schedule(&some, clock, &fixture()).unwrap().iter().map(|t| t.at).collect();
        assert_eq!(at, vec![10.0, 110.0]);
    }

    #[test]
    fn instantiate_two_models_deterministically() {
        let models = [
            chatter(Aggregation::Sum, EntityKind::Tool),
            KpiModel::new("chatter_by_program", Aggregation::Sum, "chatter_duration", EntityKind::Program),
        ];
        let c = ctx(Mode::Periodic { period: 300.0 });
        let trig = Trigger { at: 300.0, window: Some(TimeRange::new(0.0, 300.0)) };
        let a = instantiate(&c, &models, &fixture(), &trig).unwrap();
        let b = instantiate(&c, &models, &fixture(), &trig).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.kpis.len(), 2);
        assert!(a.indicator_id.starts_with("reduce-chatter-300-"));
        assert_eq!(a.kpis[0].ranking()[0].0, "10026");
        let empty = instantiate(&c, &models, &[], &trig).unwrap();
        assert!(empty.kpis.iter().all(|k| k.values.is_empty()));
        assert_ne!(empty.inputs_digest, a.inputs_digest);
        assert_eq!(instantiate(&c, &[], &fixture(), &trig), Err(KpiError::NoModels));
    }

    #[test]
    fn model_errors_name_the_kpi() {
        let bad = chatter(Aggregation::WeightedMean, EntityKind::Tool);
        let err = instantiate(
            &ctx(Mode::OnDemand { requests: vec![1.0] }),
            &[bad],
            &fixture(),
            &Trigger { at: 1.0, window: None },
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("kpi chatter:"), "{err}");
    }

    /// Random periods over four tools and three programs with dyadic values.
    fn random_fixture() -> impl Strategy<Value = Vec<ScopedDatum>> {
        prop::collection::vec((0usize..4, 0usize..3, 0u32..1000, 0u32..4096), 0..60).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (tool, prog, start, v))| {
                    let p = period(i, &format!("T{tool}"), &[&format!("P{prog}")], start as f64);
                    datum(&p, "chatter_duration", Some(v as f64 / 64.0))
                })
                .collect()
        })
    }

    /// Random periods with continuous values, so entity totals do not tie.
    fn continuous_fixture() -> impl Strategy<Value = Vec<ScopedDatum>> {
        prop::collection::vec((0usize..4, 0u32..1000, 0.0f64..64.0), 0..60).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (tool, start, v))| {
                    let p = period(i, &format!("T{tool}"), &["P0"], start as f64);
                    datum(&p, "chatter_duration", Some(v))
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn sum_is_additive_over_time_partitions(data in random_fixture(), cut in 1u32..999) {
            let m = chatter(Aggregation::Sum, EntityKind::Tool);
            let within = |from: f64, to: f64| select_scope(&data, &ScopeFilter {
                time_range: Some(TimeRange::new(from, to)),
                ..Default::default()
            }).unwrap();
            let whole = evaluate_kpi(&m, &within(0.0, 1000.0)).unwrap();
            let left = evaluate_kpi(&m, &within(0.0, cut as f64)).unwrap();
            let right = evaluate_kpi(&m, &within(cut as f64, 1000.0)).unwrap();
            for (e, v) in &whole {
                let parts = left.get(e).copied().unwrap_or(0.0) + right.get(e).copied().unwrap_or(0.0);
                prop_assert_eq!(*v, parts);
            }
            // Scope monotonicity: the wider range keeps every entity and never lowers a sum.
            for (e, v) in left.iter().chain(&right) {
                prop_assert!(whole[e] >= *v);
            }
        }

        #[test]
        fn ranking_survives_positive_scaling(data in continuous_fixture(), c in 0.01f64..100.0) {
            for agg in [Aggregation::Sum, Aggregation::Mean] {
                let m = chatter(agg, EntityKind::Tool);
                let scaled: Vec<ScopedDatum> = data.iter().map(|d| {
                    let mut d = d.clone();
                    d.datum.value = d.datum.value.map(|v| v * c);
                    d
                }).collect();
                let a = evaluate_kpi(&m, &data).unwrap();
                let b = evaluate_kpi(&m, &scaled).unwrap();
                let ra: Vec<&str> = rank(&a).into_iter().map(|x| x.0).collect();
                let rb: Vec<&str> = rank(&b).into_iter().map(|x| x.0).collect();
                prop_assert_eq!(ra, rb);
            }
        }
    }
}
