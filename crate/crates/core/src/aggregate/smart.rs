use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::operators::{criticality_sum, exceedance_time};
use super::segment::{period_records, ToolUsagePeriod};
use super::{AggregateError, Criterion, ThresholdSet};
use crate::monitor::MonitoringRecord;
use crate::DT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// Integrated exceedance magnitude above the threshold.
    Co,
    /// Time spent above the threshold.
    T,
    Mean,
    Max,
    Min,
    Sum,
}

impl Operator {
    pub fn needs_threshold(self) -> bool {
        matches!(self, Operator::Co | Operator::T)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Co => "co",
            Operator::T => "t",
            Operator::Mean => "mean",
            Operator::Max => "max",
            Operator::Min => "min",
            Operator::Sum => "sum",
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One smart-data metric: which criterion, which operator, which samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricDef {
    pub metric_id: String,
    pub source: Criterion,
    pub operator: Operator,
    /// Criterion whose threshold CO and T compare against; defaults to `source`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Criterion>,
    /// Restrict to samples recognised as cutting.
    #[serde(default)]
    pub cut_only: bool,
}

impl MetricDef {
    pub fn new(metric_id: &str, source: Criterion, operator: Operator, cut_only: bool) -> Self {
        Self {
            metric_id: metric_id.to_string(),
            source,
            operator,
            threshold: None,
            cut_only,
        }
    }

    pub fn threshold_criterion(&self) -> Criterion {
        self.threshold.unwrap_or(self.source)
    }

    /// The metric set used when a configuration does not list its own.
    pub fn defaults() -> Vec<MetricDef> {
        vec![
            MetricDef::new("chatter_duration", Criterion::Nh, Operator::T, false),
            MetricDef::new("critical_vibration", Criterion::Vrms, Operator::Co, false),
            MetricDef::new("mean_cutting_power", Criterion::Power, Operator::Mean, true),
            MetricDef::new("mean_feedrate", Criterion::Feedrate, Operator::Mean, true),
            MetricDef::new("max_spindle_temperature", Criterion::SpindleTemperature, Operator::Max, false),
        ]
    }
}

/// Decides which samples count as cutting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutRule {
    /// Spindle power drawn with no engagement, W.
    pub idle_power: f64,
    /// Power above idle required to call a sample cutting; `None` means twice `idle_power`.
    pub margin: Option<f64>,
}

impl Default for CutRule {
    fn default() -> Self {
        Self {
            idle_power: 500.0,
            margin: None,
        }
    }
}

impl CutRule {
    pub fn limit(&self) -> f64 {
        self.idle_power + self.margin.unwrap_or(2.0 * self.idle_power)
    }

    pub fn is_cutting(&self, r: &MonitoringRecord) -> bool {
        r.mean_power > self.limit()
    }
}

/// The threshold a CO or T value was computed against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRef {
    pub criterion: Criterion,
    pub value: f64,
}

/// One aggregated metric of one tool usage period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmartDatum {
    pub period_id: String,
    pub metric_id: String,
    pub source: Criterion,
    pub operator: Operator,
    /// `None` when a statistic has no samples to summarise.
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_used: Option<ThresholdRef>,
}

/// Reduces one period to one datum per metric definition.
///
/// `records` is the time-ordered monitoring stream the period was cut from.
pub fn compute_smart_data(
    period: &ToolUsagePeriod,
    records: &[MonitoringRecord],
    thresholds: &ThresholdSet,
    metrics: &[MetricDef],
    cut: &CutRule,
) -> Result<Vec<SmartDatum>, AggregateError> {
    let selected: Vec<&MonitoringRecord> = period_records(period, records).collect();
    metrics
        .iter()
        .map(|m| {
            let values = selected
                .iter()
                .filter(|r| !m.cut_only || cut.is_cutting(r))
                .map(|r| m.source.value(r));
            let threshold_used = if m.operator.needs_threshold() {
                let criterion = m.threshold_criterion();
                let t = thresholds.get(&criterion).ok_or_else(|| AggregateError::MissingThreshold {
                    metric_id: m.metric_id.clone(),
                    criterion,
                })?;
                Some(ThresholdRef {
                    criterion,
                    value: t.value,
                })
            } else {
                None
            };
            let value = match (m.operator, threshold_used) {
                (Operator::Co, Some(t)) => Some(criticality_sum(values, t.value, DT)),
                (Operator::T, Some(t)) => Some(exceedance_time(values, t.value, DT)),
                (Operator::Sum, _) => Some(values.sum()),
                (Operator::Mean, _) => {
                    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
                    (n > 0).then(|| s / n as f64)
                }
                (Operator::Max, _) => values.reduce(f64::max),
                (Operator::Min, _) => values.reduce(f64::min),
                (Operator::Co | Operator::T, None) => unreachable!("threshold resolved above"),
            };
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(AggregateError::NonFinite("smart datum"));
                }
            }
            Ok(SmartDatum {
                period_id: period.period_id.clone(),
                metric_id: m.metric_id.clone(),
                source: m.source,
                operator: m.operator,
                value,
                threshold_used,
            })
        })
        .collect()
}

/// Runs [`compute_smart_data`] for every period in parallel, keeping period order.
pub fn aggregate_periods(
    periods: &[ToolUsagePeriod],
    records: &[MonitoringRecord],
    thresholds: &ThresholdSet,
    metrics: &[MetricDef],
    cut: &CutRule,
) -> Result<Vec<SmartDatum>, AggregateError> {
    let per_period: Vec<Vec<SmartDatum>> = periods
        .par_iter()
        .map(|p| compute_smart_data(p, records, thresholds, metrics, cut))
        .collect::<Result<_, _>>()?;
    Ok(per_period.into_iter().flatten().collect())
}
