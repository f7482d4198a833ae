//! Level 2: smart data per tool usage period.
//!
//! The monitoring stream is cut into [`ToolUsagePeriod`]s using the context
//! columns, the four accelerometer values of vibration criteria are fused by
//! quadratic mean, and each period is reduced to a handful of
//! [`SmartDatum`]s by the criticality operator CO (integrated exceedance
//! magnitude), the duration operator T (time above threshold) or plain
//! statistics. Thresholds are either configured or learned without labels by
//! [`learn_threshold`].

mod operators;
mod segment;
mod smart;
mod threshold;

pub use operators::{co_operator, quadratic_mean, t_operator, CriterionSeries};
pub use segment::{period_records, segment_periods, SegmentRule, ToolUsagePeriod};
pub use smart::{
    aggregate_periods, compute_smart_data, CutRule, MetricDef, Operator, SmartDatum, ThresholdRef,
};
pub use threshold::{learn_threshold, pooled_values, LearnedFrom, Provenance, Threshold};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitor::MonitoringRecord;

/// Thresholds keyed by the criterion they apply to.
pub type ThresholdSet = BTreeMap<Criterion, Threshold>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("negative value {0} where a non-negative one is required")]
    Negative(f64),
    #[error("threshold for {threshold} applied to a {series} series")]
    CriterionMismatch { series: Criterion, threshold: Criterion },
    #[error("window [{t_i}, {t_f}] outside series extent [{start}, {end}]")]
    WindowOutside {
        t_i: f64,
        t_f: f64,
        start: f64,
        end: f64,
    },
    #[error("invalid window [{t_i}, {t_f}]")]
    InvalidWindow { t_i: f64, t_f: f64 },
    #[error("{got} samples, at least {need} required to learn a threshold")]
    TooFewSamples { got: usize, need: usize },
    #[error("learned threshold {0} is not positive")]
    NonPositiveThreshold(f64),
    #[error("record {index} at t={time} does not follow t={previous}")]
    Unordered { index: usize, previous: f64, time: f64 },
    #[error("metric {metric_id} needs a threshold for {criterion}")]
    MissingThreshold { metric_id: String, criterion: Criterion },
    #[error("series samples are not uniformly spaced at index {0}")]
    NonUniform(usize),
}

/// Monitoring criteria and context columns an aggregation can read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Vrms,
    Nh,
    Unbalance,
    Bearing,
    Power,
    Feedrate,
    SpindleSpeed,
    SpindleTemperature,
}

impl Criterion {
    pub const ALL: [Criterion; 8] = [
        Criterion::Vrms,
        Criterion::Nh,
        Criterion::Unbalance,
        Criterion::Bearing,
        Criterion::Power,
        Criterion::Feedrate,
        Criterion::SpindleSpeed,
        Criterion::SpindleTemperature,
    ];

    /// Per-accelerometer criteria, fused by quadratic mean before aggregation.
    pub fn is_vibration(self) -> bool {
        matches!(
            self,
            Criterion::Vrms | Criterion::Nh | Criterion::Unbalance | Criterion::Bearing
        )
    }

    /// Scalar value of this criterion in one record.
    pub fn value(self, r: &MonitoringRecord) -> f64 {
        match self {
            Criterion::Vrms => fused(&r.vrms),
            Criterion::Nh => fused(&r.nh),
            Criterion::Unbalance => fused(&r.unbalance),
            Criterion::Bearing => fused(&r.bearing),
            Criterion::Power => r.mean_power,
            Criterion::Feedrate => r.feedrate,
            Criterion::SpindleSpeed => r.spindle_speed,
            Criterion::SpindleTemperature => r.spindle_temperature,
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Criterion::Vrms | Criterion::Nh | Criterion::Unbalance | Criterion::Bearing => "m/s²",
            Criterion::Power => "W",
            Criterion::Feedrate => "mm/min",
            Criterion::SpindleSpeed => "rev/min",
            Criterion::SpindleTemperature => "°C",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Vrms => "vrms",
            Criterion::Nh => "nh",
            Criterion::Unbalance => "unbalance",
            Criterion::Bearing => "bearing",
            Criterion::Power => "power",
            Criterion::Feedrate => "feedrate",
            Criterion::SpindleSpeed => "spindle_speed",
            Criterion::SpindleTemperature => "spindle_temperature",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown criterion `{s}`"))
    }
}

fn fused(v: &[f64; crate::CHANNELS]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}
