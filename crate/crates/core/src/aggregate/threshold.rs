use serde::{Deserialize, Serialize};

use super::{AggregateError, Criterion};
use crate::monitor::MonitoringRecord;

/// Minimum pool size for unsupervised learning.
pub const MIN_LEARNING_SAMPLES: usize = 1000;

const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Learned,
    Configured,
}

/// Summary of the pool a threshold was learned from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedFrom {
    pub samples: u64,
    pub min: f64,
    pub max: f64,
}

/// Critical threshold `T_i` of one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub criterion: Criterion,
    pub value: f64,
    pub provenance: Provenance,
    /// Set when learning fell back to the p99.9 quantile on unimodal data.
    #[serde(default)]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learned_from: Option<LearnedFrom>,
}

impl Threshold {
    pub fn configured(criterion: Criterion, value: f64) -> Self {
        Self {
            criterion,
            value,
            provenance: Provenance::Configured,
            fallback: false,
            learned_from: None,
        }
    }

    pub fn validate(&self) -> Result<(), AggregateError> {
        if !self.value.is_finite() {
            return Err(AggregateError::NonFinite("threshold"));
        }
        if self.value <= 0.0 {
            return Err(AggregateError::NonPositiveThreshold(self.value));
        }
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Learns the critical threshold of `criterion` from unlabelled samples.
///
/// Two-class 1-D clustering: Lloyd iterations of two-means started at the
/// p10 and p90 quantiles, threshold at the midpoint of the final centroids.
/// When the centroids end up closer than 1 % of the data range (or the data
/// is constant) the p99.9 quantile is used instead and `fallback` is set.
pub fn learn_threshold(criterion: Criterion, values: &[f64]) -> Result<Threshold, AggregateError> {
    if values.len() < MIN_LEARNING_SAMPLES {
        return Err(AggregateError::TooFewSamples {
            got: values.len(),
            need: MIN_LEARNING_SAMPLES,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AggregateError::NonFinite("sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let range = max - min;

    let mut low = quantile(&sorted, 0.10);
    let mut high = quantile(&sorted, 0.90);
    let mut split = usize::MAX;
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (low + high);
        // Sorted data: the low class is a prefix.
        let s = sorted.partition_point(|&v| v <= mid);
        if s == split || s == 0 || s == sorted.len() {
            break;
        }
        split = s;
        low = sorted[..s].iter().sum::<f64>() / s as f64;
        high = sorted[s..].iter().sum::<f64>() / (sorted.len() - s) as f64;
    }

    let (value, fallback) = if range <= 0.0 || high - low < 0.01 * range {
        (quantile(&sorted, 0.999), true)
    } else {
        (0.5 * (low + high), false)
    };
    let threshold = Threshold {
        criterion,
        value,
        provenance: Provenance::Learned,
        fallback,
        learned_from: Some(LearnedFrom {
            samples: values.len() as u64,
            min,
            max,
        }),
    };
    threshold.validate()?;
    Ok(threshold)
}

/// Fused values of `criterion` over in-process (non-idle) records.
pub fn pooled_values(records: &[MonitoringRecord], criterion: Criterion) -> Vec<f64> {
    records
        .iter()
        .filter(|r| !r.is_idle())
        .map(|r| criterion.value(r))
        .collect()
}
