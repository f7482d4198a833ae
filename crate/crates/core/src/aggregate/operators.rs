use serde::{Deserialize, Serialize};

use super::{AggregateError, Criterion, Threshold};
use crate::monitor::MonitoringRecord;
use crate::{CHANNELS, DT};

/// Uniformly sampled values `x(k)` of one monitoring criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSeries {
    pub criterion: Criterion,
    /// Time of `samples[0]`, s.
    pub start_time: f64,
    /// Sampling period, s.
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl CriterionSeries {
    pub fn new(
        criterion: Criterion,
        start_time: f64,
        samples: Vec<f64>,
    ) -> Result<Self, AggregateError> {
        if !start_time.is_finite() {
            return Err(AggregateError::NonFinite("start time"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(AggregateError::NonFinite("sample"));
        }
        Ok(Self {
            criterion,
            start_time,
            dt: DT,
            samples,
        })
    }

    /// Fused series of `criterion` over consecutive 0.1 s records.
    pub fn from_records(
        criterion: Criterion,
        records: &[MonitoringRecord],
    ) -> Result<Self, AggregateError> {
        let start = records.first().map_or(0.0, |r| r.time);
        for (i, w) in records.windows(2).enumerate() {
            if ((w[1].time - w[0].time) - DT).abs() > 1e-6 {
                return Err(AggregateError::NonUniform(i + 1));
            }
        }
        Self::new(
            criterion,
            start,
            records.iter().map(|r| criterion.value(r)).collect(),
        )
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.samples.len().saturating_sub(1) as f64 * self.dt
    }

    /// Inclusive index range of samples whose times fall in `[t_i, t_f]`.
    fn window(&self, t_i: f64, t_f: f64) -> Result<(usize, usize), AggregateError> {
        if !(t_i.is_finite() && t_f.is_finite()) || t_f < t_i {
            return Err(AggregateError::InvalidWindow { t_i, t_f });
        }
        let eps = self.dt * 1e-6;
        if self.samples.is_empty() || t_i < self.start_time - eps || t_f > self.end_time() + eps {
            return Err(AggregateError::WindowOutside {
                t_i,
                t_f,
                start: self.start_time,
                end: self.end_time(),
            });
        }
        let lo = ((t_i - self.start_time) / self.dt - 1e-6).ceil().max(0.0) as usize;
        let hi = ((t_f - self.start_time) / self.dt + 1e-6).floor() as usize;
        Ok((lo, hi.min(self.samples.len() - 1)))
    }

    fn checked_window(
        &self,
        threshold: &Threshold,
        t_i: f64,
        t_f: f64,
    ) -> Result<&[f64], AggregateError> {
        if threshold.criterion != self.criterion {
            return Err(AggregateError::CriterionMismatch {
                series: self.criterion,
                threshold: threshold.criterion,
            });
        }
        let (lo, hi) = self.window(t_i, t_f)?;
        Ok(if lo > hi { &[] } else { &self.samples[lo..=hi] })
    }
}

/// √(Σ v² / 4) over the four accelerometer values.
pub fn quadratic_mean(values: &[f64; CHANNELS]) -> Result<f64, AggregateError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AggregateError::NonFinite("channel value"));
    }
    if let Some(&v) = values.iter().find(|v| **v < 0.0) {
        return Err(AggregateError::Negative(v));
    }
    Ok((values.iter().map(|v| v * v).sum::<f64>() / CHANNELS as f64).sqrt())
}

/// `Σ max(x − T, 0) · dt` in sample order. Equality does not exceed.
pub(crate) fn criticality_sum(samples: impl IntoIterator<Item = f64>, threshold: f64, dt: f64) -> f64 {
    let mut acc = 0.0;
    for x in samples {
        if x > threshold {
            acc += (x - threshold) * dt;
        }
    }
    acc
}

pub(crate) fn exceedance_time(samples: impl IntoIterator<Item = f64>, threshold: f64, dt: f64) -> f64 {
    samples.into_iter().filter(|&x| x > threshold).count() as f64 * dt
}

/// Criticality operator CO[X > T] over `[t_i, t_f]`, in criterion units · s.
pub fn co_operator(
    series: &CriterionSeries,
    threshold: &Threshold,
    t_i: f64,
    t_f: f64,
) -> Result<f64, AggregateError> {
    let window = series.checked_window(threshold, t_i, t_f)?;
    Ok(criticality_sum(window.iter().copied(), threshold.value, series.dt))
}

/// Duration operator T[X > T] over `[t_i, t_f]`, in s.
pub fn t_operator(
    series: &CriterionSeries,
    threshold: &Threshold,
    t_i: f64,
    t_f: f64,
) -> Result<f64, AggregateError> {
    let window = series.checked_window(threshold, t_i, t_f)?;
    Ok(exceedance_time(window.iter().copied(), threshold.value, series.dt))
}
