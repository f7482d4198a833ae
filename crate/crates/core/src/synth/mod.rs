//! Level 0: deterministic synthetic spindle telemetry.
//!
//! A [`ScenarioScript`] describes a production schedule (which tool cuts which
//! program on which workpiece, at what spindle speed) and a list of planted
//! [`AnomalyEvent`]s. The [`Generator`] turns it into 0.1 s [`SignalBlock`]s of
//! four accelerometer channels plus cutting power at 25 kHz, and a 10 Hz
//! stream of [`ContextSample`]s, both bit-reproducible from the seed.
//!
//! Signal model per channel:
//!
//! - white Gaussian noise low-passed to `noise_bandwidth` with standard
//!   deviation `noise_std`;
//! - synchronous harmonics 1x..Hx of the spindle frequency while it turns;
//! - chatter: a sinusoid at a fixed frequency in Hz that is not a spindle
//!   harmonic;
//! - unbalance growth: the 1x amplitude is replaced by the event magnitude;
//! - bearing defect: a sinusoid at `order x spindle frequency`.
//!
//! Anomaly envelopes are rectangular and applied sample by sample.

mod generator;
mod scenario_file;

pub use generator::{generate_stream, Generator};
pub use scenario_file::{read_scenario, write_scenario, ScenarioFileError};
pub(crate) use scenario_file::line_column;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::{BLOCK_LEN, CHANNELS, IDLE_TOOL, SAMPLE_RATE};

const TIME_EPS: f64 = 1e-9;

/// One 0.1 s block of raw telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlock {
    pub block_index: u64,
    /// `block_index * 0.1`, s.
    pub start_time: f64,
    /// Accelerometer channels, m/s², [`BLOCK_LEN`] samples each.
    pub channels: [Vec<f64>; CHANNELS],
    /// Spindle cutting power, W.
    pub power: Vec<f64>,
    pub sample_rate: f64,
}

impl SignalBlock {
    pub fn validate(&self) -> bool {
        self.channels.iter().all(|c| c.len() == BLOCK_LEN)
            && self.power.len() == BLOCK_LEN
            && self
                .channels
                .iter()
                .chain(std::iter::once(&self.power))
                .all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// 10 Hz operational context as read from the CNC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSample {
    pub time: f64,
    /// X, Y, Z, mm.
    pub axis_position: [f64; 3],
    /// mm/min.
    pub feedrate: f64,
    /// rev/min.
    pub spindle_speed: f64,
    pub tool_id: String,
    pub program_name: String,
    pub workpiece_id: String,
    /// °C.
    pub spindle_temperature: f64,
}

impl ContextSample {
    pub fn is_idle(&self) -> bool {
        self.tool_id == IDLE_TOOL
    }
}

/// One scheduled machining interval with a mounted tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub tool_id: String,
    pub program_name: String,
    pub workpiece_id: String,
    pub start: f64,
    pub end: f64,
    /// rev/min.
    pub spindle_speed: f64,
    /// mm/min.
    pub feedrate: f64,
    /// Cutting power level, W. Drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutting_power: Option<f64>,
}

impl ScheduleEntry {
    pub fn covers(&self, t: f64) -> bool {
        t >= self.start - TIME_EPS && t < self.end - TIME_EPS
    }

    fn label(&self) -> String {
        format!(
            "tool {} / {} [{}, {}]",
            self.tool_id, self.program_name, self.start, self.end
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Chatter,
    UnbalanceGrowth,
    BearingDefect,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::Chatter => "chatter",
            AnomalyKind::UnbalanceGrowth => "unbalance_growth",
            AnomalyKind::BearingDefect => "bearing_defect",
        })
    }
}

fn unit_order() -> f64 {
    1.0
}

/// A planted event with a rectangular envelope over `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyEvent {
    pub kind: AnomalyKind,
    pub start: f64,
    pub end: f64,
    /// Amplitude of the planted component, m/s².
    pub magnitude: f64,
    /// Chatter: frequency in Hz. Bearing defect: order relative to the
    /// spindle frequency. Unbalance growth: ignored (always 1x).
    #[serde(default = "unit_order")]
    pub frequency: f64,
}

impl AnomalyEvent {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.start - TIME_EPS && t < self.end - TIME_EPS
    }
}

/// Knobs of the baseline signal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalParams {
    /// Standard deviation of the broadband noise, m/s².
    pub noise_std: f64,
    /// Low-pass cutoff of the noise, Hz.
    pub noise_bandwidth: f64,
    /// Amplitudes of the 1x, 2x, 3x, ... spindle harmonics, m/s².
    pub harmonic_amplitudes: Vec<f64>,
    /// W.
    pub idle_power: f64,
    /// Range cutting power is drawn from when an entry does not fix it, W.
    pub cutting_power_min: f64,
    pub cutting_power_max: f64,
    /// Relative standard deviation of the power signal.
    pub power_noise: f64,
    /// °C.
    pub ambient_temperature: f64,
    /// Steady-state spindle heating, °C per 1000 rev/min.
    pub heating_per_krpm: f64,
    /// First-order thermal time constant, s.
    pub thermal_time_constant: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        Self {
            noise_std: 1.0,
            noise_bandwidth: 10_000.0,
            harmonic_amplitudes: vec![0.5, 0.5, 0.5],
            idle_power: 500.0,
            cutting_power_min: 4_000.0,
            cutting_power_max: 12_000.0,
            power_noise: 0.01,
            ambient_temperature: 20.0,
            heating_per_krpm: 1.0,
            thermal_time_constant: 600.0,
        }
    }
}

/// A scripted production scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub seed: u64,
    /// s.
    pub duration: f64,
    #[serde(default)]
    pub signal: SignalParams,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub anomalies: Vec<AnomalyEvent>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("duration must be finite and non-negative, got {0}")]
    Duration(f64),
    #[error("schedule entry #{index} ({label}): {reason}")]
    Entry {
        index: usize,
        label: String,
        reason: String,
    },
    #[error("schedule entries #{first} ({first_label}) and #{second} ({second_label}) overlap")]
    Overlap {
        first: usize,
        first_label: String,
        second: usize,
        second_label: String,
    },
    #[error("schedule entries #{first} and #{second} are out of order")]
    OutOfOrder { first: usize, second: usize },
    #[error("anomaly #{index} ({kind}): {reason}")]
    Anomaly {
        index: usize,
        kind: AnomalyKind,
        reason: String,
    },
    #[error("signal parameters: {0}")]
    Signal(String),
}

impl ScenarioScript {
    /// Schedule entry active at `t`, if any.
    pub fn entry_at(&self, t: f64) -> Option<&ScheduleEntry> {
        let idx = self
            .schedule
            .partition_point(|e| e.start <= t + TIME_EPS);
        idx.checked_sub(1)
            .map(|i| &self.schedule[i])
            .filter(|e| e.covers(t))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !self.duration.is_finite() || self.duration < 0.0 {
            return Err(ScenarioError::Duration(self.duration));
        }
        self.validate_signal()?;

        for (index, e) in self.schedule.iter().enumerate() {
            let bad = |reason: &str| ScenarioError::Entry {
                index,
                label: e.label(),
                reason: reason.to_string(),
            };
            if e.tool_id.is_empty() || e.tool_id == IDLE_TOOL {
                return Err(bad("tool_id must be non-empty and not the idle sentinel"));
            }
            if e.program_name.is_empty() || e.workpiece_id.is_empty() {
                return Err(bad("program_name and workpiece_id must be non-empty"));
            }
            if !(e.start.is_finite() && e.end.is_finite()) || e.end <= e.start {
                return Err(bad("end must be after start"));
            }
            if e.start < 0.0 || e.end > self.duration + TIME_EPS {
                return Err(bad("interval lies outside the scenario duration"));
            }
            if !(e.spindle_speed.is_finite() && e.spindle_speed >= 0.0) {
                return Err(bad("spindle_speed must be >= 0"));
            }
            if !(e.feedrate.is_finite() && e.feedrate >= 0.0) {
                return Err(bad("feedrate must be >= 0"));
            }
            if e.spindle_speed / 60.0 >= SAMPLE_RATE / 2.0 {
                return Err(bad("spindle frequency above Nyquist"));
            }
            if let Some(p) = e.cutting_power {
                if !(p.is_finite() && p >= 0.0) {
                    return Err(bad("cutting_power must be >= 0"));
                }
            }
        }
        for (i, pair) in self.schedule.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if b.start < a.start {
                return Err(ScenarioError::OutOfOrder {
                    first: i,
                    second: i + 1,
                });
            }
            if b.start < a.end - TIME_EPS {
                return Err(ScenarioError::Overlap {
                    first: i,
                    first_label: a.label(),
                    second: i + 1,
                    second_label: b.label(),
                });
            }
        }

        let nyquist = SAMPLE_RATE / 2.0;
        let bin = SAMPLE_RATE / BLOCK_LEN as f64;
        for (index, a) in self.anomalies.iter().enumerate() {
            let bad = |reason: String| ScenarioError::Anomaly {
                index,
                kind: a.kind,
                reason,
            };
            if !(a.start.is_finite() && a.end.is_finite()) || a.end <= a.start {
                return Err(bad("end must be after start".into()));
            }
            if a.start < 0.0 || a.end > self.duration + TIME_EPS {
                return Err(bad(format!(
                    "interval [{}, {}] lies outside the scenario duration {}",
                    a.start, a.end, self.duration
                )));
            }
            if !(a.magnitude.is_finite() && a.magnitude > 0.0) {
                return Err(bad("magnitude must be > 0".into()));
            }
            if !(a.frequency.is_finite() && a.frequency > 0.0) {
                return Err(bad("frequency must be > 0".into()));
            }
            let overlapping = self
                .schedule
                .iter()
                .filter(|e| e.start < a.end && a.start < e.end && e.spindle_speed > 0.0);
            match a.kind {
                AnomalyKind::Chatter => {
                    if a.frequency >= nyquist {
                        return Err(bad(format!("{} Hz is above Nyquist", a.frequency)));
                    }
                    for e in overlapping {
                        let fs = e.spindle_speed / 60.0;
                        let k = (a.frequency / fs).round();
                        if k >= 1.0 && (a.frequency - k * fs).abs() <= bin {
                            return Err(bad(format!(
                                "{} Hz coincides with spindle harmonic {}x of {} ({} Hz)",
                                a.frequency,
                                k,
                                e.label(),
                                k * fs
                            )));
                        }
                    }
                }
                AnomalyKind::BearingDefect => {
                    for e in overlapping {
                        let f = a.frequency * e.spindle_speed / 60.0;
                        if f >= nyquist {
                            return Err(bad(format!(
                                "defect frequency {f} Hz during {} is above Nyquist",
                                e.label()
                            )));
                        }
                    }
                }
                AnomalyKind::UnbalanceGrowth => {}
            }
        }
        Ok(())
    }

    fn validate_signal(&self) -> Result<(), ScenarioError> {
        let s = &self.signal;
        let bad = |m: &str| Err(ScenarioError::Signal(m.to_string()));
        let bin = SAMPLE_RATE / BLOCK_LEN as f64;
        if !(s.noise_std.is_finite() && s.noise_std >= 0.0) {
            return bad("noise_std must be >= 0");
        }
        if !(s.noise_bandwidth >= bin && s.noise_bandwidth < SAMPLE_RATE / 2.0) {
            return bad("noise_bandwidth must lie in [10 Hz, Nyquist)");
        }
        if s.harmonic_amplitudes.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("harmonic amplitudes must be >= 0");
        }
        if !(s.idle_power.is_finite() && s.idle_power >= 0.0) {
            return bad("idle_power must be >= 0");
        }
        if !(s.cutting_power_min.is_finite()
            && s.cutting_power_max.is_finite()
            && 0.0 <= s.cutting_power_min
            && s.cutting_power_min <= s.cutting_power_max)
        {
            return bad("cutting power range must satisfy 0 <= min <= max");
        }
        if !(s.power_noise.is_finite() && s.power_noise >= 0.0) {
            return bad("power_noise must be >= 0");
        }
        if !(s.thermal_time_constant.is_finite() && s.thermal_time_constant > 0.0) {
            return bad("thermal_time_constant must be > 0");
        }
        if !(s.ambient_temperature.is_finite() && s.heating_per_krpm.is_finite()) {
            return bad("temperatures must be finite");
        }
        Ok(())
    }

    /// Number of 0.1 s blocks (and context samples) the scenario produces.
    pub fn block_count(&self) -> u64 {
        crate::tick_count(self.duration)
    }
}
