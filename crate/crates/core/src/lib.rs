//! Multi-level aggregation of machining telemetry.
//!
//! Raw spindle signals (level 0) are reduced to monitoring criteria every
//! 0.1 s (level 1), then to per-tool-usage smart data through threshold
//! exceedance operators (level 2), then to contextual KPIs and decision-aid
//! reports (level 3).
//!
//! | module        | level | role                                            |
//! |---------------|-------|-------------------------------------------------|
//! | [`synth`]     | 0     | seeded synthetic spindle telemetry              |
//! | [`monitor`]   | 1     | spectra, V_RMS, unbalance, Nh, bearing criteria  |
//! | [`aggregate`] | 2     | tool usage periods, CO / T operators, thresholds |
//! | [`kpi`]       | 3     | KPI models and decision-aid indicators           |
//! | [`store`]     | -     | append-only checksummed row logs                 |
//! | [`orchestrate`] | -   | message-passing agents, reports, CLI plumbing    |

pub mod aggregate;
pub mod kpi;
pub mod monitor;
pub mod orchestrate;
pub mod store;
pub mod synth;

/// Sampling rate of the vibration and power channels, Hz.
pub const SAMPLE_RATE: f64 = 25_000.0;

/// Samples per channel in one 0.1 s block.
pub const BLOCK_LEN: usize = 2500;

/// Period of the monitoring and context streams, s.
pub const DT: f64 = 0.1;

/// Number of spindle accelerometers.
pub const CHANNELS: usize = 4;

/// Tool identifier emitted in the context stream when no schedule entry is active.
pub const IDLE_TOOL: &str = "idle";

/// Time of the `index`-th 0.1 s tick. Blocks, context samples and monitoring
/// records all derive their timestamps from this so they compare exactly.
#[inline]
pub fn tick_time(index: u64) -> f64 {
    index as f64 * DT
}

/// Number of whole 0.1 s ticks in `duration` seconds.
#[inline]
pub fn tick_count(duration: f64) -> u64 {
    if duration <= 0.0 {
        0
    } else {
        (duration / DT + 1e-9).floor() as u64
    }
}
