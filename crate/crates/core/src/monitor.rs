//! Level 1: monitoring criteria every 0.1 s.
//!
//! Each channel of a [`SignalBlock`] is turned into a Hann-windowed amplitude
//! spectrum ([`SpectralWindow`], 10 Hz bins). Order tracking is done in that
//! spectrum with bin masks keyed to the spindle speed from the synchronous
//! context sample:
//!
//! - `unbalance`: peak within ±1 bin of the spindle frequency;
//! - `nh` (chatter): largest bin inside the analysis band that is more than
//!   one bin away from every spindle harmonic, DC included;
//! - `bearing`: peak within ±1 bin of `defect order x spindle frequency`,
//!   maximum over the configured defect orders;
//! - `vrms`: RMS of the band-limited signal.
//!
//! The spindle speed is assumed constant within a block.

use std::collections::BTreeMap;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::{ContextSample, SignalBlock};
use crate::{BLOCK_LEN, CHANNELS, SAMPLE_RATE};

/// Tolerance for block/context alignment, s (half a context period).
pub const ALIGNMENT_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("expected {expected} samples, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("bandwidth {bandwidth} Hz outside (0, {nyquist}] Hz")]
    InvalidBandwidth { bandwidth: f64, nyquist: f64 },
    #[error("spindle stopped (speed {0} rev/min)")]
    SpindleStopped(f64),
    #[error("target frequency {freq} Hz above analysed band {band} Hz")]
    AboveBand { freq: f64, band: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("block at {block_time} s and context at {context_time} s are not aligned")]
    Misaligned { block_time: f64, context_time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    #[default]
    Hann,
}

impl WindowKind {
    /// Periodic (DFT-even) window coefficients.
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// One-sided amplitude spectrum of a block channel.
///
/// Magnitudes are scaled so a sinusoid of amplitude `A` centred on a bin reads
/// `A` at that bin, whatever the window.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralWindow {
    pub bin_magnitudes: Vec<f64>,
    /// Hz.
    pub bin_width: f64,
    pub window_kind: WindowKind,
    /// Equivalent noise bandwidth of the window, in bins.
    pub enbw: f64,
}

impl SpectralWindow {
    pub fn nyquist(&self) -> f64 {
        (self.bin_magnitudes.len() - 1) as f64 * self.bin_width
    }

    /// Highest bin index at or below `bandwidth`.
    fn last_bin(&self, bandwidth: f64) -> usize {
        ((bandwidth / self.bin_width + 1e-9).floor() as usize).min(self.bin_magnitudes.len() - 1)
    }

    /// RMS of the signal restricted to `[0, bandwidth]`, from the spectrum.
    pub fn band_rms(&self, bandwidth: f64) -> f64 {
        let last = self.last_bin(bandwidth);
        let nyq = self.bin_magnitudes.len() - 1;
        let mut power = 0.0;
        for (k, m) in self.bin_magnitudes[..=last].iter().enumerate() {
            // DC and Nyquist bins appear once in the two-sided spectrum and are
            // scaled without the factor 2.
            power += if k == 0 || k == nyq {
                m * m / self.enbw
            } else {
                m * m / (2.0 * self.enbw)
            };
        }
        power.sqrt()
    }

    /// Largest magnitude among bins within one bin width of `freq`.
    fn peak_near(&self, freq: f64) -> f64 {
        let centre = freq / self.bin_width;
        let lo = (centre - 1.0 - 1e-9).ceil().max(0.0) as usize;
        let hi = ((centre + 1.0 + 1e-9).floor() as usize).min(self.bin_magnitudes.len() - 1);
        self.bin_magnitudes[lo..=hi].iter().copied().fold(0.0, f64::max)
    }

    /// Largest bin in `[0, bandwidth]` farther than one bin from every
    /// multiple `k * spindle_hz`, `k >= 0`. With `spindle_hz == 0` only DC is
    /// masked. Returns `(bin, magnitude)`, or `None` when every bin is masked.
    pub fn asynchronous_peak(&self, spindle_hz: f64, bandwidth: f64) -> Option<(usize, f64)> {
        let last = self.last_bin(bandwidth);
        let tol = self.bin_width * (1.0 + 1e-9);
        let mut best: Option<(usize, f64)> = None;
        for (j, &m) in self.bin_magnitudes[..=last].iter().enumerate() {
            let f = j as f64 * self.bin_width;
            let nearest = if spindle_hz > 0.0 {
                (f / spindle_hz).round() * spindle_hz
            } else {
                0.0
            };
            if (f - nearest).abs() <= tol {
                continue;
            }
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((j, m));
            }
        }
        best
    }
}

/// Reusable FFT plan for 2500-sample spectra.
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    forward: Arc<dyn RealToComplex<f64>>,
    window: Vec<f64>,
    kind: WindowKind,
    amplitude_scale: f64,
    enbw: f64,
}

impl SpectrumAnalyzer {
    pub fn new(kind: WindowKind) -> Self {
        let forward = RealFftPlanner::<f64>::new().plan_fft_forward(BLOCK_LEN);
        let window = kind.coefficients(BLOCK_LEN);
        let sum: f64 = window.iter().sum();
        let sum_sq: f64 = window.iter().map(|w| w * w).sum();
        Self {
            forward,
            kind,
            amplitude_scale: 2.0 / sum,
            enbw: BLOCK_LEN as f64 * sum_sq / (sum * sum),
            window,
        }
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn spectrum(&self, samples: &[f64]) -> Result<SpectralWindow, MonitorError> {
        if samples.len() != BLOCK_LEN {
            return Err(MonitorError::WrongLength {
                expected: BLOCK_LEN,
                got: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(MonitorError::NonFinite(i));
        }
        let mut input: Vec<f64> = samples.iter().zip(&self.window).map(|(x, w)| x * w).collect();
        let mut output = vec![Complex::new(0.0, 0.0); BLOCK_LEN / 2 + 1];
        self.forward
            .process(&mut input, &mut output)
            .expect("buffer sizes come from the plan");
        let nyq = output.len() - 1;
        let bin_magnitudes = output
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let m = c.norm() * self.amplitude_scale;
                if k == 0 || k == nyq {
                    m / 2.0
                } else {
                    m
                }
            })
            .collect();
        Ok(SpectralWindow {
            bin_magnitudes,
            bin_width: SAMPLE_RATE / BLOCK_LEN as f64,
            window_kind: self.kind,
            enbw: self.enbw,
        })
    }
}

/// Hann-windowed amplitude spectrum of one block channel.
pub fn spectrum(block_channel: &[f64]) -> Result<SpectralWindow, MonitorError> {
    SpectrumAnalyzer::new(WindowKind::Hann).spectrum(block_channel)
}

fn check_bandwidth(bandwidth: f64) -> Result<(), MonitorError> {
    let nyquist = SAMPLE_RATE / 2.0;
    if !(bandwidth > 0.0 && bandwidth <= nyquist) {
        return Err(MonitorError::InvalidBandwidth { bandwidth, nyquist });
    }
    Ok(())
}

/// V_RMS: root-mean-square of the channel limited to `[0, bandwidth]`.
pub fn compute_vrms(block_channel: &[f64], bandwidth: f64) -> Result<f64, MonitorError> {
    check_bandwidth(bandwidth)?;
    Ok(spectrum(block_channel)?.band_rms(bandwidth))
}

fn spindle_hz(spindle_speed: f64) -> Result<f64, MonitorError> {
    if !(spindle_speed.is_finite() && spindle_speed > 0.0) {
        return Err(MonitorError::SpindleStopped(spindle_speed));
    }
    Ok(spindle_speed / 60.0)
}

/// Tool unbalance: amplitude at the spindle frequency.
pub fn unbalance_criterion(spec: &SpectralWindow, spindle_speed: f64) -> Result<f64, MonitorError> {
    let fs = spindle_hz(spindle_speed)?;
    if fs > spec.nyquist() {
        return Err(MonitorError::AboveBand {
            freq: fs,
            band: spec.nyquist(),
        });
    }
    Ok(spec.peak_near(fs))
}

/// Chatter criterion Nh: largest asynchronous amplitude within `bandwidth`.
///
/// Bins within ±1 of any spindle harmonic are excluded. Tooth-passing
/// frequencies are multiples of the spindle frequency, so `tooth_count` does
/// not widen the mask; it is only checked.
pub fn chatter_criterion_nh(
    spec: &SpectralWindow,
    spindle_speed: f64,
    tooth_count: u32,
    bandwidth: f64,
) -> Result<f64, MonitorError> {
    let fs = spindle_hz(spindle_speed)?;
    if tooth_count == 0 {
        return Err(MonitorError::InvalidArgument("tooth_count must be >= 1".into()));
    }
    check_bandwidth(bandwidth)?;
    Ok(spec.asynchronous_peak(fs, bandwidth).map_or(0.0, |(_, m)| m))
}

/// Bearing defect amplitude at `defect_order x spindle frequency`.
pub fn bearing_criterion(
    spec: &SpectralWindow,
    spindle_speed: f64,
    defect_order: f64,
) -> Result<f64, MonitorError> {
    if !(defect_order.is_finite() && defect_order > 0.0) {
        return Err(MonitorError::InvalidArgument(format!(
            "defect order must be > 0, got {defect_order}"
        )));
    }
    let f = defect_order * spindle_hz(spindle_speed)?;
    if f > spec.nyquist() {
        return Err(MonitorError::AboveBand {
            freq: f,
            band: spec.nyquist(),
        });
    }
    Ok(spec.peak_near(f))
}

/// Level-1 processing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub window: WindowKind,
    /// Analysis band for V_RMS and Nh, Hz.
    pub bandwidth: f64,
    /// Per-workpiece band overrides (material knowledge), Hz.
    pub bandwidth_overrides: BTreeMap<String, f64>,
    /// Bearing defect orders; the bearing criterion is the max over them.
    pub defect_orders: Vec<f64>,
    pub tooth_counts: BTreeMap<String, u32>,
    pub default_tooth_count: u32,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window: WindowKind::Hann,
            bandwidth: 10_000.0,
            bandwidth_overrides: BTreeMap::new(),
            defect_orders: vec![4.9],
            tooth_counts: BTreeMap::new(),
            default_tooth_count: 2,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), MonitorError> {
        check_bandwidth(self.bandwidth)?;
        for bw in self.bandwidth_overrides.values() {
            check_bandwidth(*bw)?;
        }
        if let Some(o) = self.defect_orders.iter().find(|o| !(o.is_finite() && **o > 0.0)) {
            return Err(MonitorError::InvalidArgument(format!("defect order {o}")));
        }
        if self.default_tooth_count == 0 || self.tooth_counts.values().any(|&t| t == 0) {
            return Err(MonitorError::InvalidArgument("tooth counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn bandwidth_for(&self, workpiece_id: &str) -> f64 {
        self.bandwidth_overrides
            .get(workpiece_id)
            .copied()
            .unwrap_or(self.bandwidth)
    }

    pub fn tooth_count(&self, tool_id: &str) -> u32 {
        self.tooth_counts
            .get(tool_id)
            .copied()
            .unwrap_or(self.default_tooth_count)
    }
}

/// Monitoring criteria of one 0.1 s block joined with its context sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringRecord {
    pub time: f64,
    /// m/s², one per accelerometer.
    pub vrms: [f64; CHANNELS],
    pub nh: [f64; CHANNELS],
    pub unbalance: [f64; CHANNELS],
    pub bearing: [f64; CHANNELS],
    /// W.
    pub mean_power: f64,
    pub tool_id: String,
    pub program_name: String,
    pub workpiece_id: String,
    pub spindle_speed: f64,
    pub feedrate: f64,
    pub spindle_temperature: f64,
}

impl MonitoringRecord {
    pub fn is_idle(&self) -> bool {
        self.tool_id == crate::IDLE_TOOL
    }
}

/// Level-1 processor holding the FFT plan and the configuration.
#[derive(Clone)]
pub struct Monitor {
    config: MonitorConfig,
    analyzer: SpectrumAnalyzer,
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Result<Self, MonitorError> {
        config.validate()?;
        let analyzer = SpectrumAnalyzer::new(config.window);
        Ok(Self { config, analyzer })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn process(
        &self,
        block: &SignalBlock,
        ctx: &ContextSample,
    ) -> Result<MonitoringRecord, MonitorError> {
        if (block.start_time - ctx.time).abs() >= ALIGNMENT_TOLERANCE {
            return Err(MonitorError::Misaligned {
                block_time: block.start_time,
                context_time: ctx.time,
            });
        }
        let bandwidth = self.config.bandwidth_for(&ctx.workpiece_id);
        let turning = ctx.spindle_speed > 0.0;
        let tooth_count = self.config.tooth_count(&ctx.tool_id);

        let mut rec = MonitoringRecord {
            time: ctx.time,
            vrms: [0.0; CHANNELS],
            nh: [0.0; CHANNELS],
            unbalance: [0.0; CHANNELS],
            bearing: [0.0; CHANNELS],
            mean_power: block.power.iter().sum::<f64>() / block.power.len().max(1) as f64,
            tool_id: ctx.tool_id.clone(),
            program_name: ctx.program_name.clone(),
            workpiece_id: ctx.workpiece_id.clone(),
            spindle_speed: ctx.spindle_speed,
            feedrate: ctx.feedrate,
            spindle_temperature: ctx.spindle_temperature,
        };
        for (c, samples) in block.channels.iter().enumerate() {
            let spec = self.analyzer.spectrum(samples)?;
            rec.vrms[c] = spec.band_rms(bandwidth);
            if turning {
                rec.nh[c] = chatter_criterion_nh(&spec, ctx.spindle_speed, tooth_count, bandwidth)?;
                rec.unbalance[c] = unbalance_criterion(&spec, ctx.spindle_speed)?;
                for &order in &self.config.defect_orders {
                    let b = bearing_criterion(&spec, ctx.spindle_speed, order)?;
                    rec.bearing[c] = rec.bearing[c].max(b);
                }
            } else {
                rec.nh[c] = spec.asynchronous_peak(0.0, bandwidth).map_or(0.0, |(_, m)| m);
            }
        }
        Ok(rec)
    }
}

/// One-shot convenience over [`Monitor::process`].
pub fn process_block(
    block: &SignalBlock,
    ctx: &ContextSample,
    config: &MonitorConfig,
) -> Result<MonitoringRecord, MonitorError> {
    Monitor::new(config.clone())?.process(block, ctx)
}
