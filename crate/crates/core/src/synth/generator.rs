use std::f64::consts::{FRAC_PI_2, TAU};
use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner};

use super::{AnomalyKind, ContextSample, ScenarioError, ScenarioScript, SignalBlock};
use crate::{tick_time, BLOCK_LEN, CHANNELS, IDLE_TOOL, SAMPLE_RATE};

const BIN_WIDTH: f64 = SAMPLE_RATE / BLOCK_LEN as f64;
const NYQUIST: f64 = SAMPLE_RATE / 2.0;

/// Random-access generator over a validated scenario.
///
/// Block `i` depends only on the script and `i`: noise is drawn from ChaCha
/// stream `i + 1` of the seed, and every sinusoid is phase-referenced to
/// absolute time. Blocks can therefore be produced in any order or in
/// parallel with identical results.
pub struct Generator {
    script: ScenarioScript,
    inverse: Arc<dyn ComplexToReal<f64>>,
    harmonic_phases: Vec<[f64; CHANNELS]>,
    anomaly_phases: Vec<[f64; CHANNELS]>,
    entry_power: Vec<f64>,
    thermal: Vec<ThermalSegment>,
}

#[derive(Debug, Clone, Copy)]
struct ThermalSegment {
    start: f64,
    initial: f64,
    target: f64,
}

#[derive(Debug, Clone, Copy)]
struct Tone {
    freq: f64,
    amplitude: f64,
    phases: [f64; CHANNELS],
    span: (usize, usize),
}

impl Generator {
    pub fn new(script: &ScenarioScript) -> Result<Self, ScenarioError> {
        script.validate()?;
        let script = script.clone();
        let inverse = RealFftPlanner::<f64>::new().plan_fft_inverse(BLOCK_LEN);

        // Stream 0 holds per-scenario draws; block noise uses streams 1..
        let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
        rng.set_stream(0);
        let mut phases = |n: usize| -> Vec<[f64; CHANNELS]> {
            (0..n)
                .map(|_| std::array::from_fn(|_| rng.random::<f64>() * TAU))
                .collect()
        };
        let harmonic_phases = phases(script.signal.harmonic_amplitudes.len());
        let anomaly_phases = phases(script.anomalies.len());
        let sig = &script.signal;
        let entry_power = script
            .schedule
            .iter()
            .map(|e| {
                let u: f64 = rng.random();
                e.cutting_power.unwrap_or(
                    sig.cutting_power_min + u * (sig.cutting_power_max - sig.cutting_power_min),
                )
            })
            .collect();

        let thermal = thermal_segments(&script);
        Ok(Self {
            script,
            inverse,
            harmonic_phases,
            anomaly_phases,
            entry_power,
            thermal,
        })
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }

    pub fn block_count(&self) -> u64 {
        self.script.block_count()
    }

    /// Operational context at tick `index`.
    pub fn context(&self, index: u64) -> ContextSample {
        let t = tick_time(index);
        let temperature = self.temperature(t);
        match self.script.entry_at(t) {
            Some(e) => {
                let travelled = e.feedrate / 60.0 * (t - e.start);
                ContextSample {
                    time: t,
                    axis_position: [
                        250.0 + 200.0 * (travelled / 200.0).sin(),
                        150.0 + 100.0 * (travelled / 100.0).cos(),
                        -2.0,
                    ],
                    feedrate: e.feedrate,
                    spindle_speed: e.spindle_speed,
                    tool_id: e.tool_id.clone(),
                    program_name: e.program_name.clone(),
                    workpiece_id: e.workpiece_id.clone(),
                    spindle_temperature: temperature,
                }
            }
            None => ContextSample {
                time: t,
                axis_position: [0.0, 0.0, 150.0],
                feedrate: 0.0,
                spindle_speed: 0.0,
                tool_id: IDLE_TOOL.to_string(),
                program_name: String::new(),
                workpiece_id: String::new(),
                spindle_temperature: temperature,
            },
        }
    }

    fn temperature(&self, t: f64) -> f64 {
        let i = self.thermal.partition_point(|s| s.start <= t).max(1) - 1;
        let s = self.thermal[i];
        let tau = self.script.signal.thermal_time_constant;
        s.target + (s.initial - s.target) * (-(t - s.start).max(0.0) / tau).exp()
    }

    /// Raw signal block `index`.
    pub fn block(&self, index: u64) -> SignalBlock {
        let t0 = tick_time(index);
        let sig = &self.script.signal;
        let entry_idx = self.entry_index(t0);
        let spindle_hz = entry_idx.map_or(0.0, |i| self.script.schedule[i].spindle_speed / 60.0);
        let tones = self.tones(t0, spindle_hz);

        let mut rng = ChaCha8Rng::seed_from_u64(self.script.seed);
        rng.set_stream(index + 1);

        let noise_bins = ((sig.noise_bandwidth / BIN_WIDTH + 1e-9).floor() as usize)
            .clamp(1, BLOCK_LEN / 2 - 1);
        let noise_scale = sig.noise_std / (2.0 * (noise_bins as f64).sqrt());

        let mut spectrum = self.inverse.make_input_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        let channels: [Vec<f64>; CHANNELS] = std::array::from_fn(|c| {
            spectrum.fill(Complex::new(0.0, 0.0));
            for bin in spectrum.iter_mut().take(noise_bins + 1).skip(1) {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *bin = Complex::new(re, im) * noise_scale;
            }
            let mut time_domain = Vec::new();
            for tone in &tones {
                let theta = TAU * (tone.freq * t0).rem_euclid(1.0) + tone.phases[c];
                match aligned_bin(tone.freq) {
                    Some(m) if tone.span == (0, BLOCK_LEN) => {
                        // 2 Re(X_m e^{i2πmn/N}) = A sin(2πmn/N + θ)
                        spectrum[m] += Complex::from_polar(tone.amplitude / 2.0, theta - FRAC_PI_2);
                    }
                    _ => time_domain.push((tone, theta)),
                }
            }
            let mut out = vec![0.0; BLOCK_LEN];
            self.inverse
                .process_with_scratch(&mut spectrum, &mut out, &mut scratch)
                .expect("buffer sizes come from the plan");
            for (tone, theta) in time_domain {
                add_sinusoid(&mut out, tone, theta);
            }
            out
        });

        let level = match entry_idx {
            Some(i) => self.entry_power[i],
            None => sig.idle_power,
        };
        let power = (0..BLOCK_LEN)
            .map(|_| {
                let g: f64 = rng.sample(StandardNormal);
                level * (1.0 + sig.power_noise * g)
            })
            .collect();

        SignalBlock {
            block_index: index,
            start_time: t0,
            channels,
            power,
            sample_rate: SAMPLE_RATE,
        }
    }

    /// Blocks for a range of indices, generated in parallel, in index order.
    pub fn blocks(&self, range: Range<u64>) -> Vec<SignalBlock> {
        range.into_par_iter().map(|i| self.block(i)).collect()
    }

    fn entry_index(&self, t: f64) -> Option<usize> {
        let idx = self.script.schedule.partition_point(|e| e.start <= t + 1e-9);
        idx.checked_sub(1)
            .filter(|&i| self.script.schedule[i].covers(t))
    }

    fn tones(&self, t0: f64, spindle_hz: f64) -> Vec<Tone> {
        let sig = &self.script.signal;
        let mut tones = Vec::new();
        if spindle_hz > 0.0 {
            for (h, (&amp, phases)) in sig
                .harmonic_amplitudes
                .iter()
                .zip(&self.harmonic_phases)
                .enumerate()
            {
                tones.push(Tone {
                    freq: (h + 1) as f64 * spindle_hz,
                    amplitude: amp,
                    phases: *phases,
                    span: (0, BLOCK_LEN),
                });
            }
        }
        for (a, phases) in self.script.anomalies.iter().zip(&self.anomaly_phases) {
            let span = active_span(a.start, a.end, t0);
            if span.0 >= span.1 {
                continue;
            }
            let tone = match a.kind {
                AnomalyKind::Chatter => Tone {
                    freq: a.frequency,
                    amplitude: a.magnitude,
                    phases: *phases,
                    span,
                },
                AnomalyKind::UnbalanceGrowth if spindle_hz > 0.0 => {
                    // Coherent with the baseline 1x so the sum has amplitude `magnitude`.
                    match (sig.harmonic_amplitudes.first(), self.harmonic_phases.first()) {
                        (Some(&base), Some(p)) => Tone {
                            freq: spindle_hz,
                            amplitude: a.magnitude - base,
                            phases: *p,
                            span,
                        },
                        _ => Tone {
                            freq: spindle_hz,
                            amplitude: a.magnitude,
                            phases: *phases,
                            span,
                        },
                    }
                }
                AnomalyKind::BearingDefect if spindle_hz > 0.0 => Tone {
                    freq: a.frequency * spindle_hz,
                    amplitude: a.magnitude,
                    phases: *phases,
                    span,
                },
                _ => continue,
            };
            tones.push(tone);
        }
        tones.retain(|t| t.freq > 0.0 && t.freq < NYQUIST && t.amplitude != 0.0);
        tones
    }
}

/// Sample indices of the block starting at `t0` that fall inside `[start, end)`.
fn active_span(start: f64, end: f64, t0: f64) -> (usize, usize) {
    let to_index = |t: f64| -> usize {
        let n = ((t - t0) * SAMPLE_RATE - 1e-6).ceil();
        n.clamp(0.0, BLOCK_LEN as f64) as usize
    };
    (to_index(start), to_index(end))
}

fn aligned_bin(freq: f64) -> Option<usize> {
    let m = freq / BIN_WIDTH;
    let r = m.round();
    ((m - r).abs() < 1e-9 && r >= 1.0 && r < (BLOCK_LEN / 2) as f64).then_some(r as usize)
}

fn add_sinusoid(out: &mut [f64], tone: &Tone, theta: f64) {
    let (lo, hi) = tone.span;
    let step = Complex::from_polar(1.0, TAU * tone.freq / SAMPLE_RATE);
    let mut z = Complex::from_polar(1.0, theta + TAU * tone.freq * lo as f64 / SAMPLE_RATE);
    for x in &mut out[lo..hi] {
        *x += tone.amplitude * z.im;
        z *= step;
    }
}

fn thermal_segments(script: &ScenarioScript) -> Vec<ThermalSegment> {
    let sig = &script.signal;
    let mut bounds: Vec<f64> = std::iter::once(0.0)
        .chain(script.schedule.iter().flat_map(|e| [e.start, e.end]))
        .collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let mut segments: Vec<ThermalSegment> = Vec::with_capacity(bounds.len());
    let mut current = sig.ambient_temperature;
    for &start in &bounds {
        if let Some(prev) = segments.last() {
            let elapsed = start - prev.start;
            current = prev.target
                + (prev.initial - prev.target) * (-elapsed / sig.thermal_time_constant).exp();
        }
        let speed = script.entry_at(start).map_or(0.0, |e| e.spindle_speed);
        segments.push(ThermalSegment {
            start,
            initial: current,
            target: sig.ambient_temperature + sig.heating_per_krpm * speed / 1000.0,
        });
    }
    segments
}

/// Generates the whole scenario in memory.
///
/// Only suitable for short scenarios: one block holds 12 500 samples. Long
/// runs should pull blocks from a [`Generator`] in chunks.
pub fn generate_stream(
    script: &ScenarioScript,
) -> Result<(Vec<SignalBlock>, Vec<ContextSample>), ScenarioError> {
    let generator = Generator::new(script)?;
    let n = generator.block_count();
    let blocks = generator.blocks(0..n);
    let contexts = (0..n).map(|i| generator.context(i)).collect();
    Ok((blocks, contexts))
}

