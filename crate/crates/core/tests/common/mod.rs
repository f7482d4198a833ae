//! Scenario builders shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use machagg::kpi::Mode;
use machagg::orchestrate::PipelineConfig;
use machagg::synth::{AnomalyEvent, AnomalyKind, ScenarioScript, ScheduleEntry, SignalParams};

/// Spindle speed, chatter frequency (off every tooth-passing harmonic) per tool.
pub const TOOLS: [(&str, f64, f64); 3] = [("10026", 24_000.0, 1230.0), ("20001", 12_000.0, 1730.0), ("30017", 18_000.0, 1130.0)];

pub const CYCLE: f64 = 600.0;

pub fn entry(tool: &str, program: &str, workpiece: &str, start: f64, end: f64, rpm: f64) -> ScheduleEntry {
    ScheduleEntry {
        tool_id: tool.into(),
        program_name: program.into(),
        workpiece_id: workpiece.into(),
        start,
        end,
        spindle_speed: rpm,
        feedrate: rpm / 4.0,
        cutting_power: None,
    }
}

pub fn anomaly(kind: AnomalyKind, start: f64, end: f64, magnitude: f64, frequency: f64) -> AnomalyEvent {
    AnomalyEvent {
        kind,
        start,
        end,
        magnitude,
        frequency,
    }
}

pub fn script(seed: u64, duration: f64, schedule: Vec<ScheduleEntry>, anomalies: Vec<AnomalyEvent>) -> ScenarioScript {
    ScenarioScript {
        seed,
        duration,
        signal: SignalParams::default(),
        schedule,
        anomalies,
    }
}

/// `cycles` back-to-back 600 s production cycles. Each cycle runs the three
/// tools for 190 s apiece; tool 10026 gets `chatter_10026` seconds of 30 m/s²
/// chatter per cycle (in two equal bursts), the others 1 s each.
/// Returns the script and the planted chatter seconds per tool.
pub fn production(seed: u64, cycles: u32, chatter_10026: f64) -> (ScenarioScript, BTreeMap<String, f64>) {
    let mut schedule = Vec::new();
    let mut anomalies = Vec::new();
    let mut planted = BTreeMap::new();
    for k in 0..cycles {
        let c = k as f64 * CYCLE;
        let (program, workpiece) = if k % 2 == 0 {
            ("PRG_RIB_01", format!("WP-{k:04}"))
        } else {
            ("PRG_POCKET_02", format!("WP-{k:04}"))
        };
        for (j, (tool, rpm, freq)) in TOOLS.iter().enumerate() {
            let start = c + 5.0 + 200.0 * j as f64;
            schedule.push(entry(tool, program, &workpiece, start, start + 190.0, *rpm));
            if j == 0 {
                let half = chatter_10026 / 2.0;
                anomalies.push(anomaly(AnomalyKind::Chatter, start + 45.0, start + 45.0 + half, 30.0, *freq));
                anomalies.push(anomaly(AnomalyKind::Chatter, start + 115.0, start + 115.0 + half, 30.0, *freq));
                *planted.entry(tool.to_string()).or_insert(0.0) += chatter_10026;
            } else {
                anomalies.push(anomaly(AnomalyKind::Chatter, start + 45.0, start + 46.0, 30.0, *freq));
                *planted.entry(tool.to_string()).or_insert(0.0) += 1.0;
            }
        }
    }
    (script(seed, cycles as f64 * CYCLE, schedule, anomalies), planted)
}

/// The demo configuration with `script` as scenario and a single on-demand
/// indicator at the end of the run.
pub fn config_for(script: ScenarioScript) -> PipelineConfig {
    let mut cfg = PipelineConfig::demo();
    let end = script.duration;
    cfg.scenario = Some(script);
    for r in &mut cfg.reports {
        r.context.mode = Mode::OnDemand { requests: vec![end] };
    }
    cfg.validate().expect("test configuration is valid");
    cfg
}

/// Every regular file under `root`, relative, sorted.
pub fn tree(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// First file that differs between two run directories, if any.
pub fn first_difference(a: &Path, b: &Path) -> Option<String> {
    let (ta, tb) = (tree(a), tree(b));
    if ta != tb {
        return Some(format!("file lists differ: {ta:?} vs {tb:?}"));
    }
    ta.into_iter()
        .find(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .map(|f| format!("{} differs", f.display()))
}
