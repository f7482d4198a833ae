//! Wiring of the four agents and the batch commands built on the store.
//!
//! A run directory holds:
//!
//! ```text
//! <out>/store/          record store (see docs/store-format.md)
//! <out>/reports/        report files per spec and indicator
//! <out>/outbox/         one JSON message per dispatched report
//! <out>/summary.json    RunSummary of the last `run`
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::thread;

use crossbeam_channel::bounded;
use serde::{Deserialize, Serialize};

use super::agents::{computing, hmi, reporting, traceability};
use super::config::PipelineConfig;
use super::message::{AgentId, AgentMessage, Mailbox, TraceEntry};
use super::outbox::dispatch_report;
use super::report::build_report;
use super::OrchestrateError;
use crate::aggregate::{learn_threshold, pooled_values, Criterion, SmartDatum, Threshold, ToolUsagePeriod};
use crate::kpi::{instantiate, join_periods, schedule, Clock};
use crate::monitor::MonitoringRecord;
use crate::store::{write_atomic, RecordStore, Row, RowFilter, StoreOptions, Stream, StreamStats};
use crate::synth::{write_scenario, Generator};

pub const SUMMARY_FILE: &str = "summary.json";

/// Outcome of a run; deterministic for a given configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub machine_id: String,
    pub seed: u64,
    /// Simulated duration, s.
    pub duration: f64,
    pub blocks: u64,
    /// Rows and bytes per store stream.
    pub streams: BTreeMap<String, StreamStats>,
    pub periods: usize,
    pub smart_data: usize,
    pub thresholds: Vec<Threshold>,
    pub indicators: Vec<String>,
    /// Report files, relative to the run directory.
    pub reports: Vec<PathBuf>,
    /// Outbox messages, relative to the run directory.
    pub outbox: Vec<PathBuf>,
    /// Messages exchanged between agents.
    pub messages: usize,
}

pub fn store_dir(out: &Path) -> PathBuf {
    out.join("store")
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestrateError + '_ {
    move |source| OrchestrateError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs every stage into `out`, which must not already hold store rows.
pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<RunSummary, OrchestrateError> {
    run_traced(config, out).map(|(s, _)| s)
}

/// [`run_pipeline`] that also returns every message header exchanged, in
/// per-agent send order.
pub fn run_traced(config: &PipelineConfig, out: &Path) -> Result<(RunSummary, Vec<TraceEntry>), OrchestrateError> {
    config.validate().map_err(OrchestrateError::InvalidConfig)?;
    std::fs::create_dir_all(out).map_err(io_at(out))?;
    let store = RecordStore::open_with(store_dir(out), StoreOptions { sync: config.store.sync })?;
    if Stream::ALL.iter().any(|&s| store.stats(s).rows > 0) {
        return Err(OrchestrateError::NonEmptyStore(store_dir(out)));
    }

    let cap = config.runtime.queue_capacity;
    let agents = [AgentId::Hmi, AgentId::Computing, AgentId::Traceability, AgentId::Reporting];
    let (senders, mut receivers): (BTreeMap<_, _>, BTreeMap<_, _>) = agents
        .iter()
        .map(|&a| {
            let (tx, rx) = bounded::<AgentMessage>(cap);
            ((a, tx), (a, rx))
        })
        .unzip();
    // Who may post to whom.
    let routes: [(AgentId, &[AgentId]); 4] = [
        (AgentId::Hmi, &[AgentId::Computing, AgentId::Traceability, AgentId::Reporting]),
        (AgentId::Computing, &[AgentId::Hmi, AgentId::Traceability]),
        (AgentId::Traceability, &[AgentId::Hmi, AgentId::Computing]),
        (AgentId::Reporting, &[AgentId::Hmi]),
    ];
    let mut mailboxes: BTreeMap<AgentId, Mailbox> = routes
        .iter()
        .map(|(me, peers)| {
            let peers = peers.iter().map(|p| (*p, senders[p].clone())).collect();
            (*me, Mailbox::new(*me, receivers.remove(me).expect("inbox"), peers))
        })
        .collect();
    drop(senders);

    let mut take = |a: AgentId| mailboxes.remove(&a).expect("mailbox");
    let (hmi_box, computing_box, trace_box, reporting_box) = (
        take(AgentId::Hmi),
        take(AgentId::Computing),
        take(AgentId::Traceability),
        take(AgentId::Reporting),
    );
    let root = out.to_path_buf();
    let (result, trace) = thread::scope(|s| {
        let workers = [
            (AgentId::Computing, s.spawn(move || computing::run(computing_box, cap))),
            (AgentId::Traceability, s.spawn(move || traceability::run(trace_box, store))),
            (AgentId::Reporting, s.spawn(move || reporting::run(reporting_box, root))),
        ];
        let (result, mut trace) = hmi::run(hmi_box, config);
        for (agent, w) in workers {
            match w.join() {
                Ok(t) => trace.extend(t),
                Err(_) => {
                    return (
                        Err(OrchestrateError::Stage {
                            agent,
                            stage: "thread".into(),
                            message: "agent panicked".into(),
                        }),
                        trace,
                    )
                }
            }
        }
        (result.map_err(|f| OrchestrateError::Stage {
            agent: f.agent,
            stage: f.stage,
            message: f.message,
        }), trace)
    });
    let outcome = result?;

    let c = &outcome.computed;
    let summary = RunSummary {
        machine_id: config.machine_id.clone(),
        seed: config.scenario().seed,
        duration: config.scenario().duration,
        blocks: c.blocks,
        streams: outcome.stats.iter().map(|(s, st)| (s.name().to_string(), *st)).collect(),
        periods: c.periods,
        smart_data: c.smart_data,
        thresholds: c.thresholds.clone(),
        indicators: c.indicators.iter().map(|(_, i)| i.indicator_id.clone()).collect(),
        reports: outcome.reports.reports.clone(),
        outbox: outcome.reports.outbox.clone(),
        messages: trace.len(),
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    let path = out.join(SUMMARY_FILE);
    write_atomic(&path, json.as_bytes(), config.store.sync).map_err(io_at(&path))?;
    Ok((summary, trace))
}

fn open_existing(out: &Path) -> Result<RecordStore, OrchestrateError> {
    let dir = store_dir(out);
    if !dir.is_dir() {
        return Err(OrchestrateError::MissingStore(dir));
    }
    Ok(RecordStore::open(dir)?)
}

/// Per-stream counts of the store in `out`, with any torn tails it dropped.
pub fn store_stats(out: &Path) -> Result<(BTreeMap<Stream, StreamStats>, Vec<crate::store::Recovery>), OrchestrateError> {
    let store = open_existing(out)?;
    let stats = Stream::ALL.iter().map(|&s| (s, store.stats(s))).collect();
    Ok((stats, store.recovered().to_vec()))
}

/// Files written by [`report_from_store`], relative to `out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRun {
    pub indicators: Vec<String>,
    pub reports: Vec<PathBuf>,
    pub outbox: Vec<PathBuf>,
}

/// Re-instantiates every report spec of `config` from the stored periods and
/// smart data, then builds and dispatches the reports.
pub fn report_from_store(config: &PipelineConfig, out: &Path) -> Result<ReportRun, OrchestrateError> {
    config.validate().map_err(OrchestrateError::InvalidConfig)?;
    let store = match open_existing(out) {
        Ok(s) => s,
        Err(OrchestrateError::MissingStore(_)) => return Err(OrchestrateError::NoSmartData),
        Err(e) => return Err(e),
    };
    if store.stats(Stream::SmartData).rows == 0 {
        return Err(OrchestrateError::NoSmartData);
    }
    let periods = store.snapshot::<ToolUsagePeriod>(&RowFilter::all())?;
    let smart = store.snapshot::<SmartDatum>(&RowFilter::all())?;
    let joined = join_periods(&periods, &smart).map_err(|e| stage_kpi(e.to_string()))?;
    let clock = Clock {
        start: 0.0,
        end: config.scenario().duration,
    };
    let outbox = out.join("outbox");
    let mut run = ReportRun::default();
    for spec in &config.reports {
        let models = config.models_for(spec);
        for trigger in schedule(&spec.context.mode, clock, &joined).map_err(|e| stage_kpi(e.to_string()))? {
            let indicator = instantiate(&spec.context, &models, &joined, &trigger).map_err(|e| stage_kpi(e.to_string()))?;
            let report = build_report(spec, &indicator, out)?;
            let sent = dispatch_report(&report, out, &outbox)?;
            run.indicators.push(indicator.indicator_id);
            run.reports.extend(report.files);
            run.outbox.push(sent.strip_prefix(out).map(Path::to_path_buf).unwrap_or(sent));
        }
    }
    Ok(run)
}

fn stage_kpi(message: String) -> OrchestrateError {
    OrchestrateError::Stage {
        agent: AgentId::Computing,
        stage: "kpi".into(),
        message,
    }
}

/// Learns a threshold for every criterion the configured CO/T metrics
/// compare against, from the monitoring stream stored in `out`.
pub fn learn_from_store(config: &PipelineConfig, out: &Path) -> Result<Vec<Threshold>, OrchestrateError> {
    let store = open_existing(out)?;
    let records = store.snapshot::<MonitoringRecord>(&RowFilter::all())?;
    if records.is_empty() {
        return Err(OrchestrateError::NoMonitoringData);
    }
    let mut criteria: Vec<Criterion> = config
        .metrics
        .iter()
        .filter(|m| m.operator.needs_threshold())
        .map(|m| m.threshold_criterion())
        .collect();
    criteria.sort();
    criteria.dedup();
    criteria
        .into_iter()
        .map(|c| {
            learn_threshold(c, &pooled_values(&records, c)).map_err(|e| OrchestrateError::Stage {
                agent: AgentId::Computing,
                stage: "thresholds".into(),
                message: format!("{c}: {e}"),
            })
        })
        .collect()
}

/// Files written by [`generate`], relative to `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRun {
    pub blocks: u64,
    pub files: Vec<PathBuf>,
}

/// Level 0 only: writes the resolved scenario, the 10 Hz context stream and
/// the raw samples of the first `raw_blocks` blocks as CSV.
pub fn generate(config: &PipelineConfig, out: &Path, raw_blocks: u64) -> Result<GenerateRun, OrchestrateError> {
    config.validate().map_err(OrchestrateError::InvalidConfig)?;
    std::fs::create_dir_all(out).map_err(io_at(out))?;
    let script = config.scenario();
    let generator = Generator::new(script).map_err(|e| OrchestrateError::Stage {
        agent: AgentId::Computing,
        stage: "generate".into(),
        message: e.to_string(),
    })?;
    let n = generator.block_count();
    let scenario = out.join("scenario.toml");
    write_scenario(script, &scenario).map_err(|e| OrchestrateError::Io {
        path: scenario.clone(),
        source: std::io::Error::other(e.to_string()),
    })?;

    let csv_io = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| OrchestrateError::Io {
            path,
            source: std::io::Error::other(e),
        }
    };
    let context = out.join("context.csv");
    let mut w = csv::Writer::from_path(&context).map_err(csv_io(&context))?;
    w.write_record([
        "time",
        "axis_x",
        "axis_y",
        "axis_z",
        "feedrate",
        "spindle_speed",
        "tool_id",
        "program_name",
        "workpiece_id",
        "spindle_temperature",
    ])
    .map_err(csv_io(&context))?;
    for i in 0..n {
        let c = generator.context(i);
        let [x, y, z] = c.axis_position;
        w.write_record([
            c.time.to_string(),
            x.to_string(),
            y.to_string(),
            z.to_string(),
            c.feedrate.to_string(),
            c.spindle_speed.to_string(),
            c.tool_id,
            c.program_name,
            c.workpiece_id,
            c.spindle_temperature.to_string(),
        ])
        .map_err(csv_io(&context))?;
    }
    w.flush().map_err(io_at(&context))?;

    let mut files = vec![PathBuf::from("scenario.toml"), PathBuf::from("context.csv")];
    let raw = raw_blocks.min(n);
    if raw > 0 {
        let signal = out.join("signal.csv");
        let mut w = csv::Writer::from_path(&signal).map_err(csv_io(&signal))?;
        w.write_record(crate::synth::SignalBlock::csv_header()).map_err(csv_io(&signal))?;
        for i in 0..raw {
            for rec in generator.block(i).csv_records() {
                w.write_record(&rec).map_err(csv_io(&signal))?;
            }
        }
        w.flush().map_err(io_at(&signal))?;
        files.push(PathBuf::from("signal.csv"));
    }
    Ok(GenerateRun { blocks: n, files })
}
