//! Computing agent: levels 0 to 3.
//!
//! Streams generated blocks through the monitor in chunks and hands every
//! chunk to Traceability, never holding more than `queue_capacity` appends in
//! flight. Once the monitoring stream is complete it reads it back, segments
//! it, fixes thresholds, aggregates periods (in parallel) and instantiates
//! the indicators of every report spec.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;

use crate::aggregate::{
    aggregate_periods, learn_threshold, pooled_values, segment_periods, Criterion, Threshold, ThresholdSet,
};
use crate::kpi::{instantiate, join_periods, schedule, Clock};
use crate::monitor::{Monitor, MonitoringRecord};
use crate::orchestrate::config::{PipelineConfig, ThresholdMode};
use crate::orchestrate::message::{
    panic_message, AgentId, AgentMessage, ComputeOutcome, Mailbox, MessageKind, Payload, Rows, SnapshotRows,
    TraceEntry,
};
use crate::store::Stream;
use crate::synth::Generator;

/// A failed step, named for the summary.
struct Failed {
    stage: &'static str,
    message: String,
}

fn at(stage: &'static str) -> impl Fn(String) -> Failed {
    move |message| Failed { stage, message }
}

/// Requests to Traceability with a cap on unanswered appends.
struct StoreLink {
    mailbox: Mailbox,
    in_flight: usize,
    capacity: usize,
}

impl StoreLink {
    fn settle(&mut self, msg: AgentMessage) -> Result<(), Failed> {
        self.in_flight -= 1;
        match (msg.kind, msg.payload) {
            (MessageKind::Result, Payload::Appended { .. }) => Ok(()),
            (_, Payload::Failure { stage, message }) => Err(Failed {
                stage: "store",
                message: format!("{stage}: {message}"),
            }),
            (_, other) => Err(Failed {
                stage: "store",
                message: format!("unexpected {}", other.label()),
            }),
        }
    }

    fn next(&mut self) -> Result<AgentMessage, Failed> {
        self.mailbox.recv().ok_or(Failed {
            stage: "store",
            message: "traceability agent stopped".into(),
        })
    }

    /// Queues rows; blocks while `capacity` appends are unanswered.
    fn append(&mut self, rows: Rows) -> Result<(), Failed> {
        while self.in_flight >= self.capacity {
            let msg = self.next()?;
            self.settle(msg)?;
        }
        self.mailbox
            .request(AgentId::Traceability, Payload::Append(rows))
            .map_err(|e| at("store")(e.to_string()))?;
        self.in_flight += 1;
        Ok(())
    }

    fn drain(&mut self) -> Result<(), Failed> {
        while self.in_flight > 0 {
            let msg = self.next()?;
            self.settle(msg)?;
        }
        Ok(())
    }

    /// Collects outstanding replies after a failure, ignoring their content.
    fn abandon(&mut self) {
        while self.in_flight > 0 {
            match self.next() {
                Ok(msg) => {
                    let _ = self.settle(msg);
                }
                Err(_) => break,
            }
        }
    }

    fn snapshot(&mut self, stream: Stream) -> Result<SnapshotRows, Failed> {
        self.drain()?;
        let id = self
            .mailbox
            .request(AgentId::Traceability, Payload::Snapshot(stream))
            .map_err(|e| at("store")(e.to_string()))?;
        let msg = self.next()?;
        match msg.payload {
            Payload::SnapshotData(rows) if msg.correlation_id == id => Ok(rows),
            Payload::Failure { message, .. } => Err(at("store")(message)),
            other => Err(at("store")(format!("unexpected {}", other.label()))),
        }
    }
}

fn monitoring_stage(cfg: &PipelineConfig, link: &mut StoreLink) -> Result<u64, Failed> {
    let generator = Generator::new(cfg.scenario()).map_err(|e| at("generate")(e.to_string()))?;
    let monitor = Monitor::new(cfg.monitor.clone()).map_err(|e| at("monitor")(e.to_string()))?;
    let n = generator.block_count();
    let chunk = cfg.runtime.chunk_blocks;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let records: Vec<MonitoringRecord> = (start..end)
            .into_par_iter()
            .map(|i| {
                let block = generator.block(i);
                monitor.process(&block, &generator.context(i))
            })
            .collect::<Result<_, _>>()
            .map_err(|e| at("monitor")(e.to_string()))?;
        link.append(Rows::Monitoring(records))?;
        if cfg.store.dump_raw {
            link.append(Rows::RawSignal(generator.blocks(start..end)))?;
        }
        start = end;
    }
    link.drain()?;
    Ok(n)
}

fn thresholds(cfg: &PipelineConfig, records: &[MonitoringRecord], any_period: bool) -> Result<ThresholdSet, Failed> {
    let configured = cfg.thresholds.configured().map_err(at("thresholds"))?;
    if !any_period {
        return Ok(BTreeMap::new());
    }
    let mut needed: Vec<Criterion> = cfg
        .metrics
        .iter()
        .filter(|m| m.operator.needs_threshold())
        .map(|m| m.threshold_criterion())
        .collect();
    needed.sort();
    needed.dedup();
    let mut set = BTreeMap::new();
    for c in needed {
        let t = match (configured.get(&c), cfg.thresholds.mode) {
            (Some(&v), _) => Threshold::configured(c, v),
            (None, ThresholdMode::Learn) => {
                learn_threshold(c, &pooled_values(records, c)).map_err(|e| at("thresholds")(format!("{c}: {e}")))?
            }
            (None, ThresholdMode::Fixed) => return Err(at("thresholds")(format!("no fixed threshold for {c}"))),
        };
        set.insert(c, t);
    }
    Ok(set)
}

fn compute(cfg: &PipelineConfig, link: &mut StoreLink) -> Result<ComputeOutcome, Failed> {
    let blocks = monitoring_stage(cfg, link)?;
    let SnapshotRows::Monitoring(records) = link.snapshot(Stream::Monitoring)? else {
        return Err(at("store")("wrong snapshot stream".into()));
    };

    let periods = segment_periods(&records, &cfg.machine_id, &cfg.segment).map_err(|e| at("segment")(e.to_string()))?;
    let thresholds = thresholds(cfg, &records, !periods.is_empty())?;
    let smart = if periods.is_empty() {
        Vec::new()
    } else {
        aggregate_periods(&periods, &records, &thresholds, &cfg.metrics, &cfg.cut)
            .map_err(|e| at("aggregate")(e.to_string()))?
    };
    drop(records);
    let threshold_rows: Vec<Threshold> = thresholds.into_values().collect();
    link.append(Rows::Periods(periods.clone()))?;
    link.append(Rows::Thresholds(threshold_rows.clone()))?;
    link.append(Rows::SmartData(smart.clone()))?;

    let joined = join_periods(&periods, &smart).map_err(|e| at("kpi")(e.to_string()))?;
    let clock = Clock {
        start: 0.0,
        end: cfg.scenario().duration,
    };
    let mut indicators = Vec::new();
    for spec in &cfg.reports {
        let models = cfg.models_for(spec);
        let triggers = schedule(&spec.context.mode, clock, &joined).map_err(|e| at("kpi")(format!("{}: {e}", spec.name)))?;
        for trigger in &triggers {
            let ind = instantiate(&spec.context, &models, &joined, trigger)
                .map_err(|e| at("kpi")(format!("{}: {e}", spec.name)))?;
            indicators.push((spec.name.clone(), ind));
        }
    }
    link.append(Rows::Indicators(indicators.iter().map(|(_, i)| i.clone()).collect()))?;
    link.drain()?;
    Ok(ComputeOutcome {
        blocks,
        periods: periods.len(),
        smart_data: smart.len(),
        thresholds: threshold_rows,
        indicators,
    })
}

/// Serves `Compute` requests from the HMI until shut down.
pub fn run(mailbox: Mailbox, queue_capacity: usize) -> Vec<TraceEntry> {
    let mut link = StoreLink {
        mailbox,
        in_flight: 0,
        capacity: queue_capacity.max(1),
    };
    while let Some(msg) = link.mailbox.recv() {
        match &msg.payload {
            Payload::Shutdown => break,
            Payload::Compute(cfg) if msg.kind == MessageKind::Request => {
                let result = catch_unwind(AssertUnwindSafe(|| compute(cfg, &mut link))).unwrap_or_else(|p| {
                    Err(Failed {
                        stage: "compute",
                        message: panic_message(p),
                    })
                });
                let reply = match result {
                    Ok(outcome) => Payload::Computed(Box::new(outcome)),
                    Err(f) => {
                        link.abandon();
                        Payload::Failure {
                            stage: f.stage.into(),
                            message: f.message,
                        }
                    }
                };
                if link.mailbox.reply(&msg, reply).is_err() {
                    break;
                }
            }
            _ => {}
        }
    }
    link.mailbox.into_trace()
}
