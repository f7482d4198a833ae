//! Messages exchanged between agents. Agents share nothing else.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crossbeam_channel::{Receiver, Sender};
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::report::ReportSpec;
use crate::aggregate::{SmartDatum, Threshold, ToolUsagePeriod};
use crate::kpi::DecisionAidIndicator;
use crate::monitor::MonitoringRecord;
use crate::store::{Snapshot, Stream, StreamStats};
use crate::synth::SignalBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    /// Configuration and run control.
    Hmi,
    /// Level 0 to level 3 computation.
    Computing,
    /// Owner of the store.
    Traceability,
    /// Report files and outbox.
    Reporting,
}

impl AgentId {
    fn code(self) -> u64 {
        match self {
            AgentId::Hmi => 1,
            AgentId::Computing => 2,
            AgentId::Traceability => 3,
            AgentId::Reporting => 4,
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentId::Hmi => "hmi",
            AgentId::Computing => "computing",
            AgentId::Traceability => "traceability",
            AgentId::Reporting => "reporting",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Request,
    Result,
    Event,
    Error,
}

/// A batch of rows for one stream.
#[derive(Debug, Clone)]
pub enum Rows {
    Monitoring(Vec<MonitoringRecord>),
    Periods(Vec<ToolUsagePeriod>),
    SmartData(Vec<SmartDatum>),
    Thresholds(Vec<Threshold>),
    Indicators(Vec<DecisionAidIndicator>),
    RawSignal(Vec<SignalBlock>),
}

impl Rows {
    pub fn stream(&self) -> Stream {
        match self {
            Rows::Monitoring(_) => Stream::Monitoring,
            Rows::Periods(_) => Stream::Periods,
            Rows::SmartData(_) => Stream::SmartData,
            Rows::Thresholds(_) => Stream::Thresholds,
            Rows::Indicators(_) => Stream::Indicators,
            Rows::RawSignal(_) => Stream::RawSignal,
        }
    }
}

/// A snapshot read back from the store.
#[derive(Debug, Clone)]
pub enum SnapshotRows {
    Monitoring(Snapshot<MonitoringRecord>),
    Periods(Snapshot<ToolUsagePeriod>),
    SmartData(Snapshot<SmartDatum>),
}

/// What Computing produced, reported back to the HMI.
#[derive(Debug, Clone)]
pub struct ComputeOutcome {
    pub blocks: u64,
    pub periods: usize,
    pub smart_data: usize,
    pub thresholds: Vec<Threshold>,
    /// Indicators with the name of the report spec they belong to.
    pub indicators: Vec<(String, DecisionAidIndicator)>,
}

#[derive(Debug, Clone)]
pub struct ReportJob {
    pub spec: ReportSpec,
    pub indicator: DecisionAidIndicator,
}

/// Files written by Reporting, relative to the run directory.
#[derive(Debug, Clone, Default)]
pub struct ReportOutcome {
    pub reports: Vec<PathBuf>,
    pub outbox: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum Payload {
    /// HMI asks Computing to run the whole computation.
    Compute(Box<PipelineConfig>),
    Computed(Box<ComputeOutcome>),
    Append(Rows),
    Appended { stream: Stream, rows: usize },
    Snapshot(Stream),
    SnapshotData(SnapshotRows),
    Stats,
    StatsData(BTreeMap<Stream, StreamStats>),
    BuildReports(Vec<ReportJob>),
    ReportsBuilt(ReportOutcome),
    /// Drain the inbox and stop.
    Shutdown,
    /// A stage failed.
    Failure { stage: String, message: String },
}

impl Payload {
    pub fn label(&self) -> &'static str {
        match self {
            Payload::Compute(_) => "compute",
            Payload::Computed(_) => "computed",
            Payload::Append(_) => "append",
            Payload::Appended { .. } => "appended",
            Payload::Snapshot(_) => "snapshot",
            Payload::SnapshotData(_) => "snapshot_data",
            Payload::Stats => "stats",
            Payload::StatsData(_) => "stats_data",
            Payload::BuildReports(_) => "build_reports",
            Payload::ReportsBuilt(_) => "reports_built",
            Payload::Shutdown => "shutdown",
            Payload::Failure { .. } => "failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentMessage {
    pub msg_id: u64,
    pub from: AgentId,
    pub to: AgentId,
    pub kind: MessageKind,
    /// Requests carry their own id; results and errors carry the request's.
    pub correlation_id: u64,
    pub payload: Payload,
}

/// Payload-free record of one message, kept for auditing the exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub msg_id: u64,
    pub from: AgentId,
    pub to: AgentId,
    pub kind: MessageKind,
    pub correlation_id: u64,
    pub payload: String,
}

impl From<&AgentMessage> for TraceEntry {
    fn from(m: &AgentMessage) -> Self {
        Self {
            msg_id: m.msg_id,
            from: m.from,
            to: m.to,
            kind: m.kind,
            correlation_id: m.correlation_id,
            payload: m.payload.label().to_string(),
        }
    }
}

/// Requests without exactly one result or error, and replies without a request.
pub fn unpaired(trace: &[TraceEntry]) -> Vec<TraceEntry> {
    let mut replies: BTreeMap<u64, usize> = BTreeMap::new();
    for t in trace.iter().filter(|t| matches!(t.kind, MessageKind::Result | MessageKind::Error)) {
        *replies.entry(t.correlation_id).or_default() += 1;
    }
    let requests: BTreeMap<u64, &TraceEntry> = trace
        .iter()
        .filter(|t| t.kind == MessageKind::Request)
        .map(|t| (t.msg_id, t))
        .collect();
    let mut out: Vec<TraceEntry> = requests
        .values()
        .filter(|r| replies.get(&r.msg_id) != Some(&1))
        .map(|r| (*r).clone())
        .collect();
    out.extend(
        trace
            .iter()
            .filter(|t| matches!(t.kind, MessageKind::Result | MessageKind::Error))
            .filter(|t| !requests.contains_key(&t.correlation_id))
            .cloned(),
    );
    out
}

/// An agent's end of the wiring: its inbox, the inboxes it may post to,
/// and the trace of what it sent.
pub struct Mailbox {
    me: AgentId,
    next: u64,
    inbox: Receiver<AgentMessage>,
    peers: BTreeMap<AgentId, Sender<AgentMessage>>,
    sent: Vec<TraceEntry>,
}

/// A peer's inbox was closed before a message could be delivered.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{from} could not reach {to}")]
pub struct Disconnected {
    pub from: AgentId,
    pub to: AgentId,
}

impl Mailbox {
    pub fn new(me: AgentId, inbox: Receiver<AgentMessage>, peers: BTreeMap<AgentId, Sender<AgentMessage>>) -> Self {
        Self {
            me,
            next: 0,
            inbox,
            peers,
            sent: Vec::new(),
        }
    }

    pub fn me(&self) -> AgentId {
        self.me
    }

    fn post(&mut self, msg: AgentMessage) -> Result<u64, Disconnected> {
        let id = msg.msg_id;
        let to = msg.to;
        let err = Disconnected { from: self.me, to };
        let peer = self.peers.get(&to).ok_or(err.clone())?;
        self.sent.push(TraceEntry::from(&msg));
        peer.send(msg).map_err(|_| err)?;
        Ok(id)
    }

    fn fresh_id(&mut self) -> u64 {
        self.next += 1;
        (self.me.code() << 48) | self.next
    }

    /// Sends a request; blocks while the peer's inbox is full. Returns its id.
    pub fn request(&mut self, to: AgentId, payload: Payload) -> Result<u64, Disconnected> {
        let id = self.fresh_id();
        self.post(AgentMessage {
            msg_id: id,
            from: self.me,
            to,
            kind: MessageKind::Request,
            correlation_id: id,
            payload,
        })
    }

    pub fn reply(&mut self, request: &AgentMessage, payload: Payload) -> Result<(), Disconnected> {
        let kind = if matches!(payload, Payload::Failure { .. }) {
            MessageKind::Error
        } else {
            MessageKind::Result
        };
        let id = self.fresh_id();
        self.post(AgentMessage {
            msg_id: id,
            from: self.me,
            to: request.from,
            kind,
            correlation_id: request.msg_id,
            payload,
        })
        .map(|_| ())
    }

    pub fn event(&mut self, to: AgentId, payload: Payload) -> Result<(), Disconnected> {
        let id = self.fresh_id();
        self.post(AgentMessage {
            msg_id: id,
            from: self.me,
            to,
            kind: MessageKind::Event,
            correlation_id: id,
            payload,
        })
        .map(|_| ())
    }

    /// Next message, or `None` once every sender is gone.
    pub fn recv(&self) -> Option<AgentMessage> {
        self.inbox.recv().ok()
    }

    /// Messages this agent sent, in order.
    pub fn into_trace(self) -> Vec<TraceEntry> {
        self.sent
    }
}

/// Text of a caught panic, so an agent can report it instead of dying silently.
pub fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}
