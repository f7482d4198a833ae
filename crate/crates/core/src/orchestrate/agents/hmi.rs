//! HMI agent: carries the configuration into the run and sequences it.
//!
//! Compute, then report, then read the store statistics; finally shut the
//! other agents down upstream first (Computing, Reporting, Traceability) so
//! every queue is drained before its consumer stops.

use std::collections::BTreeMap;

use crate::orchestrate::config::PipelineConfig;
use crate::orchestrate::message::{
    AgentId, ComputeOutcome, Mailbox, Payload, ReportJob, ReportOutcome, TraceEntry,
};
use crate::store::{Stream, StreamStats};

#[derive(Debug, Clone)]
pub struct HmiOutcome {
    pub computed: ComputeOutcome,
    pub reports: ReportOutcome,
    pub stats: BTreeMap<Stream, StreamStats>,
}

/// A stage failure as reported by the agent that ran it.
#[derive(Debug, Clone)]
pub struct StageFailure {
    pub agent: AgentId,
    pub stage: String,
    pub message: String,
}

fn call(mailbox: &mut Mailbox, to: AgentId, payload: Payload) -> Result<Payload, StageFailure> {
    let lost = |message: &str| StageFailure {
        agent: to,
        stage: "messaging".into(),
        message: message.into(),
    };
    let id = mailbox.request(to, payload).map_err(|e| lost(&e.to_string()))?;
    let msg = mailbox.recv().ok_or_else(|| lost("agent stopped without replying"))?;
    if msg.correlation_id != id || msg.from != to {
        return Err(lost("reply does not match the request"));
    }
    match msg.payload {
        Payload::Failure { stage, message } => Err(StageFailure { agent: to, stage, message }),
        other => Ok(other),
    }
}

fn unexpected(agent: AgentId, got: &Payload) -> StageFailure {
    StageFailure {
        agent,
        stage: "messaging".into(),
        message: format!("unexpected {}", got.label()),
    }
}

fn sequence(mailbox: &mut Mailbox, config: &PipelineConfig) -> Result<HmiOutcome, StageFailure> {
    let computed = match call(mailbox, AgentId::Computing, Payload::Compute(Box::new(config.clone())))? {
        Payload::Computed(c) => *c,
        other => return Err(unexpected(AgentId::Computing, &other)),
    };
    let jobs: Vec<ReportJob> = computed
        .indicators
        .iter()
        .filter_map(|(name, indicator)| {
            let spec = config.reports.iter().find(|r| &r.name == name)?;
            Some(ReportJob {
                spec: spec.clone(),
                indicator: indicator.clone(),
            })
        })
        .collect();
    let reports = if jobs.is_empty() {
        ReportOutcome::default()
    } else {
        match call(mailbox, AgentId::Reporting, Payload::BuildReports(jobs))? {
            Payload::ReportsBuilt(r) => r,
            other => return Err(unexpected(AgentId::Reporting, &other)),
        }
    };
    let stats = match call(mailbox, AgentId::Traceability, Payload::Stats)? {
        Payload::StatsData(s) => s,
        other => return Err(unexpected(AgentId::Traceability, &other)),
    };
    Ok(HmiOutcome {
        computed,
        reports,
        stats,
    })
}

/// Runs the configured pipeline, then shuts every agent down.
pub fn run(mut mailbox: Mailbox, config: &PipelineConfig) -> (Result<HmiOutcome, StageFailure>, Vec<TraceEntry>) {
    let result = sequence(&mut mailbox, config);
    for agent in [AgentId::Computing, AgentId::Reporting, AgentId::Traceability] {
        let _ = mailbox.event(agent, Payload::Shutdown);
    }
    (result, mailbox.into_trace())
}
