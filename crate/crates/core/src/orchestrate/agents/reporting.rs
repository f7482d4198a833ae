//! Reporting agent: builds report files and queues them in the outbox.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use crate::orchestrate::message::{panic_message, Mailbox, MessageKind, Payload, ReportJob, ReportOutcome, TraceEntry};
use crate::orchestrate::outbox::dispatch_report;
use crate::orchestrate::report::{build_report, ReportError};

fn build_all(jobs: &[ReportJob], root: &Path, outbox: &Path) -> Result<ReportOutcome, ReportError> {
    let mut out = ReportOutcome::default();
    for job in jobs {
        let report = build_report(&job.spec, &job.indicator, root)?;
        let sent = dispatch_report(&report, root, outbox)?;
        out.reports.extend(report.files);
        out.outbox.push(sent.strip_prefix(root).map(Path::to_path_buf).unwrap_or(sent));
    }
    Ok(out)
}

/// Serves `BuildReports` requests until shut down. `root` is the run
/// directory; messages go to `root/outbox`.
pub fn run(mut mailbox: Mailbox, root: PathBuf) -> Vec<TraceEntry> {
    let outbox = root.join("outbox");
    while let Some(msg) = mailbox.recv() {
        let reply = match &msg.payload {
            Payload::Shutdown => break,
            _ if msg.kind != MessageKind::Request => continue,
            Payload::BuildReports(jobs) => {
                match catch_unwind(AssertUnwindSafe(|| build_all(jobs, &root, &outbox))) {
                    Ok(Ok(outcome)) => Payload::ReportsBuilt(outcome),
                    Ok(Err(e)) => Payload::Failure {
                        stage: "report".into(),
                        message: e.to_string(),
                    },
                    Err(p) => Payload::Failure {
                        stage: "report".into(),
                        message: panic_message(p),
                    },
                }
            }
            other => Payload::Failure {
                stage: "report".into(),
                message: format!("unexpected request {}", other.label()),
            },
        };
        if mailbox.reply(&msg, reply).is_err() {
            break;
        }
    }
    mailbox.into_trace()
}
