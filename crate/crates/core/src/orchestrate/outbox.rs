//! File outbox standing in for e-mail delivery.
//!
//! Each dispatch writes one JSON message `<outbox>/<seq>-<hash8>.json`, where
//! `seq` is a six-digit counter and `hash8` the first 8 hex digits of the
//! SHA-256 of the message body. Files are created exclusively, so two
//! dispatches never overwrite each other.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{Report, ReportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutboxMessage {
    /// `<seq>-<hash8>`, also the file stem.
    pub msg_id: String,
    /// Decider role the report is addressed to.
    pub to: String,
    pub subject: String,
    pub body: String,
    pub indicator_id: String,
    /// Report files relative to the run directory.
    pub attachments: Vec<PathBuf>,
}

fn next_seq(outbox: &Path) -> std::io::Result<u64> {
    let mut max = 0;
    for entry in std::fs::read_dir(outbox)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(seq) = name.split('-').next().and_then(|s| s.parse::<u64>().ok()) {
            max = max.max(seq);
        }
    }
    Ok(max + 1)
}

/// Queues `report` for its decider. `root` is the directory the report's
/// file paths are relative to; every attachment must exist there.
pub fn dispatch_report(report: &Report, root: &Path, outbox: &Path) -> Result<PathBuf, ReportError> {
    if report.files.is_empty() {
        return Err(ReportError::NotBuilt(report.header.indicator_id.clone()));
    }
    if let Some(missing) = report.files.iter().find(|f| !root.join(f).is_file()) {
        return Err(ReportError::NotBuilt(format!("{} is missing", missing.display())));
    }
    let io = |source| ReportError::Io {
        path: outbox.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(outbox).map_err(io)?;
    let h = &report.header;
    let subject = format!("[{}] {}", h.name, h.objective);
    let body = match &report.marker {
        Some(m) => format!("Decision-aid indicator {} computed at t = {} s: {m}.", h.indicator_id, h.computed_at),
        None => {
            let lines: Vec<String> = report
                .sections
                .iter()
                .filter_map(|s| s.table.first().map(|t| format!("- {}: highest {} is {} ({})", s.kpi_id, s.group_by, t.entity, t.value)))
                .collect();
            format!(
                "Decision-aid indicator {} computed at t = {} s.\n{}",
                h.indicator_id,
                h.computed_at,
                lines.join("\n")
            )
        }
    };
    let mut seq = next_seq(outbox).map_err(io)?;
    loop {
        let mut hasher = Sha256::new();
        hasher.update(seq.to_le_bytes());
        hasher.update(h.decider.as_bytes());
        hasher.update(subject.as_bytes());
        hasher.update(body.as_bytes());
        for f in &report.files {
            hasher.update(f.to_string_lossy().as_bytes());
        }
        let msg_id = format!("{seq:06}-{}", &hex::encode(hasher.finalize())[..8]);
        let msg = OutboxMessage {
            msg_id: msg_id.clone(),
            to: h.decider.clone(),
            subject: subject.clone(),
            body: body.clone(),
            indicator_id: h.indicator_id.clone(),
            attachments: report.files.clone(),
        };
        let path = outbox.join(format!("{msg_id}.json"));
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let mut json = serde_json::to_string_pretty(&msg).expect("message serializes");
                json.push('\n');
                f.write_all(json.as_bytes()).map_err(io)?;
                return Ok(path);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => seq += 1,
            Err(e) => return Err(io(e)),
        }
    }
}
