//! Traceability agent: sole owner of the [`RecordStore`].

use crate::orchestrate::message::{AgentMessage, Mailbox, MessageKind, Payload, Rows, SnapshotRows, TraceEntry};
use crate::store::{RecordStore, RowFilter, Stream, StoreError};

fn append(store: &mut RecordStore, rows: &Rows) -> Result<usize, StoreError> {
    match rows {
        Rows::Monitoring(r) => store.append(r),
        Rows::Periods(r) => store.append(r),
        Rows::SmartData(r) => store.append(r),
        Rows::Thresholds(r) => store.append(r),
        Rows::Indicators(r) => store.append(r),
        Rows::RawSignal(r) => store.append(r),
    }
}

fn snapshot(store: &RecordStore, stream: Stream) -> Result<SnapshotRows, String> {
    let all = RowFilter::all();
    let rows = match stream {
        Stream::Monitoring => store.snapshot(&all).map(SnapshotRows::Monitoring),
        Stream::Periods => store.snapshot(&all).map(SnapshotRows::Periods),
        Stream::SmartData => store.snapshot(&all).map(SnapshotRows::SmartData),
        other => return Err(format!("snapshots of {other} are not served")),
    };
    rows.map_err(|e| e.to_string())
}

fn handle(store: &mut RecordStore, msg: &AgentMessage) -> Payload {
    let failure = |message: String| Payload::Failure {
        stage: "store".into(),
        message,
    };
    match &msg.payload {
        Payload::Append(rows) => match append(store, rows) {
            Ok(n) => Payload::Appended {
                stream: rows.stream(),
                rows: n,
            },
            Err(e) => failure(e.to_string()),
        },
        Payload::Snapshot(stream) => match snapshot(store, *stream) {
            Ok(rows) => Payload::SnapshotData(rows),
            Err(e) => failure(e),
        },
        Payload::Stats => Payload::StatsData(Stream::ALL.iter().map(|&s| (s, store.stats(s))).collect()),
        other => failure(format!("unexpected request {}", other.label())),
    }
}

/// Serves requests until shut down. Returns the messages it sent.
pub fn run(mut mailbox: Mailbox, mut store: RecordStore) -> Vec<TraceEntry> {
    while let Some(msg) = mailbox.recv() {
        if matches!(msg.payload, Payload::Shutdown) {
            break;
        }
        if msg.kind != MessageKind::Request {
            continue;
        }
        let reply = handle(&mut store, &msg);
        if mailbox.reply(&msg, reply).is_err() {
            break;
        }
    }
    mailbox.into_trace()
}
