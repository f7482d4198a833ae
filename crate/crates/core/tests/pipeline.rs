mod common;

use std::path::Path;

use machagg::aggregate::{SmartDatum, ToolUsagePeriod};
use machagg::kpi::Mode;
use machagg::monitor::MonitoringRecord;
use machagg::orchestrate::message::{unpaired, MessageKind};
use machagg::orchestrate::pipeline::{learn_from_store, report_from_store, store_dir, SUMMARY_FILE};
use machagg::orchestrate::{
    generate, run_pipeline, run_traced, AgentId, OrchestrateError, PipelineConfig, RunSummary, ThresholdMode,
};
use machagg::store::{RecordStore, RowFilter, Stream};
use machagg::synth::AnomalyKind;

use common::{anomaly, config_for, entry, first_difference, script, tree};

/// Two tools over 40 s with one chatter burst.
fn small() -> PipelineConfig {
    config_for(script(
        5,
        40.0,
        vec![
            entry("10026", "PRG_A", "WP-1", 1.0, 19.0, 24_000.0),
            entry("20001", "PRG_B", "WP-2", 21.0, 39.0, 12_000.0),
        ],
        vec![anomaly(AnomalyKind::Chatter, 5.0, 6.5, 30.0, 1230.0)],
    ))
}

#[test]
fn demo_run_finds_periods_and_one_indicator() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_pipeline(&PipelineConfig::demo(), dir.path()).unwrap();
    assert_eq!(s.blocks, 6000);
    assert_eq!(s.periods, 4);
    assert_eq!(s.indicators.len(), 1);
    assert_eq!(s.smart_data, 4 * PipelineConfig::demo().metrics.len());
    assert_eq!(s.streams["monitoring"].rows, 6000);
    assert_eq!(s.streams["indicators"].rows, 1);
    for f in s.reports.iter().chain(&s.outbox) {
        assert!(f.is_relative() && dir.path().join(f).is_file(), "{}", f.display());
    }
    let written: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(written, s);
}

#[test]
fn zero_duration_gives_all_zero_counts() {
    let mut cfg = PipelineConfig::demo();
    let sc = cfg.scenario.as_mut().unwrap();
    sc.duration = 0.0;
    sc.schedule.clear();
    sc.anomalies.clear();
    let dir = tempfile::tempdir().unwrap();
    let s = run_pipeline(&cfg, dir.path()).unwrap();
    assert_eq!((s.blocks, s.periods, s.smart_data), (0, 0, 0));
    assert!(s.indicators.is_empty() && s.reports.is_empty() && s.outbox.is_empty());
    assert!(s.thresholds.is_empty());
    assert!(s.streams.values().all(|st| st.rows == 0 && st.bytes == 0), "{:?}", s.streams);
}

#[test]
fn every_request_gets_exactly_one_reply() {
    let dir = tempfile::tempdir().unwrap();
    let (_, trace) = run_traced(&small(), dir.path()).unwrap();
    assert!(unpaired(&trace).is_empty(), "{:?}", unpaired(&trace));
    assert!(trace.iter().all(|t| t.kind != MessageKind::Error));
    // Reporting only ever answers the HMI.
    assert!(trace.iter().filter(|t| t.from == AgentId::Reporting).all(|t| t.to == AgentId::Hmi));
    // Shutdown events go out in upstream-first order.
    let shutdowns: Vec<AgentId> = trace.iter().filter(|t| t.payload == "shutdown").map(|t| t.to).collect();
    assert_eq!(shutdowns, [AgentId::Computing, AgentId::Reporting, AgentId::Traceability]);
}

#[test]
fn same_seed_same_bytes_other_seed_differs() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let a = run_pipeline(&small(), dirs[0].path()).unwrap();
    let b = run_pipeline(&small(), dirs[1].path()).unwrap();
    assert_eq!(a, b);
    assert_eq!(first_difference(dirs[0].path(), dirs[1].path()), None);
    run_pipeline(&small().with_seed(99), dirs[2].path()).unwrap();
    let mon = |d: &Path| std::fs::read(RecordStore::open(store_dir(d)).unwrap().log_path(Stream::Monitoring)).unwrap();
    assert_ne!(mon(dirs[0].path()), mon(dirs[2].path()));
}

#[test]
fn chunking_and_queue_capacity_do_not_change_results() {
    let mut tight = small();
    tight.runtime.chunk_blocks = 7;
    tight.runtime.queue_capacity = 1;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_pipeline(&small(), a.path()).unwrap();
    let sb = run_pipeline(&tight, b.path()).unwrap();
    assert_eq!(first_difference(&store_dir(a.path()), &store_dir(b.path())), None);
    assert_eq!(sa.indicators, sb.indicators);
    assert!(sb.messages > sa.messages);
}

#[test]
fn stored_rows_match_summary() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_pipeline(&small(), dir.path()).unwrap();
    let store = RecordStore::open(store_dir(dir.path())).unwrap();
    let periods = store.snapshot::<ToolUsagePeriod>(&RowFilter::all()).unwrap();
    let smart = store.snapshot::<SmartDatum>(&RowFilter::all()).unwrap();
    assert_eq!(periods.len(), s.periods);
    assert_eq!(smart.len(), s.smart_data);
    assert_eq!(periods.iter().map(|p| p.tool_id.as_str()).collect::<Vec<_>>(), ["10026", "20001"]);
    let chatter: f64 = smart
        .iter()
        .filter(|d| d.metric_id == "chatter_duration")
        .filter_map(|d| d.value)
        .sum();
    assert!((chatter - 1.5).abs() <= 0.1 + 1e-9, "{chatter}");
}

#[test]
fn a_second_run_into_the_same_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&small(), dir.path()).unwrap();
    assert!(matches!(run_pipeline(&small(), dir.path()), Err(OrchestrateError::NonEmptyStore(_))));
}

#[test]
fn threshold_stage_failure_names_agent_and_leaves_a_valid_store() {
    let mut cfg = small();
    cfg.thresholds.mode = ThresholdMode::Learn;
    cfg.thresholds.values.clear();
    let dir = tempfile::tempdir().unwrap();
    match run_pipeline(&cfg, dir.path()) {
        Err(OrchestrateError::Stage { agent, stage, message }) => {
            assert_eq!(agent, AgentId::Computing);
            assert_eq!(stage, "thresholds");
            assert!(message.contains("at least 1000"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    let store = RecordStore::open(store_dir(dir.path())).unwrap();
    assert_eq!(store.snapshot::<MonitoringRecord>(&RowFilter::all()).unwrap().len(), 400);
    assert!(store.recovered().is_empty());
}

#[test]
fn report_stage_failure_names_the_reporting_agent() {
    let mut cfg = small();
    cfg.reports[0].output = Some("blocked/reports".into());
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("blocked"), b"a file, not a directory").unwrap();
    match run_pipeline(&cfg, dir.path()) {
        Err(OrchestrateError::Stage { agent, stage, .. }) => {
            assert_eq!(agent, AgentId::Reporting);
            assert_eq!(stage, "report");
        }
        other => panic!("{other:?}"),
    }
    let store = RecordStore::open(store_dir(dir.path())).unwrap();
    assert_eq!(store.stats(Stream::Indicators).rows, 1);
}

#[test]
fn learn_mode_learns_on_a_long_enough_run() {
    let mut cfg = PipelineConfig::demo();
    cfg.thresholds.mode = ThresholdMode::Learn;
    cfg.thresholds.values.clear();
    let dir = tempfile::tempdir().unwrap();
    let s = run_pipeline(&cfg, dir.path()).unwrap();
    assert_eq!(s.thresholds.len(), 2);
    let nh = s.thresholds.iter().find(|t| t.criterion.as_str() == "nh").unwrap();
    assert!(nh.value > 5.0 && nh.value < 30.0, "{}", nh.value);
    // The stand-alone command learns the same values from the stored stream.
    assert_eq!(learn_from_store(&cfg, dir.path()).unwrap(), s.thresholds);
}

#[test]
fn report_from_store_matches_the_run_and_queues_a_new_message() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_pipeline(&small(), dir.path()).unwrap();
    let before = tree(&dir.path().join("reports"));
    let r = report_from_store(&small(), dir.path()).unwrap();
    assert_eq!(r.indicators, s.indicators);
    assert_eq!(r.reports, s.reports);
    assert_eq!(tree(&dir.path().join("reports")), before);
    assert_eq!(r.outbox.len(), 1);
    assert_ne!(r.outbox, s.outbox);
}

#[test]
fn report_without_a_run_has_no_smart_data() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(report_from_store(&small(), dir.path()), Err(OrchestrateError::NoSmartData)));
}

#[test]
fn periodic_mode_yields_one_indicator_per_period() {
    let mut cfg = small();
    cfg.reports[0].context.mode = Mode::Periodic { period: 10.0 };
    let dir = tempfile::tempdir().unwrap();
    let s = run_pipeline(&cfg, dir.path()).unwrap();
    assert_eq!(s.indicators.len(), 4);
    assert_eq!(s.outbox.len(), 4);
}

#[test]
fn generate_writes_context_and_raw_samples() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate(&small(), dir.path(), 2).unwrap();
    assert_eq!(g.blocks, 400);
    let context = std::fs::read_to_string(dir.path().join("context.csv")).unwrap();
    assert_eq!(context.lines().count(), 401);
    let signal = std::fs::read_to_string(dir.path().join("signal.csv")).unwrap();
    assert_eq!(signal.lines().count(), 1 + 2 * machagg::BLOCK_LEN);
    let back = machagg::synth::read_scenario(&dir.path().join("scenario.toml")).unwrap();
    assert_eq!(&back, small().scenario());
}
