use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::aggregate::{Criterion, LearnedFrom, Operator, Provenance, ThresholdRef};
use crate::kpi::{Aggregation, EntityKind, InstantiationContext, KpiResult, Mode, ScopeFilter};
use crate::{tick_time, BLOCK_LEN, SAMPLE_RATE};

fn record(i: u64) -> MonitoringRecord {
    let tools = ["10026", "20001", "idle"];
    let x = i as f64;
    MonitoringRecord {
        time: tick_time(i),
        vrms: [x, x + 0.5, 1.0 / (x + 1.0), 2.0],
        nh: [3.0, x * 0.1, 0.0, 1e-9],
        unbalance: [0.25; 4],
        bearing: [0.125, 0.0, 0.0, x],
        mean_power: 4000.0 + x,
        tool_id: tools[(i % 3) as usize].into(),
        program_name: format!("P{}", i % 2),
        workpiece_id: "W-7".into(),
        spindle_speed: 12000.0,
        feedrate: 800.0,
        spindle_temperature: 21.5,
    }
}

fn records(n: u64) -> Vec<MonitoringRecord> {
    (0..n).map(record).collect()
}

fn open(dir: &tempfile::TempDir) -> RecordStore {
    RecordStore::open(dir.path()).unwrap()
}

fn manifest_rows(dir: &tempfile::TempDir, stream: &str) -> u64 {
    let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["streams"][stream]["rows"].as_u64().unwrap()
}

#[test]
fn append_counts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir);
    assert_eq!(s.stats(Stream::Monitoring), StreamStats { rows: 0, bytes: 0 });
    assert_eq!(manifest_rows(&dir, "monitoring"), 0);
    assert_eq!(s.append(&records(10)).unwrap(), 10);
    assert_eq!(manifest_rows(&dir, "monitoring"), 10);
    assert_eq!(s.stats(Stream::Monitoring).rows, 10);
    let on_disk = fs::metadata(s.log_path(Stream::Monitoring)).unwrap().len();
    assert_eq!(s.stats(Stream::Monitoring).bytes, on_disk);
}

#[test]
fn schema_violation_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir);
    let mut rows = records(3);
    rows[2].tool_id.clear();
    let err = s.append(&rows).unwrap_err();
    match &err {
        StoreError::Schema { row, source, .. } => {
            assert_eq!(*row, 2);
            assert_eq!(source.field, "tool_id");
        }
        e => panic!("unexpected {e}"),
    }
    assert!(err.to_string().contains("tool_id"));
    assert_eq!(s.stats(Stream::Monitoring).rows, 0, "nothing written");
    let mut bad = records(1);
    bad[0].nh[1] = f64::NAN;
    assert!(matches!(s.append(&bad), Err(StoreError::Schema { source: FieldError { field: "nh", .. }, .. })));
}

#[test]
fn snapshots_see_prior_appends_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir);
    s.append(&records(5)).unwrap();
    s.append(&records(8)[5..]).unwrap();
    let snap = s.snapshot::<MonitoringRecord>(&RowFilter::all()).unwrap();
    assert_eq!(snap.to_vec(), records(8));
    s.append(&[record(8)]).unwrap();
    assert_eq!(snap.len(), 8);
    assert_eq!(snap.as_of().rows, 8);
    assert_eq!(s.snapshot::<MonitoringRecord>(&RowFilter::all()).unwrap().len(), 9);
}

#[test]
fn filters_match_full_scan() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir);
    let all = records(300);
    s.append(&all).unwrap();
    let none = s.snapshot::<MonitoringRecord>(&RowFilter::time(1000.0, 2000.0)).unwrap();
    assert!(none.is_empty());
    let filters = [
        RowFilter {
            tool: Some("10026".into()),
            ..RowFilter::default()
        },
        RowFilter {
            program: Some("P1".into()),
            from: Some(5.0),
            to: Some(20.0),
            ..RowFilter::default()
        },
        RowFilter {
            workpiece: Some("W-8".into()),
            ..RowFilter::default()
        },
    ];
    for f in filters {
        let got = s.snapshot::<MonitoringRecord>(&f).unwrap().to_vec();
        let want: Vec<_> = all
            .iter()
            .filter(|r| {
                f.tool.as_ref().is_none_or(|t| *t == r.tool_id)
                    && f.program.as_ref().is_none_or(|p| *p == r.program_name)
                    && f.workpiece.as_ref().is_none_or(|w| *w == r.workpiece_id)
                    && f.from.is_none_or(|a| r.time >= a)
                    && f.to.is_none_or(|b| r.time < b)
            })
            .cloned()
            .collect();
        assert_eq!(got, want);
    }
}

fn sample_period() -> ToolUsagePeriod {
    ToolUsagePeriod {
        period_id: "M1-000003".into(),
        machine_id: "M1".into(),
        tool_id: "10026".into(),
        t_i: 12.3,
        t_f: 45.6,
        programs: BTreeSet::from(["P1".to_string(), "P2".to_string()]),
        workpieces: BTreeSet::from(["W-7".to_string()]),
    }
}

fn sample_data() -> Vec<SmartDatum> {
    vec![
        SmartDatum {
            period_id: "M1-000003".into(),
            metric_id: "chatter_duration".into(),
            source: Criterion::Nh,
            operator: Operator::T,
            value: Some(1.2000000000000002),
            threshold_used: Some(ThresholdRef {
                criterion: Criterion::Nh,
                value: 20.0,
            }),
        },
        SmartDatum {
            period_id: "M1-000003".into(),
            metric_id: "mean_cutting_power".into(),
            source: Criterion::Power,
            operator: Operator::Mean,
            value: None,
            threshold_used: None,
        },
    ]
}

fn sample_thresholds() -> Vec<Threshold> {
    vec![
        Threshold::configured(Criterion::Nh, 20.0),
        Threshold {
            criterion: Criterion::Vrms,
            value: 3.25,
            provenance: Provenance::Learned,
            fallback: true,
            learned_from: Some(LearnedFrom {
                samples: 1234,
                min: 0.5,
                max: 9.75,
            }),
        },
    ]
}

fn sample_indicator() -> DecisionAidIndicator {
    DecisionAidIndicator {
        indicator_id: "reduce-chatter-600-0123abcd".into(),
        context: InstantiationContext {
            objective: "Reduce chatter".into(),
            decider: "quality".into(),
            scope: ScopeFilter::default(),
            mode: Mode::Periodic { period: 600.0 },
        },
        kpis: vec![KpiResult {
            kpi_id: "chatter_by_tool".into(),
            group_by: EntityKind::Tool,
            source_metric: "chatter_duration".into(),
            aggregation: Aggregation::Sum,
            values: BTreeMap::from([("10026".to_string(), 0.30000000000000004)]),
        }],
        computed_at: 600.0,
        window: None,
        inputs_digest: "0".repeat(64),
    }
}

fn sample_block() -> SignalBlock {
    let ramp = |k: f64| (0..BLOCK_LEN).map(|i| (i as f64 * k).sin()).collect::<Vec<_>>();
    SignalBlock {
        block_index: 7,
        start_time: tick_time(7),
        channels: [ramp(0.1), ramp(0.2), ramp(0.3), ramp(0.4)],
        power: vec![500.0; BLOCK_LEN],
        sample_rate: SAMPLE_RATE,
    }
}

#[test]
fn every_stream_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut s = open(&dir);
        s.append(&records(4)).unwrap();
        s.append(&[sample_period()]).unwrap();
        s.append(&sample_data()).unwrap();
        s.append(&sample_thresholds()).unwrap();
        s.append(&[sample_indicator()]).unwrap();
        s.append(&[sample_block()]).unwrap();
    }
    let s = open(&dir);
    let all = RowFilter::all();
    assert_eq!(s.snapshot::<MonitoringRecord>(&all).unwrap().to_vec(), records(4));
    assert_eq!(s.snapshot::<ToolUsagePeriod>(&all).unwrap().to_vec(), vec![sample_period()]);
    assert_eq!(s.snapshot::<SmartDatum>(&all).unwrap().to_vec(), sample_data());
    assert_eq!(s.snapshot::<Threshold>(&all).unwrap().to_vec(), sample_thresholds());
    assert_eq!(s.snapshot::<DecisionAidIndicator>(&all).unwrap().to_vec(), vec![sample_indicator()]);
    assert_eq!(s.snapshot::<SignalBlock>(&all).unwrap().to_vec(), vec![sample_block()]);
    assert!(s.recovered().is_empty());
}

#[test]
fn torn_tail_is_cut_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let full_len;
    {
        let mut s = open(&dir);
        s.append(&records(20)).unwrap();
        full_len = s.stats(Stream::Monitoring).bytes;
    }
    let path = dir.path().join("monitoring.log");
    for cut in [1u64, 7, 9, 40] {
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(full_len - cut).unwrap();
        drop(f);
        let mut s = open(&dir);
        assert_eq!(s.recovered().len(), 1);
        assert_eq!(s.stats(Stream::Monitoring).rows, 19);
        assert_eq!(s.snapshot::<MonitoringRecord>(&RowFilter::all()).unwrap().to_vec(), records(19));
        assert_eq!(manifest_rows(&dir, "monitoring"), 19);
        s.append(&[record(19)]).unwrap();
        assert_eq!(s.stats(Stream::Monitoring).bytes, full_len);
    }
    let s = open(&dir);
    assert_eq!(s.snapshot::<MonitoringRecord>(&RowFilter::all()).unwrap().to_vec(), records(20));
}

#[test]
fn flipped_byte_in_last_frame_is_torn_elsewhere_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut s = open(&dir);
        s.append(&records(3)).unwrap();
    }
    let path = dir.path().join("monitoring.log");
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 3;
    bytes[last] ^= 0xff;
    fs::write(&path, &bytes).unwrap();
    let s = open(&dir);
    assert_eq!(s.stats(Stream::Monitoring).rows, 2);
    drop(s);
    let mut bytes = fs::read(&path).unwrap();
    bytes[20] ^= 0xff;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(RecordStore::open(dir.path()), Err(StoreError::Corrupt { offset: 0, .. })));
}

#[test]
fn unknown_stream_and_row_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir);
    assert!(matches!(s.stats_by_name("video"), Err(StoreError::UnknownStream(_))));
    s.append(&records(1000)).unwrap();
    let st = s.stats_by_name("monitoring").unwrap();
    let per_row = st.bytes as f64 / st.rows as f64;
    assert!((40.0..=400.0).contains(&per_row), "{per_row}");
}

#[test]
fn csv_export_has_fixed_header_and_all_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir);
    s.append(&records(12)).unwrap();
    s.append(&[sample_indicator()]).unwrap();
    let mut out = Vec::new();
    assert_eq!(s.export_csv::<MonitoringRecord>(&mut out).unwrap(), 12);
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("time,vrms_0,vrms_1,vrms_2,vrms_3,nh_0"));
    assert_eq!(lines.count(), 12);
    let files = s.export_all_csv(dir.path().join("csv")).unwrap();
    let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, vec!["monitoring.v1.csv", "indicators.v1.csv"]);
}

#[test]
fn csv_values_parse_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir);
    s.append(&records(5)).unwrap();
    let mut out = Vec::new();
    s.export_csv::<MonitoringRecord>(&mut out).unwrap();
    let mut rdr = csv::Reader::from_reader(out.as_slice());
    for (row, want) in rdr.records().zip(records(5)) {
        let row = row.unwrap();
        assert_eq!(row[0].parse::<f64>().unwrap(), want.time);
        assert_eq!(row[3].parse::<f64>().unwrap(), want.vrms[2]);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn monitoring_row() -> impl Strategy<Value = (Vec<f64>, f64, String, String)> {
        (
            prop::collection::vec(0.0f64..1e6, 16),
            0.0f64..5e4,
            "[A-Za-z0-9_-]{1,12}",
            "[ -~é°]{0,20}",
        )
    }

    fn build(rows: &[(Vec<f64>, f64, String, String)]) -> Vec<MonitoringRecord> {
        rows.iter()
            .enumerate()
            .map(|(i, (v, power, tool, program))| MonitoringRecord {
                time: tick_time(i as u64),
                vrms: [v[0], v[1], v[2], v[3]],
                nh: [v[4], v[5], v[6], v[7]],
                unbalance: [v[8], v[9], v[10], v[11]],
                bearing: [v[12], v[13], v[14], v[15]],
                mean_power: *power,
                tool_id: tool.clone(),
                program_name: program.clone(),
                workpiece_id: String::new(),
                spindle_speed: v[0] / 10.0,
                feedrate: v[1] / 10.0,
                spindle_temperature: 20.0 - v[2] / 1e5,
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn monitoring_rows_round_trip(rows in prop::collection::vec(monitoring_row(), 1..40)) {
            let recs = build(&rows);
            let dir = tempfile::tempdir().unwrap();
            open(&dir).append(&recs).unwrap();
            let back = open(&dir).snapshot::<MonitoringRecord>(&RowFilter::all()).unwrap().to_vec();
            prop_assert_eq!(back, recs);
        }

        #[test]
        fn any_torn_tail_drops_only_the_last_row(n in 1u64..30, cut_frac in 0.0f64..1.0) {
            let dir = tempfile::tempdir().unwrap();
            let (full, last_frame) = {
                let mut s = open(&dir);
                s.append(&records(n - 1)).unwrap();
                let before = s.stats(Stream::Monitoring).bytes;
                s.append(&[record(n - 1)]).unwrap();
                let full = s.stats(Stream::Monitoring).bytes;
                (full, full - before)
            };
            let cut = 1 + ((last_frame - 1) as f64 * cut_frac) as u64;
            let f = OpenOptions::new().write(true).open(dir.path().join("monitoring.log")).unwrap();
            f.set_len(full - cut).unwrap();
            drop(f);
            let s = open(&dir);
            prop_assert_eq!(s.recovered().len(), 1);
            prop_assert_eq!(s.snapshot::<MonitoringRecord>(&RowFilter::all()).unwrap().to_vec(), records(n - 1));
        }
    }
}
