use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::AggregateError;
use crate::monitor::MonitoringRecord;
use crate::{tick_time, DT};

const EPS: f64 = 1e-6;

/// Contiguous interval during which one tool is mounted and working.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUsagePeriod {
    pub period_id: String,
    pub machine_id: String,
    pub tool_id: String,
    /// Time of the first record of the run, s.
    pub t_i: f64,
    /// Time of the last record of the run (first + 0.1 s for a single record), s.
    pub t_f: f64,
    pub programs: BTreeSet<String>,
    pub workpieces: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentRule {
    /// Idle gaps at least this long end a period even if the same tool resumes, s.
    pub gap_split: f64,
}

impl Default for SegmentRule {
    fn default() -> Self {
        Self { gap_split: 5.0 }
    }
}

struct OpenRun {
    tool: String,
    first: f64,
    last: f64,
    programs: BTreeSet<String>,
    workpieces: BTreeSet<String>,
}

impl OpenRun {
    fn start(r: &MonitoringRecord) -> Self {
        let mut run = Self {
            tool: r.tool_id.clone(),
            first: r.time,
            last: r.time,
            programs: BTreeSet::new(),
            workpieces: BTreeSet::new(),
        };
        run.extend(r);
        run
    }

    fn extend(&mut self, r: &MonitoringRecord) {
        self.last = r.time;
        if !r.program_name.is_empty() {
            self.programs.insert(r.program_name.clone());
        }
        if !r.workpiece_id.is_empty() {
            self.workpieces.insert(r.workpiece_id.clone());
        }
    }

    fn close(self, machine_id: &str, index: usize) -> ToolUsagePeriod {
        let t_f = if self.last > self.first {
            self.last
        } else {
            // On the block grid, end on the next tick so the next period's start compares equal.
            let k = (self.first / DT).round();
            if k >= 0.0 && (tick_time(k as u64) - self.first).abs() < EPS {
                tick_time(k as u64 + 1)
            } else {
                self.first + DT
            }
        };
        ToolUsagePeriod {
            period_id: format!("{machine_id}-{index:06}"),
            machine_id: machine_id.to_string(),
            tool_id: self.tool,
            t_i: self.first,
            t_f,
            programs: self.programs,
            workpieces: self.workpieces,
        }
    }
}

/// Splits a time-ordered monitoring stream into tool usage periods.
///
/// A period is a maximal run of one tool; idle records are skipped, and an
/// idle gap shorter than `rule.gap_split` between two records of the same
/// tool does not end the run.
pub fn segment_periods(
    records: &[MonitoringRecord],
    machine_id: &str,
    rule: &SegmentRule,
) -> Result<Vec<ToolUsagePeriod>, AggregateError> {
    for (i, w) in records.windows(2).enumerate() {
        if w[1].time <= w[0].time {
            return Err(AggregateError::Unordered {
                index: i + 1,
                previous: w[0].time,
                time: w[1].time,
            });
        }
    }
    let mut periods = Vec::new();
    let mut open: Option<OpenRun> = None;
    for r in records.iter().filter(|r| !r.is_idle()) {
        match open.as_mut() {
            Some(run) if run.tool == r.tool_id && r.time - run.last - DT < rule.gap_split - EPS => {
                run.extend(r);
            }
            _ => {
                if let Some(run) = open.take() {
                    periods.push(run.close(machine_id, periods.len()));
                }
                open = Some(OpenRun::start(r));
            }
        }
    }
    if let Some(run) = open {
        periods.push(run.close(machine_id, periods.len()));
    }
    Ok(periods)
}

/// Records belonging to `period`: its tool's records in `[t_i, t_f]` plus
/// idle records strictly inside that interval. `records` must be time-ordered.
pub fn period_records<'a>(
    period: &'a ToolUsagePeriod,
    records: &'a [MonitoringRecord],
) -> impl Iterator<Item = &'a MonitoringRecord> + 'a {
    let lo = records.partition_point(|r| r.time < period.t_i - EPS);
    records[lo..]
        .iter()
        .take_while(move |r| r.time <= period.t_f + EPS)
        .filter(move |r| {
            r.tool_id == period.tool_id
                || (r.is_idle() && r.time > period.t_i + EPS && r.time < period.t_f - EPS)
        })
}
