//! Row encodings of every stream. Field order here is the on-disk order.

use crate::aggregate::{Criterion, LearnedFrom, Operator, Provenance, SmartDatum, Threshold, ThresholdRef, ToolUsagePeriod};
use crate::kpi::DecisionAidIndicator;
use crate::monitor::MonitoringRecord;
use crate::synth::SignalBlock;
use crate::{BLOCK_LEN, CHANNELS};

use super::codec::*;
use super::{DecodeError, FieldError, RowFilter, Stream};

/// A value that can be stored in one stream.
pub trait Row: Sized + Send + Sync + 'static {
    const STREAM: Stream;

    /// Checks the row before it is written; names the offending field.
    fn validate(&self) -> Result<(), FieldError>;
    fn encode_body(&self, out: &mut Vec<u8>);
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, DecodeError>;
    fn csv_header() -> Vec<String>;
    /// One or more CSV rows in [`Row::csv_header`] column order.
    fn csv_records(&self) -> Vec<Vec<String>>;
    /// Filter dimensions a row type does not carry do not exclude it.
    fn matches(&self, filter: &RowFilter) -> bool;
}

fn field(field: &'static str, reason: impl Into<String>) -> FieldError {
    FieldError {
        field,
        reason: reason.into(),
    }
}

fn check_finite(name: &'static str, v: f64) -> Result<(), FieldError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("{v} is not finite")))
    }
}

fn check_non_negative(name: &'static str, v: f64) -> Result<(), FieldError> {
    check_finite(name, v)?;
    if v < 0.0 {
        return Err(field(name, format!("{v} is negative")));
    }
    Ok(())
}

fn check_str(name: &'static str, s: &str, required: bool) -> Result<(), FieldError> {
    if required && s.is_empty() {
        return Err(field(name, "missing"));
    }
    if s.len() > u16::MAX as usize {
        return Err(field(name, format!("{} bytes exceeds {}", s.len(), u16::MAX)));
    }
    Ok(())
}

fn criterion_tag(c: Criterion) -> u8 {
    Criterion::ALL.iter().position(|x| *x == c).expect("criterion listed") as u8
}

fn criterion_from(tag: u8, field: &'static str) -> Result<Criterion, DecodeError> {
    Criterion::ALL.get(tag as usize).copied().ok_or(DecodeError::BadTag { field, tag })
}

const OPERATORS: [Operator; 6] = [
    Operator::Co,
    Operator::T,
    Operator::Mean,
    Operator::Max,
    Operator::Min,
    Operator::Sum,
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn in_time(filter: &RowFilter, t: f64) -> bool {
    filter.from.is_none_or(|f| t >= f) && filter.to.is_none_or(|to| t < to)
}

fn eq_opt(want: &Option<String>, have: &str) -> bool {
    want.as_deref().is_none_or(|w| w == have)
}

const CRITERIA: [&str; 4] = ["vrms", "nh", "unbalance", "bearing"];

fn criteria(r: &MonitoringRecord) -> [&[f64; CHANNELS]; 4] {
    [&r.vrms, &r.nh, &r.unbalance, &r.bearing]
}

impl Row for MonitoringRecord {
    const STREAM: Stream = Stream::Monitoring;

    fn validate(&self) -> Result<(), FieldError> {
        check_non_negative("time", self.time)?;
        for (name, values) in CRITERIA.iter().zip(criteria(self)) {
            for v in values {
                check_non_negative(name, *v)?;
            }
        }
        check_non_negative("mean_power", self.mean_power)?;
        check_str("tool_id", &self.tool_id, true)?;
        check_str("program_name", &self.program_name, false)?;
        check_str("workpiece_id", &self.workpiece_id, false)?;
        check_non_negative("spindle_speed", self.spindle_speed)?;
        check_non_negative("feedrate", self.feedrate)?;
        check_finite("spindle_temperature", self.spindle_temperature)
    }

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_f64(out, self.time);
        for values in criteria(self) {
            for v in values {
                put_f64(out, *v);
            }
        }
        put_f64(out, self.mean_power);
        put_str(out, &self.tool_id);
        put_str(out, &self.program_name);
        put_str(out, &self.workpiece_id);
        put_f64(out, self.spindle_speed);
        put_f64(out, self.feedrate);
        put_f64(out, self.spindle_temperature);
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let time = r.f64("time")?;
        let mut arrays = [[0.0; CHANNELS]; 4];
        for (a, name) in arrays.iter_mut().zip(CRITERIA) {
            for v in a.iter_mut() {
                *v = r.f64(name)?;
            }
        }
        let [vrms, nh, unbalance, bearing] = arrays;
        Ok(MonitoringRecord {
            time,
            vrms,
            nh,
            unbalance,
            bearing,
            mean_power: r.f64("mean_power")?,
            tool_id: r.str("tool_id")?,
            program_name: r.str("program_name")?,
            workpiece_id: r.str("workpiece_id")?,
            spindle_speed: r.f64("spindle_speed")?,
            feedrate: r.f64("feedrate")?,
            spindle_temperature: r.f64("spindle_temperature")?,
        })
    }

    fn csv_header() -> Vec<String> {
        let mut h = vec!["time".to_string()];
        for name in CRITERIA {
            h.extend((0..CHANNELS).map(|c| format!("{name}_{c}")));
        }
        h.extend(
            [
                "mean_power",
                "tool_id",
                "program_name",
                "workpiece_id",
                "spindle_speed",
                "feedrate",
                "spindle_temperature",
            ]
            .map(String::from),
        );
        h
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        let mut v = vec![self.time.to_string()];
        for values in criteria(self) {
            v.extend(values.iter().map(f64::to_string));
        }
        v.push(self.mean_power.to_string());
        v.push(self.tool_id.clone());
        v.push(self.program_name.clone());
        v.push(self.workpiece_id.clone());
        v.push(self.spindle_speed.to_string());
        v.push(self.feedrate.to_string());
        v.push(self.spindle_temperature.to_string());
        vec![v]
    }

    fn matches(&self, f: &RowFilter) -> bool {
        in_time(f, self.time)
            && eq_opt(&f.tool, &self.tool_id)
            && eq_opt(&f.program, &self.program_name)
            && eq_opt(&f.workpiece, &self.workpiece_id)
    }
}

fn put_set<'a>(out: &mut Vec<u8>, items: impl ExactSizeIterator<Item = &'a String>) {
    put_u16(out, items.len() as u16);
    for s in items {
        put_str(out, s);
    }
}

fn get_set(r: &mut Reader<'_>, name: &'static str) -> Result<std::collections::BTreeSet<String>, DecodeError> {
    let n = r.u16(name)?;
    (0..n).map(|_| r.str(name)).collect()
}

impl Row for ToolUsagePeriod {
    const STREAM: Stream = Stream::Periods;

    fn validate(&self) -> Result<(), FieldError> {
        check_str("period_id", &self.period_id, true)?;
        check_str("machine_id", &self.machine_id, true)?;
        check_str("tool_id", &self.tool_id, true)?;
        check_non_negative("t_i", self.t_i)?;
        check_finite("t_f", self.t_f)?;
        if self.t_f <= self.t_i {
            return Err(field("t_f", format!("{} is not after t_i {}", self.t_f, self.t_i)));
        }
        for (name, set) in [("programs", &self.programs), ("workpieces", &self.workpieces)] {
            if set.len() > u16::MAX as usize {
                return Err(field(name, "too many entries"));
            }
            for s in set {
                check_str(name, s, true)?;
            }
        }
        Ok(())
    }

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_str(out, &self.period_id);
        put_str(out, &self.machine_id);
        put_str(out, &self.tool_id);
        put_f64(out, self.t_i);
        put_f64(out, self.t_f);
        put_set(out, self.programs.iter());
        put_set(out, self.workpieces.iter());
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(ToolUsagePeriod {
            period_id: r.str("period_id")?,
            machine_id: r.str("machine_id")?,
            tool_id: r.str("tool_id")?,
            t_i: r.f64("t_i")?,
            t_f: r.f64("t_f")?,
            programs: get_set(r, "programs")?,
            workpieces: get_set(r, "workpieces")?,
        })
    }

    fn csv_header() -> Vec<String> {
        ["period_id", "machine_id", "tool_id", "t_i", "t_f", "programs", "workpieces"]
            .map(String::from)
            .to_vec()
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        let join = |s: &std::collections::BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(";");
        vec![vec![
            self.period_id.clone(),
            self.machine_id.clone(),
            self.tool_id.clone(),
            self.t_i.to_string(),
            self.t_f.to_string(),
            join(&self.programs),
            join(&self.workpieces),
        ]]
    }

    fn matches(&self, f: &RowFilter) -> bool {
        in_time(f, self.t_i)
            && eq_opt(&f.tool, &self.tool_id)
            && f.program.as_ref().is_none_or(|p| self.programs.contains(p))
            && f.workpiece.as_ref().is_none_or(|w| self.workpieces.contains(w))
            && eq_opt(&f.period_id, &self.period_id)
    }
}

impl Row for SmartDatum {
    const STREAM: Stream = Stream::SmartData;

    fn validate(&self) -> Result<(), FieldError> {
        check_str("period_id", &self.period_id, true)?;
        check_str("metric_id", &self.metric_id, true)?;
        if let Some(v) = self.value {
            check_finite("value", v)?;
            if self.operator.needs_threshold() && v < 0.0 {
                return Err(field("value", format!("{} result {v} is negative", self.operator)));
            }
        }
        match self.threshold_used {
            None if self.operator.needs_threshold() => Err(field("threshold_used", "missing")),
            Some(t) => check_finite("threshold_used", t.value),
            None => Ok(()),
        }
    }

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_str(out, &self.period_id);
        put_str(out, &self.metric_id);
        put_u8(out, criterion_tag(self.source));
        put_u8(out, OPERATORS.iter().position(|o| *o == self.operator).unwrap() as u8);
        put_opt_f64(out, self.value);
        match self.threshold_used {
            Some(t) => {
                put_u8(out, 1);
                put_u8(out, criterion_tag(t.criterion));
                put_f64(out, t.value);
            }
            None => put_u8(out, 0),
        }
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let period_id = r.str("period_id")?;
        let metric_id = r.str("metric_id")?;
        let source = criterion_from(r.u8("source")?, "source")?;
        let op = r.u8("operator")?;
        let operator = *OPERATORS.get(op as usize).ok_or(DecodeError::BadTag {
            field: "operator",
            tag: op,
        })?;
        let value = r.opt_f64("value")?;
        let threshold_used = match r.u8("threshold_used")? {
            0 => None,
            1 => Some(ThresholdRef {
                criterion: criterion_from(r.u8("threshold_used")?, "threshold_used")?,
                value: r.f64("threshold_used")?,
            }),
            tag => {
                return Err(DecodeError::BadTag {
                    field: "threshold_used",
                    tag,
                })
            }
        };
        Ok(SmartDatum {
            period_id,
            metric_id,
            source,
            operator,
            value,
            threshold_used,
        })
    }

    fn csv_header() -> Vec<String> {
        [
            "period_id",
            "metric_id",
            "source",
            "operator",
            "value",
            "threshold_criterion",
            "threshold_value",
        ]
        .map(String::from)
        .to_vec()
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        vec![vec![
            self.period_id.clone(),
            self.metric_id.clone(),
            self.source.to_string(),
            self.operator.to_string(),
            fmt_opt(self.value),
            self.threshold_used.map(|t| t.criterion.to_string()).unwrap_or_default(),
            fmt_opt(self.threshold_used.map(|t| t.value)),
        ]]
    }

    fn matches(&self, f: &RowFilter) -> bool {
        eq_opt(&f.period_id, &self.period_id) && eq_opt(&f.metric_id, &self.metric_id)
    }
}

impl Row for Threshold {
    const STREAM: Stream = Stream::Thresholds;

    fn validate(&self) -> Result<(), FieldError> {
        check_finite("value", self.value)?;
        if self.value <= 0.0 {
            return Err(field("value", format!("{} is not positive", self.value)));
        }
        if let Some(l) = &self.learned_from {
            check_finite("learned_from", l.min)?;
            check_finite("learned_from", l.max)?;
        }
        Ok(())
    }

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_u8(out, criterion_tag(self.criterion));
        put_f64(out, self.value);
        put_u8(out, matches!(self.provenance, Provenance::Learned) as u8);
        put_u8(out, self.fallback as u8);
        match &self.learned_from {
            Some(l) => {
                put_u8(out, 1);
                put_u64(out, l.samples);
                put_f64(out, l.min);
                put_f64(out, l.max);
            }
            None => put_u8(out, 0),
        }
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let criterion = criterion_from(r.u8("criterion")?, "criterion")?;
        let value = r.f64("value")?;
        let provenance = match r.u8("provenance")? {
            0 => Provenance::Configured,
            1 => Provenance::Learned,
            tag => return Err(DecodeError::BadTag { field: "provenance", tag }),
        };
        let fallback = r.u8("fallback")? != 0;
        let learned_from = match r.u8("learned_from")? {
            0 => None,
            1 => Some(LearnedFrom {
                samples: r.u64("learned_from")?,
                min: r.f64("learned_from")?,
                max: r.f64("learned_from")?,
            }),
            tag => return Err(DecodeError::BadTag { field: "learned_from", tag }),
        };
        Ok(Threshold {
            criterion,
            value,
            provenance,
            fallback,
            learned_from,
        })
    }

    fn csv_header() -> Vec<String> {
        ["criterion", "value", "provenance", "fallback", "samples", "min", "max"]
            .map(String::from)
            .to_vec()
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        let l = self.learned_from.as_ref();
        vec![vec![
            self.criterion.to_string(),
            self.value.to_string(),
            match self.provenance {
                Provenance::Learned => "learned".into(),
                Provenance::Configured => "configured".into(),
            },
            self.fallback.to_string(),
            l.map(|l| l.samples.to_string()).unwrap_or_default(),
            fmt_opt(l.map(|l| l.min)),
            fmt_opt(l.map(|l| l.max)),
        ]]
    }

    fn matches(&self, _: &RowFilter) -> bool {
        true
    }
}

impl Row for DecisionAidIndicator {
    const STREAM: Stream = Stream::Indicators;

    fn validate(&self) -> Result<(), FieldError> {
        check_str("indicator_id", &self.indicator_id, true)?;
        check_finite("computed_at", self.computed_at)?;
        for k in &self.kpis {
            if let Some((e, v)) = k.values.iter().find(|(_, v)| !v.is_finite()) {
                return Err(field("kpis", format!("{} for {e} is {v}", k.kpi_id)));
            }
        }
        if self.inputs_digest.len() != 64 {
            return Err(field("inputs_digest", "not a sha-256 hex digest"));
        }
        Ok(())
    }

    fn encode_body(&self, out: &mut Vec<u8>) {
        let json = serde_json::to_vec(self).expect("indicator serializes");
        put_u32(out, json.len() as u32);
        out.extend_from_slice(&json);
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let n = r.u32("indicator")? as usize;
        let json = r.bytes(n, "indicator")?;
        serde_json::from_slice(json).map_err(|e| DecodeError::Json(e.to_string()))
    }

    fn csv_header() -> Vec<String> {
        ["indicator_id", "computed_at", "inputs_digest", "kpi_id", "group_by", "entity", "value"]
            .map(String::from)
            .to_vec()
    }

    /// One row per (kpi, entity); an indicator without values yields one row with empty kpi columns.
    fn csv_records(&self) -> Vec<Vec<String>> {
        let head = || vec![self.indicator_id.clone(), self.computed_at.to_string(), self.inputs_digest.clone()];
        let mut rows: Vec<Vec<String>> = self
            .kpis
            .iter()
            .flat_map(|k| {
                k.values.iter().map(move |(e, v)| (k, e, v))
            })
            .map(|(k, e, v)| {
                let mut r = head();
                r.extend([k.kpi_id.clone(), k.group_by.to_string(), e.clone(), v.to_string()]);
                r
            })
            .collect();
        if rows.is_empty() {
            let mut r = head();
            r.extend([String::new(), String::new(), String::new(), String::new()]);
            rows.push(r);
        }
        rows
    }

    fn matches(&self, f: &RowFilter) -> bool {
        in_time(f, self.computed_at)
    }
}

impl Row for SignalBlock {
    const STREAM: Stream = Stream::RawSignal;

    fn validate(&self) -> Result<(), FieldError> {
        if self.channels.iter().any(|c| c.len() != BLOCK_LEN) || self.power.len() != BLOCK_LEN {
            return Err(field("channels", format!("expected {BLOCK_LEN} samples per channel")));
        }
        if !self.validate() {
            return Err(field("channels", "non-finite sample"));
        }
        check_non_negative("start_time", self.start_time)
    }

    fn encode_body(&self, out: &mut Vec<u8>) {
        put_u64(out, self.block_index);
        put_f64(out, self.start_time);
        put_f64(out, self.sample_rate);
        for c in self.channels.iter().chain(std::iter::once(&self.power)) {
            for v in c {
                put_f64(out, *v);
            }
        }
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let block_index = r.u64("block_index")?;
        let start_time = r.f64("start_time")?;
        let sample_rate = r.f64("sample_rate")?;
        let mut read = || (0..BLOCK_LEN).map(|_| r.f64("samples")).collect::<Result<Vec<_>, _>>();
        let channels = [read()?, read()?, read()?, read()?];
        let power = read()?;
        Ok(SignalBlock {
            block_index,
            start_time,
            channels,
            power,
            sample_rate,
        })
    }

    fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = ["block_index", "sample", "time"].map(String::from).to_vec();
        h.extend((0..CHANNELS).map(|c| format!("accel_{c}")));
        h.push("power".into());
        h
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        (0..BLOCK_LEN)
            .map(|i| {
                let mut r = vec![
                    self.block_index.to_string(),
                    i.to_string(),
                    (self.start_time + i as f64 / self.sample_rate).to_string(),
                ];
                r.extend(self.channels.iter().map(|c| c[i].to_string()));
                r.push(self.power[i].to_string());
                r
            })
            .collect()
    }

    fn matches(&self, f: &RowFilter) -> bool {
        in_time(f, self.start_time)
    }
}
