//! Decision-aid reports: JSON, plain text and one SVG pie chart per section.
//!
//! The decider's role selects which entity groupings are shown. The layout of
//! every file is described in `docs/report-format.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kpi::{
    rank, Aggregation, DecisionAidIndicator, EntityKind, InstantiationContext, KpiError, Mode, ScopeFilter, TimeRange,
};
use crate::store::write_atomic;

/// Version tag written in every report JSON.
pub const REPORT_FORMAT: &str = "machagg-report/1";

/// Marker carried by reports whose indicator has no values.
pub const EMPTY_MARKER: &str = "no data in scope";

/// Slices below this share of the total are merged into "other".
pub const OTHER_SHARE: f64 = 0.01;

pub const OTHER_LABEL: &str = "other";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid report spec: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report has not been built: {0}")]
    NotBuilt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Svg,
    Text,
}

fn all_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Svg, ReportFormat::Text]
}

/// What to report, for whom, and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    pub name: String,
    pub context: InstantiationContext,
    /// KPI model ids.
    pub models: Vec<String>,
    #[serde(default = "all_formats")]
    pub formats: Vec<ReportFormat>,
    /// Output directory relative to the run directory; `reports/<name>` by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ReportSpec {
    pub fn validate(&self) -> Result<(), ReportError> {
        let bad = |m: &str| Err(ReportError::Invalid(m.to_string()));
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_".contains(c)) {
            return bad("name must be non-empty and use only [A-Za-z0-9_-]");
        }
        if self.formats.is_empty() {
            return bad("at least one format is required");
        }
        if self.models.is_empty() {
            return bad("at least one kpi model is required");
        }
        if let Some(out) = &self.output {
            if out.is_absolute() || out.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                return bad("output must be a relative path inside the run directory");
            }
        }
        self.context
            .validate()
            .map_err(|e: KpiError| ReportError::Invalid(format!("context: {e}")))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| Path::new("reports").join(&self.name))
    }
}

/// Entity groupings shown to a decider role; unknown roles see everything.
pub fn profile(decider: &str) -> &'static [EntityKind] {
    match decider {
        "manufacturing_department" => &[EntityKind::Tool, EntityKind::Program],
        "maintenance" => &[EntityKind::Machine, EntityKind::Tool],
        "quality" => &[EntityKind::Workpiece, EntityKind::Program],
        _ => &[
            EntityKind::Tool,
            EntityKind::Program,
            EntityKind::Workpiece,
            EntityKind::Machine,
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeHeader {
    pub name: String,
    pub objective: String,
    pub decider: String,
    pub scope: ScopeFilter,
    pub mode: Mode,
    pub time_range: Option<TimeRange>,
    pub computed_at: f64,
    pub indicator_id: String,
    pub inputs_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub entity: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieSlice {
    pub label: String,
    pub value: f64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub kpi_id: String,
    pub group_by: EntityKind,
    pub source_metric: String,
    pub aggregation: Aggregation,
    pub total: f64,
    /// Descending by value, ties by entity name.
    pub table: Vec<TableRow>,
    /// Absent when the section is empty or has negative values.
    pub chart: Option<Vec<PieSlice>>,
    /// SVG file relative to the run directory, when written.
    pub chart_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub header: NarrativeHeader,
    pub sections: Vec<ReportSection>,
    /// [`EMPTY_MARKER`] when there is nothing to show.
    pub marker: Option<String>,
    /// Files written, relative to the run directory.
    pub files: Vec<PathBuf>,
    pub indicator: DecisionAidIndicator,
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.marker.is_some()
    }
}

/// Pie data: shares of the total, small slices merged into "other".
pub fn pie_slices(values: &BTreeMap<String, f64>) -> Option<Vec<PieSlice>> {
    let total: f64 = values.values().sum();
    if values.is_empty() || values.values().any(|v| *v < 0.0) || !(total > 0.0) {
        return None;
    }
    let mut slices = Vec::new();
    let mut other = 0.0;
    for (entity, v) in rank(values) {
        if v / total < OTHER_SHARE {
            other += v;
        } else {
            slices.push(PieSlice {
                label: entity.to_string(),
                value: v,
                share: v / total,
            });
        }
    }
    if other > 0.0 {
        slices.push(PieSlice {
            label: OTHER_LABEL.into(),
            value: other,
            share: other / total,
        });
    }
    Some(slices)
}

fn sections(spec: &ReportSpec, indicator: &DecisionAidIndicator) -> Vec<ReportSection> {
    let shown = profile(&indicator.context.decider);
    spec.models
        .iter()
        .filter_map(|id| indicator.kpi(id))
        .filter(|k| shown.contains(&k.group_by))
        .map(|k| ReportSection {
            kpi_id: k.kpi_id.clone(),
            group_by: k.group_by,
            source_metric: k.source_metric.clone(),
            aggregation: k.aggregation,
            total: k.values.values().sum(),
            table: rank(&k.values)
                .into_iter()
                .map(|(e, v)| TableRow {
                    entity: e.to_string(),
                    value: v,
                })
                .collect(),
            chart: pie_slices(&k.values),
            chart_file: None,
        })
        .collect()
}

fn write(root: &Path, rel: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let path = root.join(rel);
    let io = |source| ReportError::Io {
        path: path.clone(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    write_atomic(&path, bytes, false).map_err(io)
}

/// Builds the report of `indicator` and writes the requested formats under
/// `root/<spec output>/<indicator_id>/`.
pub fn build_report(spec: &ReportSpec, indicator: &DecisionAidIndicator, root: &Path) -> Result<Report, ReportError> {
    spec.validate()?;
    let ctx = &indicator.context;
    let mut sections = sections(spec, indicator);
    let empty = sections.iter().all(|s| s.table.is_empty());
    let dir = spec.output_dir().join(&indicator.indicator_id);
    let mut files = Vec::new();
    if spec.formats.contains(&ReportFormat::Svg) && !empty {
        for s in sections.iter_mut() {
            let Some(chart) = &s.chart else { continue };
            let rel = dir.join(format!("{}.svg", s.kpi_id));
            let title = format!("{} by {}", s.source_metric, s.group_by);
            write(root, &rel, pie_svg(&title, chart).as_bytes())?;
            s.chart_file = Some(rel.clone());
            files.push(rel);
        }
    }
    let mut report = Report {
        format: REPORT_FORMAT.into(),
        header: NarrativeHeader {
            name: spec.name.clone(),
            objective: ctx.objective.clone(),
            decider: ctx.decider.clone(),
            scope: ctx.scope.clone(),
            mode: ctx.mode.clone(),
            time_range: indicator.window,
            computed_at: indicator.computed_at,
            indicator_id: indicator.indicator_id.clone(),
            inputs_digest: indicator.inputs_digest.clone(),
        },
        sections,
        marker: empty.then(|| EMPTY_MARKER.to_string()),
        files: Vec::new(),
        indicator: indicator.clone(),
    };
    if spec.formats.contains(&ReportFormat::Text) {
        let rel = dir.join("report.txt");
        write(root, &rel, render_text(&report).as_bytes())?;
        files.push(rel);
    }
    if spec.formats.contains(&ReportFormat::Json) {
        let rel = dir.join("report.json");
        files.push(rel.clone());
        report.files = files.clone();
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write(root, &rel, json.as_bytes())?;
    }
    report.files = files;
    Ok(report)
}

fn describe_scope(s: &ScopeFilter) -> String {
    let mut parts = Vec::new();
    for (k, v) in [
        ("machine", &s.machine),
        ("tool", &s.tool),
        ("program", &s.program),
        ("workpiece", &s.workpiece),
    ] {
        if let Some(v) = v {
            parts.push(format!("{k}={v}"));
        }
    }
    if let Some(r) = s.time_range {
        parts.push(format!("time=[{}, {}) s", r.from, r.to));
    }
    if parts.is_empty() {
        "all data".into()
    } else {
        parts.join(", ")
    }
}

fn describe_mode(m: &Mode) -> String {
    match m {
        Mode::Periodic { period } => format!("periodic, every {period} s"),
        Mode::OnDemand { requests } => format!("on demand ({} requests)", requests.len()),
        Mode::OnEvent { metric_id, threshold } => format!("on event: {metric_id} > {threshold}"),
    }
}

/// Plain-text rendering of a report.
pub fn render_text(r: &Report) -> String {
    let h = &r.header;
    let mut out = String::new();
    let _ = writeln!(out, "Decision-aid report: {}", h.name);
    let _ = writeln!(out, "Objective:  {}", h.objective);
    let _ = writeln!(out, "Decider:    {}", h.decider);
    let _ = writeln!(out, "Scope:      {}", describe_scope(&h.scope));
    let _ = writeln!(out, "Mode:       {}", describe_mode(&h.mode));
    match h.time_range {
        Some(t) => {
            let _ = writeln!(out, "Window:     [{}, {}) s", t.from, t.to);
        }
        None => {
            let _ = writeln!(out, "Window:     whole scope");
        }
    }
    let _ = writeln!(out, "Computed:   t = {} s", h.computed_at);
    let _ = writeln!(out, "Indicator:  {}", h.indicator_id);
    let _ = writeln!(out, "Inputs:     sha256 {}", h.inputs_digest);
    if let Some(marker) = &r.marker {
        let _ = writeln!(out, "\n{marker}");
        return out;
    }
    for s in &r.sections {
        let _ = writeln!(
            out,
            "\n== {} ({} of {} by {}) ==",
            s.kpi_id, s.aggregation, s.source_metric, s.group_by
        );
        if s.table.is_empty() {
            let _ = writeln!(out, "{EMPTY_MARKER}");
            continue;
        }
        let width = s.table.iter().map(|t| t.entity.len()).max().unwrap_or(0).max(s.group_by.as_str().len());
        let _ = writeln!(out, "{:<4}  {:<width$}  {:>14}  {:>7}", "rank", s.group_by.as_str(), "value", "share");
        for (i, t) in s.table.iter().enumerate() {
            let share = if s.total > 0.0 && t.value >= 0.0 {
                format!("{:.1}%", 100.0 * t.value / s.total)
            } else {
                "-".into()
            };
            let _ = writeln!(out, "{:<4}  {:<width$}  {:>14.4}  {:>7}", i + 1, t.entity, t.value, share);
        }
        let _ = writeln!(out, "{:<4}  {:<width$}  {:>14.4}", "", "total", s.total);
    }
    out
}

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Pie chart with a legend, slices clockwise from 12 o'clock in slice order.
pub fn pie_svg(title: &str, slices: &[PieSlice]) -> String {
    const W: f64 = 560.0;
    const CX: f64 = 170.0;
    const CY: f64 = 200.0;
    const R: f64 = 140.0;
    let legend_h = 30.0 + 22.0 * slices.len() as f64;
    let h = (CY + R + 20.0).max(60.0 + legend_h);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h}" viewBox="0 0 {W} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"  <title>{}</title>"#, xml_escape(title));
    let _ = writeln!(
        s,
        r#"  <text x="{}" y="28" text-anchor="middle" font-size="16" font-weight="bold">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(s, r##"  <g id="slices" stroke="#ffffff" stroke-width="1">"##);
    let mut angle = 0.0f64;
    for (i, p) in slices.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let label = xml_escape(&p.label);
        if p.share >= 1.0 - 1e-12 {
            let _ = writeln!(
                s,
                r#"    <circle cx="{CX}" cy="{CY}" r="{R}" fill="{color}"><title>{label}: 100.0%</title></circle>"#
            );
            continue;
        }
        let start = angle;
        angle += p.share * std::f64::consts::TAU;
        let point = |a: f64| (CX + R * a.sin(), CY - R * a.cos());
        let (x0, y0) = point(start);
        let (x1, y1) = point(angle);
        let large = if angle - start > std::f64::consts::PI { 1 } else { 0 };
        let _ = writeln!(
            s,
            r#"    <path d="M {CX} {CY} L {x0:.3} {y0:.3} A {R} {R} 0 {large} 1 {x1:.3} {y1:.3} Z" fill="{color}"><title>{label}: {:.1}%</title></path>"#,
            100.0 * p.share
        );
    }
    let _ = writeln!(s, "  </g>");
    let _ = writeln!(s, r#"  <g id="legend" font-size="13">"#);
    for (i, p) in slices.iter().enumerate() {
        let y = 70.0 + 22.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"    <rect x="340" y="{}" width="14" height="14" fill="{color}"/><text x="362" y="{}">{} ({:.1}%)</text>"#,
            y - 11.0,
            y,
            xml_escape(&p.label),
            100.0 * p.share
        );
    }
    let _ = writeln!(s, "  </g>");
    s.push_str("</svg>\n");
    s
}
