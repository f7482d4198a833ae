//! Python bindings for the machagg engine.
//!
//! ```python
//! import machagg
//! cfg = machagg.PipelineConfig.demo().with_seed(1)
//! summary = machagg.run_pipeline(cfg, "out")
//! store = machagg.RecordStore("out/store")
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use machagg_core::aggregate::{self as agg, Criterion, Threshold};
use machagg_core::kpi::DecisionAidIndicator;
use machagg_core::monitor::{self, MonitorConfig, WindowKind};
use machagg_core::orchestrate::{self as orch};
use machagg_core::store::{self as st, RowFilter, Stream};
use machagg_core::synth::{self, ScenarioScript};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(machagg, MachaggError, PyException, "Raised when an engine operation fails.");

fn engine_err(e: impl std::fmt::Display) -> PyErr {
    MachaggError::new_err(e.to_string())
}

fn criterion(name: &str) -> PyResult<Criterion> {
    name.parse().map_err(|e: String| PyValueError::new_err(e))
}

fn window(name: &str) -> PyResult<WindowKind> {
    match name {
        "hann" => Ok(WindowKind::Hann),
        "rectangular" => Ok(WindowKind::Rectangular),
        other => Err(PyValueError::new_err(format!("unknown window `{other}`"))),
    }
}

/// A scripted production scenario.
#[pyclass(frozen, module = "machagg")]
pub struct Scenario {
    inner: ScenarioScript,
}

#[pymethods]
impl Scenario {
    /// Parses a scenario TOML document.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner: ScenarioScript = toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    /// Scenario of the built-in demo configuration.
    #[staticmethod]
    fn demo() -> Self {
        Self {
            inner: orch::PipelineConfig::demo().scenario().clone(),
        }
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(engine_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    fn block_count(&self) -> u64 {
        self.inner.block_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(seed={}, duration={}, entries={})",
            self.inner.seed,
            self.inner.duration,
            self.inner.schedule.len()
        )
    }
}

/// 0.1 s of raw samples: four accelerometers and spindle power.
#[pyclass(frozen, module = "machagg")]
pub struct SignalBlock {
    inner: synth::SignalBlock,
}

#[pymethods]
impl SignalBlock {
    #[getter]
    fn block_index(&self) -> u64 {
        self.inner.block_index
    }

    #[getter]
    fn start_time(&self) -> f64 {
        self.inner.start_time
    }

    #[getter]
    fn channels(&self) -> Vec<Vec<f64>> {
        self.inner.channels.to_vec()
    }

    #[getter]
    fn power(&self) -> Vec<f64> {
        self.inner.power.clone()
    }
}

/// 10 Hz machining context.
#[pyclass(frozen, module = "machagg")]
pub struct ContextSample {
    inner: synth::ContextSample,
}

#[pymethods]
impl ContextSample {
    #[getter]
    fn time(&self) -> f64 {
        self.inner.time
    }

    #[getter]
    fn tool_id(&self) -> &str {
        &self.inner.tool_id
    }

    #[getter]
    fn program_name(&self) -> &str {
        &self.inner.program_name
    }

    #[getter]
    fn workpiece_id(&self) -> &str {
        &self.inner.workpiece_id
    }

    #[getter]
    fn spindle_speed(&self) -> f64 {
        self.inner.spindle_speed
    }

    #[getter]
    fn feedrate(&self) -> f64 {
        self.inner.feedrate
    }

    #[getter]
    fn spindle_temperature(&self) -> f64 {
        self.inner.spindle_temperature
    }
}

/// Deterministic block source for a scenario.
#[pyclass(frozen, module = "machagg")]
pub struct Generator {
    inner: synth::Generator,
}

#[pymethods]
impl Generator {
    #[new]
    fn new(scenario: PyRef<'_, Scenario>) -> PyResult<Self> {
        let inner = synth::Generator::new(&scenario.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn block_count(&self) -> u64 {
        self.inner.block_count()
    }

    fn block(&self, index: u64) -> SignalBlock {
        SignalBlock {
            inner: self.inner.block(index),
        }
    }

    fn context(&self, index: u64) -> ContextSample {
        ContextSample {
            inner: self.inner.context(index),
        }
    }
}

/// Monitoring criteria of one block.
#[pyclass(frozen, module = "machagg")]
pub struct MonitoringRecord {
    inner: monitor::MonitoringRecord,
}

#[pymethods]
impl MonitoringRecord {
    #[getter]
    fn time(&self) -> f64 {
        self.inner.time
    }

    #[getter]
    fn vrms(&self) -> [f64; 4] {
        self.inner.vrms
    }

    #[getter]
    fn nh(&self) -> [f64; 4] {
        self.inner.nh
    }

    #[getter]
    fn unbalance(&self) -> [f64; 4] {
        self.inner.unbalance
    }

    #[getter]
    fn bearing(&self) -> [f64; 4] {
        self.inner.bearing
    }

    #[getter]
    fn mean_power(&self) -> f64 {
        self.inner.mean_power
    }

    #[getter]
    fn tool_id(&self) -> &str {
        &self.inner.tool_id
    }

    #[getter]
    fn program_name(&self) -> &str {
        &self.inner.program_name
    }

    #[getter]
    fn workpiece_id(&self) -> &str {
        &self.inner.workpiece_id
    }

    /// Value of a criterion (`vrms`, `nh`, ..., `power`), channels fused by quadratic mean.
    fn criterion(&self, name: &str) -> PyResult<f64> {
        Ok(criterion(name)?.value(&self.inner))
    }
}

/// Level-1 processor.
#[pyclass(frozen, module = "machagg")]
pub struct Monitor {
    inner: monitor::Monitor,
}

#[pymethods]
impl Monitor {
    #[new]
    #[pyo3(signature = (bandwidth = 10_000.0, window = "hann"))]
    fn new(bandwidth: f64, window: &str) -> PyResult<Self> {
        let cfg = MonitorConfig {
            bandwidth,
            window: self::window(window)?,
            ..MonitorConfig::default()
        };
        let inner = monitor::Monitor::new(cfg).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn process(&self, block: PyRef<'_, SignalBlock>, context: PyRef<'_, ContextSample>) -> PyResult<MonitoringRecord> {
        let inner = self.inner.process(&block.inner, &context.inner).map_err(engine_err)?;
        Ok(MonitoringRecord { inner })
    }
}

/// Generates and monitors every block of `scenario`.
#[pyfunction]
#[pyo3(signature = (scenario, bandwidth = 10_000.0))]
fn monitor_scenario(py: Python<'_>, scenario: PyRef<'_, Scenario>, bandwidth: f64) -> PyResult<Vec<MonitoringRecord>> {
    let script = scenario.inner.clone();
    py.detach(|| {
        let generator = synth::Generator::new(&script).map_err(|e| e.to_string())?;
        let monitor = monitor::Monitor::new(MonitorConfig {
            bandwidth,
            ..MonitorConfig::default()
        })
        .map_err(|e| e.to_string())?;
        (0..generator.block_count())
            .map(|i| {
                monitor
                    .process(&generator.block(i), &generator.context(i))
                    .map(|inner| MonitoringRecord { inner })
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, String>>()
    })
    .map_err(MachaggError::new_err)
}

/// One-sided amplitude spectrum of a 2500-sample block channel.
#[pyfunction]
#[pyo3(signature = (samples, window = "hann"))]
fn spectrum(samples: Vec<f64>, window: &str) -> PyResult<Vec<f64>> {
    let analyzer = monitor::SpectrumAnalyzer::new(self::window(window)?);
    Ok(analyzer.spectrum(&samples).map_err(engine_err)?.bin_magnitudes)
}

#[pyfunction]
#[pyo3(signature = (samples, bandwidth = 10_000.0))]
fn compute_vrms(samples: Vec<f64>, bandwidth: f64) -> PyResult<f64> {
    monitor::compute_vrms(&samples, bandwidth).map_err(engine_err)
}

fn series_and_threshold(samples: Vec<f64>, threshold: f64, start_time: f64) -> PyResult<(agg::CriterionSeries, Threshold)> {
    let series = agg::CriterionSeries::new(Criterion::Nh, start_time, samples).map_err(engine_err)?;
    Ok((series, Threshold::configured(Criterion::Nh, threshold)))
}

/// Criticality operator: Σ (x − threshold)·0.1 over samples above threshold in [t_i, t_f].
#[pyfunction]
#[pyo3(signature = (samples, threshold, t_i, t_f, start_time = 0.0))]
fn co_operator(samples: Vec<f64>, threshold: f64, t_i: f64, t_f: f64, start_time: f64) -> PyResult<f64> {
    let (s, t) = series_and_threshold(samples, threshold, start_time)?;
    agg::co_operator(&s, &t, t_i, t_f).map_err(engine_err)
}

/// Duration operator: time spent above threshold in [t_i, t_f], s.
#[pyfunction]
#[pyo3(signature = (samples, threshold, t_i, t_f, start_time = 0.0))]
fn t_operator(samples: Vec<f64>, threshold: f64, t_i: f64, t_f: f64, start_time: f64) -> PyResult<f64> {
    let (s, t) = series_and_threshold(samples, threshold, start_time)?;
    agg::t_operator(&s, &t, t_i, t_f).map_err(engine_err)
}

/// Learns a threshold; returns `(value, fallback)`.
#[pyfunction]
#[pyo3(signature = (values, criterion = "nh"))]
fn learn_threshold(values: Vec<f64>, criterion: &str) -> PyResult<(f64, bool)> {
    let t = agg::learn_threshold(self::criterion(criterion)?, &values).map_err(engine_err)?;
    Ok((t.value, t.fallback))
}

/// Interval of one tool's use.
#[pyclass(frozen, module = "machagg")]
pub struct ToolUsagePeriod {
    inner: agg::ToolUsagePeriod,
}

#[pymethods]
impl ToolUsagePeriod {
    #[getter]
    fn period_id(&self) -> &str {
        &self.inner.period_id
    }

    #[getter]
    fn tool_id(&self) -> &str {
        &self.inner.tool_id
    }

    #[getter]
    fn t_i(&self) -> f64 {
        self.inner.t_i
    }

    #[getter]
    fn t_f(&self) -> f64 {
        self.inner.t_f
    }

    #[getter]
    fn programs(&self) -> Vec<String> {
        self.inner.programs.iter().cloned().collect()
    }

    #[getter]
    fn workpieces(&self) -> Vec<String> {
        self.inner.workpieces.iter().cloned().collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "ToolUsagePeriod({}, tool={}, [{}, {}])",
            self.inner.period_id, self.inner.tool_id, self.inner.t_i, self.inner.t_f
        )
    }
}

#[pyfunction]
#[pyo3(signature = (records, machine_id = "M1", gap_split = 5.0))]
fn segment_periods(records: Vec<PyRef<'_, MonitoringRecord>>, machine_id: &str, gap_split: f64) -> PyResult<Vec<ToolUsagePeriod>> {
    let records: Vec<monitor::MonitoringRecord> = records.iter().map(|r| r.inner.clone()).collect();
    let periods = agg::segment_periods(&records, machine_id, &agg::SegmentRule { gap_split }).map_err(engine_err)?;
    Ok(periods.into_iter().map(|inner| ToolUsagePeriod { inner }).collect())
}

/// Per-period aggregate.
#[pyclass(frozen, module = "machagg")]
pub struct SmartDatum {
    inner: agg::SmartDatum,
}

#[pymethods]
impl SmartDatum {
    #[getter]
    fn period_id(&self) -> &str {
        &self.inner.period_id
    }

    #[getter]
    fn metric_id(&self) -> &str {
        &self.inner.metric_id
    }

    #[getter]
    fn value(&self) -> Option<f64> {
        self.inner.value
    }

    #[getter]
    fn threshold(&self) -> Option<f64> {
        self.inner.threshold_used.map(|t| t.value)
    }

    fn __repr__(&self) -> String {
        format!("SmartDatum({}, {}, {:?})", self.inner.period_id, self.inner.metric_id, self.inner.value)
    }
}

/// Pipeline configuration (TOML).
#[pyclass(frozen, module = "machagg")]
pub struct PipelineConfig {
    inner: orch::PipelineConfig,
}

#[pymethods]
impl PipelineConfig {
    #[staticmethod]
    fn demo() -> Self {
        Self {
            inner: orch::PipelineConfig::demo(),
        }
    }

    /// Loads a configuration file, or the demo for `"demo"`.
    #[staticmethod]
    fn load(source: &str) -> PyResult<Self> {
        Ok(Self {
            inner: orch::PipelineConfig::load(source).map_err(engine_err)?,
        })
    }

    /// Copy with the scenario seed replaced.
    fn with_seed(&self, seed: u64) -> Self {
        Self {
            inner: self.inner.clone().with_seed(seed),
        }
    }

    /// Copy with the scenario replaced.
    fn with_scenario(&self, scenario: PyRef<'_, Scenario>) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        inner.scenario = Some(scenario.inner.clone());
        inner.validate().map_err(PyValueError::new_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn scenario(&self) -> Scenario {
        Scenario {
            inner: self.inner.scenario().clone(),
        }
    }

    #[getter]
    fn kpi_ids(&self) -> Vec<String> {
        self.inner.kpis.iter().map(|k| k.kpi_id.clone()).collect()
    }
}

/// Outcome of a pipeline run.
#[pyclass(frozen, module = "machagg")]
pub struct RunSummary {
    inner: orch::RunSummary,
}

#[pymethods]
impl RunSummary {
    #[getter]
    fn blocks(&self) -> u64 {
        self.inner.blocks
    }

    #[getter]
    fn periods(&self) -> usize {
        self.inner.periods
    }

    #[getter]
    fn smart_data(&self) -> usize {
        self.inner.smart_data
    }

    #[getter]
    fn indicators(&self) -> Vec<String> {
        self.inner.indicators.clone()
    }

    /// `{stream: (rows, bytes)}`.
    #[getter]
    fn streams(&self) -> BTreeMap<String, (u64, u64)> {
        self.inner.streams.iter().map(|(k, v)| (k.clone(), (v.rows, v.bytes))).collect()
    }

    #[getter]
    fn reports(&self) -> Vec<PathBuf> {
        self.inner.reports.clone()
    }

    #[getter]
    fn outbox(&self) -> Vec<PathBuf> {
        self.inner.outbox.clone()
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("summary serializes")
    }
}

/// Runs every stage into `out`. Releases the GIL while running.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config: PyRef<'_, PipelineConfig>, out: PathBuf) -> PyResult<RunSummary> {
    let cfg = config.inner.clone();
    let inner = py.detach(|| orch::run_pipeline(&cfg, &out)).map_err(engine_err)?;
    Ok(RunSummary { inner })
}

/// Read access to a run's store.
#[pyclass(module = "machagg")]
pub struct RecordStore {
    inner: st::RecordStore,
}

fn stream(name: &str) -> PyResult<Stream> {
    name.parse().map_err(|e: st::StoreError| PyValueError::new_err(e.to_string()))
}

#[pymethods]
impl RecordStore {
    #[new]
    fn open(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: st::RecordStore::open(path).map_err(engine_err)?,
        })
    }

    /// `(rows, bytes)` of a stream.
    fn stats(&self, name: &str) -> PyResult<(u64, u64)> {
        let s = self.inner.stats(stream(name)?);
        Ok((s.rows, s.bytes))
    }

    /// Monitoring records with `start <= time < end`.
    #[pyo3(signature = (start = None, end = None))]
    fn monitoring(&self, start: Option<f64>, end: Option<f64>) -> PyResult<Vec<MonitoringRecord>> {
        let filter = RowFilter {
            from: start,
            to: end,
            ..RowFilter::all()
        };
        let snap = self.inner.snapshot::<monitor::MonitoringRecord>(&filter).map_err(engine_err)?;
        Ok(snap.iter().cloned().map(|inner| MonitoringRecord { inner }).collect())
    }

    fn periods(&self) -> PyResult<Vec<ToolUsagePeriod>> {
        let snap = self.inner.snapshot::<agg::ToolUsagePeriod>(&RowFilter::all()).map_err(engine_err)?;
        Ok(snap.iter().cloned().map(|inner| ToolUsagePeriod { inner }).collect())
    }

    #[pyo3(signature = (metric_id = None))]
    fn smart_data(&self, metric_id: Option<String>) -> PyResult<Vec<SmartDatum>> {
        let filter = RowFilter {
            metric_id,
            ..RowFilter::all()
        };
        let snap = self.inner.snapshot::<agg::SmartDatum>(&filter).map_err(engine_err)?;
        Ok(snap.iter().cloned().map(|inner| SmartDatum { inner }).collect())
    }

    /// Indicators as JSON documents.
    fn indicators(&self) -> PyResult<Vec<String>> {
        let snap = self.inner.snapshot::<DecisionAidIndicator>(&RowFilter::all()).map_err(engine_err)?;
        Ok(snap.iter().map(|i| serde_json::to_string(i).expect("indicator serializes")).collect())
    }
}

#[pymodule]
pub fn machagg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MachaggError", m.py().get_type::<MachaggError>())?;
    m.add("SAMPLE_RATE", machagg_core::SAMPLE_RATE)?;
    m.add("BLOCK_LEN", machagg_core::BLOCK_LEN)?;
    m.add("DT", machagg_core::DT)?;
    m.add_class::<Scenario>()?;
    m.add_class::<SignalBlock>()?;
    m.add_class::<ContextSample>()?;
    m.add_class::<Generator>()?;
    m.add_class::<MonitoringRecord>()?;
    m.add_class::<Monitor>()?;
    m.add_class::<ToolUsagePeriod>()?;
    m.add_class::<SmartDatum>()?;
    m.add_class::<PipelineConfig>()?;
    m.add_class::<RunSummary>()?;
    m.add_class::<RecordStore>()?;
    m.add_function(wrap_pyfunction!(monitor_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(compute_vrms, m)?)?;
    m.add_function(wrap_pyfunction!(co_operator, m)?)?;
    m.add_function(wrap_pyfunction!(t_operator, m)?)?;
    m.add_function(wrap_pyfunction!(learn_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(segment_periods, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
