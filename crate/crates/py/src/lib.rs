//! Python bindings: manifests, validation, injection, simulation and reports.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mtpenergy::caex::CaexDocument;
use mtpenergy::enrg::MidRegistry;
use mtpenergy::mtp::mutate::{apply_mutation, MutationKind};
use mtpenergy::mtp::{
    add_measurement_instance, extract_measurement_registry, inject_energy_library,
    parse_measurement_specs, validate_energy_mtp, GuidSource, InjectOutcome, MeasurementRegistry,
    ValidationReport,
};
use mtpenergy::pol::{aggregate_report, record_simulation, render_report, ReportFormat};
use mtpenergy::sim::{load_profile, Simulator};
use mtpenergy::tagbus::{TagValue, Timestamp};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn mids() -> PyResult<MidRegistry> {
    mtpenergy::cli::mid_registry().map_err(PyIOError::new_err)
}

fn registry_of(doc: &CaexDocument, mids: &MidRegistry) -> PyResult<MeasurementRegistry> {
    extract_measurement_registry(doc, mids).map_err(value_error)
}

/// A parsed CAEX/AutomationML manifest.
#[pyclass(name = "Manifest", module = "mtpenergy")]
struct PyManifest {
    doc: CaexDocument,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            doc: CaexDocument::parse(text).map_err(value_error)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::parse(&text)
    }

    fn to_xml(&self) -> String {
        self.doc.to_xml()
    }

    fn validate(&self) -> PyResult<PyReport> {
        Ok(PyReport {
            report: validate_energy_mtp(&self.doc, &mids()?),
        })
    }

    /// Adds the EnRGView library and the measurements of a spec file (JSON text).
    /// Returns `"added"` or `"already_present"` per measurement.
    #[pyo3(signature = (spec_json, seed=None))]
    fn inject(&mut self, spec_json: &str, seed: Option<u64>) -> PyResult<Vec<&'static str>> {
        let specs = parse_measurement_specs(spec_json).map_err(value_error)?;
        let mids = mids()?;
        let mut guids = seed.map_or_else(GuidSource::random, GuidSource::seeded);
        // work on a copy so a failing spec leaves the manifest untouched
        let mut doc = self.doc.clone();
        inject_energy_library(&mut doc).map_err(value_error)?;
        let mut outcomes = Vec::new();
        for spec in &specs {
            let outcome =
                add_measurement_instance(&mut doc, spec, &mut guids, &mids).map_err(value_error)?;
            outcomes.push(match outcome {
                InjectOutcome::Added => "added",
                InjectOutcome::AlreadyPresent => "already_present",
            });
        }
        self.doc = doc;
        Ok(outcomes)
    }

    /// `(node_id, guid, access)` for every energy source item.
    fn nodes(&self) -> PyResult<Vec<(String, String, &'static str)>> {
        let registry = registry_of(&self.doc, &mids()?)?;
        Ok(registry
            .nodes()
            .map(|n| {
                (
                    n.item.node_id.clone(),
                    n.item.guid.clone(),
                    n.item.access.as_str(),
                )
            })
            .collect())
    }

    /// The measurement specs recovered from the manifest, as JSON text.
    fn measurement_specs(&self) -> PyResult<String> {
        let registry = registry_of(&self.doc, &mids()?)?;
        serde_json::to_string_pretty(&registry.to_specs()).map_err(value_error)
    }

    /// Applies one seeded corruption; returns whether anything changed.
    fn mutate(&mut self, kind: &str, seed: u64) -> PyResult<bool> {
        let kind = MutationKind::ALL
            .into_iter()
            .find(|k| k.slug() == kind)
            .ok_or_else(|| PyValueError::new_err(format!("unknown mutation `{kind}`")))?;
        Ok(apply_mutation(&mut self.doc, kind, seed))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.doc == other.doc
    }
}

#[pyclass(name = "ValidationReport", module = "mtpenergy")]
struct PyReport {
    report: ValidationReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn error_count(&self) -> usize {
        self.report.error_count()
    }

    #[getter]
    fn has_errors(&self) -> bool {
        self.report.has_errors()
    }

    /// `(severity, code, location, message)` per finding.
    fn issues(&self) -> Vec<(String, String, String, String)> {
        self.report
            .violations
            .iter()
            .map(|i| {
                (
                    format!("{:?}", i.severity),
                    i.code.to_string(),
                    i.location.clone(),
                    i.message.clone(),
                )
            })
            .collect()
    }

    fn render_text(&self) -> String {
        self.report.render_text()
    }
}

/// Received samples per node.
#[pyclass(name = "SampleLog", module = "mtpenergy")]
struct PySampleLog {
    log: mtpenergy::pol::SampleLog,
}

#[pymethods]
impl PySampleLog {
    #[staticmethod]
    fn from_ndjson(text: &str) -> PyResult<Self> {
        Ok(Self {
            log: mtpenergy::pol::SampleLog::from_ndjson(text).map_err(value_error)?,
        })
    }

    fn to_ndjson(&self) -> String {
        self.log.to_ndjson()
    }

    fn nodes(&self) -> Vec<String> {
        self.log.nodes().map(str::to_owned).collect()
    }

    /// `(ts_ms, value, quality)` with `value` a float or a string.
    fn series(&self, py: Python<'_>, node: &str) -> PyResult<Vec<(i64, Py<PyAny>, &'static str)>> {
        self.log
            .series(node)
            .iter()
            .map(|s| {
                let value = match &s.value {
                    TagValue::Number(v) => v.into_pyobject(py)?.into_any().unbind(),
                    TagValue::Text(t) => t.into_pyobject(py)?.into_any().unbind(),
                };
                Ok((s.ts.millis(), value, s.q.as_str()))
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.log.len()
    }

    /// Trapezoid energy of a power node over `[t0_ms, t1_ms]`.
    fn integrate_energy(
        &self,
        node: &str,
        t0_ms: i64,
        t1_ms: i64,
        power_unit: &str,
        energy_unit: &str,
    ) -> PyResult<f64> {
        mtpenergy::pol::integrate_energy(
            &self.log,
            node,
            Timestamp(t0_ms),
            Timestamp(t1_ms),
            power_unit,
            energy_unit,
        )
        .map_err(value_error)
    }
}

/// Runs the simulated PEA of `manifest` for `ticks` ticks under a profile
/// (JSON text) and returns what a subscriber would record.
#[pyfunction]
fn simulate(manifest: &PyManifest, profile_json: &str, ticks: u64) -> PyResult<PySampleLog> {
    let mids = mids()?;
    let report = validate_energy_mtp(&manifest.doc, &mids);
    if report.has_errors() {
        return Err(PyValueError::new_err(report.render_text()));
    }
    let registry = registry_of(&manifest.doc, &mids)?;
    let profile = load_profile(profile_json, &registry).map_err(value_error)?;
    let mut sim = Simulator::new(registry, profile, &mids);
    Ok(PySampleLog {
        log: record_simulation(&mut sim, ticks),
    })
}

/// Energy report of a sample log: `format` is `csv`, `json` or `text`.
#[pyfunction]
#[pyo3(signature = (log, manifest, format="csv"))]
fn energy_report(log: &PySampleLog, manifest: &PyManifest, format: &str) -> PyResult<String> {
    let format = match format {
        "csv" => ReportFormat::Csv,
        "json" => ReportFormat::Json,
        "text" => ReportFormat::Text,
        other => return Err(PyValueError::new_err(format!("unknown format `{other}`"))),
    };
    let mids = mids()?;
    let registry = registry_of(&manifest.doc, &mids)?;
    Ok(render_report(
        &aggregate_report(&log.log, &registry, &mids),
        format,
    ))
}

/// Runs the command line with `args` (without the program name); returns the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    mtpenergy::cli::run_with(
        std::iter::once("mtpenergy".to_string()).chain(args),
        &mut stdout.lock(),
        &mut stderr.lock(),
    )
}

#[pymodule]
#[pyo3(name = "mtpenergy")]
fn mtpenergy_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifest>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PySampleLog>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(energy_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add(
        "MUTATIONS",
        MutationKind::ALL
            .iter()
            .map(|k| k.slug())
            .collect::<Vec<_>>(),
    )?;
    Ok(())
}
