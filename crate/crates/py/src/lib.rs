//! Python bindings for a2rd-core.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use a2rd_core::controller::{create_domain, DomainConfig, DomainController, LayerRequest};
use a2rd_core::identity::{self, Asn};
use a2rd_core::interdomain::{load_scenario, run_scenario, validate, ScenarioError};
use a2rd_core::ledger::{self, Payload, PayloadKind, VerifyResult};
use a2rd_core::rpsl::{self, Attribute, RpslObject};
use a2rd_core::skau;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "IeId", module = "a2rd", frozen, eq, hash, from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PyIeId(identity::IeId);

#[pymethods]
impl PyIeId {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        identity::parse_ie_id(text).map(PyIeId).map_err(value_err)
    }

    #[getter]
    fn asn(&self) -> u32 {
        self.0.asn().0
    }

    #[getter]
    fn path(&self) -> Vec<u32> {
        self.0.path().to_vec()
    }

    /// `Controller`, `Specialized`, `Colony` or one of the `Auxiliary*` kinds.
    #[getter]
    fn layer(&self) -> &'static str {
        self.0.layer().as_str()
    }

    fn domain_controller(&self) -> PyIeId {
        PyIeId(self.0.domain_controller())
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("IeId('{}')", self.0)
    }
}

#[pyfunction]
fn parse_ie_id(text: &str) -> PyResult<PyIeId> {
    PyIeId::new(text)
}

#[pyfunction]
fn is_private_asn(asn: u32) -> bool {
    identity::is_private_asn(Asn(asn))
}

fn layer_request(name: &str) -> PyResult<LayerRequest> {
    match name {
        "specialized" => Ok(LayerRequest::Specialized),
        "colony" => Ok(LayerRequest::Colony),
        other => Err(PyValueError::new_err(format!("unknown layer `{other}`"))),
    }
}

/// A domain controller's registry.
#[pyclass(name = "Registry", module = "a2rd")]
struct PyRegistry(DomainController);

#[pymethods]
impl PyRegistry {
    #[new]
    #[pyo3(signature = (asn, block, max_ies=None))]
    fn new(asn: u32, block: &str, max_ies: Option<u64>) -> PyResult<Self> {
        let mut config = DomainConfig::new(Asn(asn), block.parse().map_err(value_err)?);
        if let Some(n) = max_ies {
            config = config.with_max_ies(n);
        }
        create_domain(config).map(PyRegistry).map_err(value_err)
    }

    #[getter]
    fn controller(&self) -> PyIeId {
        PyIeId(self.0.id().clone())
    }

    #[pyo3(signature = (layer, suffix=None))]
    fn register(&mut self, layer: &str, suffix: Option<u32>) -> PyResult<PyIeId> {
        let entry = self.0.request_registration(layer_request(layer)?, suffix).map_err(value_err)?;
        Ok(PyIeId(entry.id))
    }

    /// Evicts `id` and returns every IE evicted with it, `id` first.
    fn evict(&mut self, id: &PyIeId) -> PyResult<Vec<PyIeId>> {
        let evicted = self.0.evict_cascade(&id.0).map_err(value_err)?;
        Ok(evicted.into_iter().map(|e| PyIeId(e.id)).collect())
    }

    /// Returns the controller id of the new auxiliary subdomain.
    fn spawn_auxiliary(&mut self, colony: &PyIeId) -> PyResult<PyIeId> {
        let sub = self.0.spawn_auxiliary(&colony.0).map_err(value_err)?;
        Ok(PyIeId(sub.id().clone()))
    }

    fn is_active(&self, id: &PyIeId) -> bool {
        self.0.is_active(&id.0)
    }

    fn heartbeat(&mut self, id: &PyIeId) -> bool {
        self.0.record_heartbeat(&id.0)
    }

    fn set_clock(&mut self, tick: u64) {
        self.0.set_clock(tick);
    }

    fn sweep(&mut self) -> Vec<PyIeId> {
        self.0.sweep_liveness().into_iter().map(|e| PyIeId(e.id)).collect()
    }

    fn active_count(&self) -> usize {
        self.0.active_count()
    }

    fn snapshot(&self) -> String {
        self.0.snapshot()
    }
}

type Attrs = Vec<(String, String)>;

fn to_object(attrs: Attrs) -> PyResult<RpslObject> {
    RpslObject::new(attrs.into_iter().map(|(n, v)| Attribute::new(n, v)).collect()).map_err(value_err)
}

fn from_object(obj: &RpslObject) -> Attrs {
    obj.attributes().iter().map(|a| (a.name.clone(), a.value.clone())).collect()
}

/// Parse an RPSL flat file into objects, each a list of (name, value).
#[pyfunction]
fn parse_rpsl(text: &str) -> PyResult<Vec<Attrs>> {
    rpsl::parse_objects(text)
        .into_iter()
        .map(|r| r.map(|o| from_object(&o)).map_err(value_err))
        .collect()
}

#[pyfunction]
fn serialize_rpsl(attrs: Attrs) -> PyResult<String> {
    Ok(rpsl::serialize_object(&to_object(attrs)?))
}

/// Rule violations of one object, as text. Empty when valid.
#[pyfunction]
fn validate_rpsl(attrs: Attrs) -> PyResult<Vec<String>> {
    Ok(rpsl::validate_object(&to_object(attrs)?).iter().map(|v| v.to_string()).collect())
}

fn payload_kind(name: &str) -> PyResult<PayloadKind> {
    PayloadKind::ALL
        .into_iter()
        .find(|k| k.as_str() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown payload kind `{name}`")))
}

#[pyclass(name = "Ledger", module = "a2rd")]
struct PyLedger(ledger::Ledger);

#[pymethods]
impl PyLedger {
    #[new]
    fn new(asn: u32) -> Self {
        PyLedger(ledger::Ledger::new(Asn(asn)))
    }

    /// Parses and verifies a ledger file.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        ledger::import_ledger_str(text).map(PyLedger).map_err(value_err)
    }

    /// Returns the new block's hash as hex.
    fn append(&mut self, registry: &PyRegistry, author: &PyIeId, tick: u64, kind: &str, body: Vec<u8>) -> PyResult<String> {
        let payload = Payload::new(payload_kind(kind)?, body);
        let block = self.0.append_block(&registry.0, &author.0, tick, payload).map_err(value_err)?;
        Ok(block.hash.to_hex())
    }

    /// None when the chain is intact, else the first bad block index.
    fn verify(&self) -> Option<u64> {
        match ledger::verify_chain(&self.0) {
            VerifyResult::Ok => None,
            VerifyResult::FirstBadIndex(i) => Some(i),
        }
    }

    fn to_text(&self) -> String {
        self.0.to_file_string()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyfunction]
fn merge_ledgers(ledgers: Vec<PyRef<'_, PyLedger>>) -> PyResult<String> {
    let owned: Vec<ledger::Ledger> = ledgers.iter().map(|l| l.0.clone()).collect();
    ledger::merge(&owned).map(|m| m.to_text()).map_err(value_err)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    skau::tokenize(text)
}

#[pyclass(name = "Corpus", module = "a2rd")]
#[derive(Default)]
struct PyCorpus(skau::Corpus);

#[pymethods]
impl PyCorpus {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    #[pyo3(signature = (doc_id, text, fetched_at=0))]
    fn ingest(&mut self, doc_id: &str, text: &str, fetched_at: u64) -> PyResult<()> {
        self.0.ingest_document(doc_id, text, fetched_at).map(|_| ()).map_err(value_err)
    }

    /// Ingests every file of `dir`; returns the document ids.
    fn ingest_dir(&mut self, dir: PathBuf) -> PyResult<Vec<String>> {
        self.0.ingest_dir(&dir, 0).map_err(value_err)
    }

    /// Ranked (term, weight, doc_ids) triples.
    #[pyo3(signature = (name, seeds=Vec::new(), top_k=skau::DEFAULT_TOP_K))]
    fn distill(&self, name: &str, seeds: Vec<String>, top_k: usize) -> PyResult<Vec<(String, f64, Vec<String>)>> {
        let index = skau::build_index(&self.0).map_err(value_err)?;
        let dataset = skau::distill(&index, name, &seeds, top_k);
        Ok(dataset.entries.into_iter().map(|e| (e.term, e.weight, e.doc_ids)).collect())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn scenario_err(e: ScenarioError) -> PyErr {
    match e {
        ScenarioError::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => value_err(e),
    }
}

/// Run a scenario file. Writes the output directory when `out` is given and
/// returns a summary dict.
#[pyfunction]
#[pyo3(signature = (path, out=None, seed=None, ticks=None))]
fn run<'py>(
    py: Python<'py>,
    path: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    ticks: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut config = load_scenario(&path).map_err(scenario_err)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(t) = ticks {
        config.max_ticks = t;
    }
    validate(&config).map_err(scenario_err)?;
    let report = py.detach(|| run_scenario(config));
    if let Some(dir) = &out {
        report.write_dir(dir).map_err(scenario_err)?;
    }
    let summary = PyDict::new(py);
    summary.set_item("ticks", report.config.max_ticks)?;
    summary.set_item("events", report.events.len())?;
    summary.set_item("deliveries", report.deliveries.len())?;
    summary.set_item("irr_objects", report.irr.len())?;
    summary.set_item("pending_tasks", report.tasks.pending().count())?;
    summary.set_item("irr_dump", report.irr.dump())?;
    summary.set_item("trace", report.trace_text())?;
    Ok(summary)
}

#[pymodule]
fn a2rd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIeId>()?;
    m.add_class::<PyRegistry>()?;
    m.add_class::<PyLedger>()?;
    m.add_class::<PyCorpus>()?;
    m.add_function(wrap_pyfunction!(parse_ie_id, m)?)?;
    m.add_function(wrap_pyfunction!(is_private_asn, m)?)?;
    m.add_function(wrap_pyfunction!(parse_rpsl, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_rpsl, m)?)?;
    m.add_function(wrap_pyfunction!(validate_rpsl, m)?)?;
    m.add_function(wrap_pyfunction!(merge_ledgers, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
