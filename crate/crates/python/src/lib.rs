//! Python bindings for the feedback harness.
//!
//! Structured values cross the boundary as plain dicts and lists (via JSON),
//! except for the task, report and sandbox types which are wrapped classes.

use std::path::PathBuf;
use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyList;
use serde::Serialize;

use feedback_harness::llm::ChatMessage;
use feedback_harness::prompts::InstructionVariant;
use feedback_harness::refine::RefineConfig;
use feedback_harness::sandbox::SandboxConfig;
use feedback_harness::{dataset, metrics, prompts, sandbox, store};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn variant(name: &str) -> PyResult<InstructionVariant> {
    name.parse().map_err(value_err)
}

fn status(name: &str) -> PyResult<sandbox::TestStatus> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown test status {name:?}")))
}

#[pyclass(name = "TaskRecord", frozen, from_py_object)]
#[derive(Clone)]
struct PyTaskRecord {
    inner: dataset::TaskRecord,
}

#[pymethods]
impl PyTaskRecord {
    #[new]
    #[pyo3(signature = (id, instruction, test_list, response=None))]
    fn new(id: String, instruction: String, test_list: Vec<String>, response: Option<String>) -> Self {
        Self {
            inner: dataset::TaskRecord {
                id,
                instruction,
                response,
                test_list,
            },
        }
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn instruction(&self) -> &str {
        &self.inner.instruction
    }

    #[getter]
    fn response(&self) -> Option<&str> {
        self.inner.response.as_deref()
    }

    #[getter]
    fn test_list(&self) -> Vec<String> {
        self.inner.test_list.clone()
    }

    fn function_name(&self) -> PyResult<String> {
        dataset::extract_function_name(&self.inner.test_list).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("TaskRecord(id={:?}, tests={})", self.inner.id, self.inner.test_list.len())
    }
}

#[pyclass(name = "ExecutionReport", frozen)]
struct PyExecutionReport {
    inner: sandbox::ExecutionReport,
}

#[pymethods]
impl PyExecutionReport {
    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed
    }

    #[getter]
    fn wall_time(&self) -> f64 {
        self.inner.wall_time
    }

    #[getter]
    fn statuses(&self) -> Vec<&'static str> {
        self.inner.outcomes.iter().map(|o| o.status.as_str()).collect()
    }

    #[getter]
    fn outcomes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.outcomes)
    }

    /// The first non-passing outcome as a dict, or None.
    fn first_failure<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        sandbox::first_failure(&self.inner).map(|o| to_py(py, o)).transpose()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.outcomes.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "ExecutionReport(passed={}, {}/{} tests)",
            self.inner.passed,
            self.inner.passed_count(),
            self.inner.outcomes.len()
        )
    }
}

/// Runs candidates through the runner shim in a subprocess.
#[pyclass(name = "Sandbox", frozen)]
struct PySandbox {
    inner: sandbox::Sandbox,
}

#[pymethods]
impl PySandbox {
    #[new]
    #[pyo3(signature = (shim, interpreter="python3".to_string(), kill_grace_secs=2.0))]
    fn new(shim: PathBuf, interpreter: String, kill_grace_secs: f64) -> Self {
        Self {
            inner: sandbox::Sandbox::new(SandboxConfig {
                interpreter,
                shim,
                kill_grace_secs,
            }),
        }
    }

    #[pyo3(signature = (code, test_list, timeout=30.0, task_id="adhoc".to_string()))]
    fn execute(
        &self,
        py: Python<'_>,
        code: String,
        test_list: Vec<String>,
        timeout: f64,
        task_id: String,
    ) -> PyResult<PyExecutionReport> {
        if !(timeout.is_finite() && timeout > 0.0) {
            return Err(PyValueError::new_err("timeout must be a positive number of seconds"));
        }
        let report = py
            .detach(|| self.inner.execute(&code, &test_list, &task_id, Duration::from_secs_f64(timeout)))
            .map_err(runtime_err)?;
        Ok(PyExecutionReport { inner: report })
    }

    fn probe(&self, py: Python<'_>) -> PyResult<()> {
        py.detach(|| self.inner.probe()).map_err(runtime_err)
    }
}

#[pyfunction]
#[pyo3(signature = (path, split="dataset"))]
fn load_tasks(path: PathBuf, split: &str) -> PyResult<Vec<PyTaskRecord>> {
    let tasks = dataset::load_tasks(&path, split).map_err(value_err)?;
    Ok(tasks.into_iter().map(|inner| PyTaskRecord { inner }).collect())
}

#[pyfunction]
fn extract_function_name(test_list: Vec<String>) -> PyResult<String> {
    dataset::extract_function_name(&test_list).map_err(value_err)
}

/// Returns the code of the preferred fenced block; raises ValueError when none.
#[pyfunction]
fn extract_code_block(text: &str) -> PyResult<String> {
    feedback_harness::extract_code_block(text).map_err(value_err)
}

#[pyfunction]
fn build_translation_prompt<'py>(
    py: Python<'py>,
    instruction: String,
    test_list: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let task = dataset::TaskRecord {
        id: String::new(),
        instruction,
        response: None,
        test_list,
    };
    to_py(py, &prompts::build_translation_prompt(&task))
}

#[pyfunction]
#[pyo3(signature = (instruction, test_list, function_name, variant="english"))]
fn build_generation_prompt<'py>(
    py: Python<'py>,
    instruction: &str,
    test_list: Vec<String>,
    function_name: &str,
    variant: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let messages = prompts::build_generation_prompt(instruction, &test_list, function_name, self::variant(variant)?)
        .map_err(value_err)?;
    to_py(py, &messages)
}

/// Feedback prompt for the failing test at 1-based `index` of `outcomes`.
#[pyfunction]
fn build_feedback_prompt<'py>(
    py: Python<'py>,
    base_messages: &Bound<'py, PyAny>,
    instruction: &str,
    outcomes: &Bound<'py, PyAny>,
    index: usize,
    previous_attempts: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let base: Vec<ChatMessage> = from_py(py, base_messages)?;
    let outcomes: Vec<sandbox::TestOutcome> = from_py(py, outcomes)?;
    let report = sandbox::ExecutionReport::from_outcomes(outcomes, 0.0);
    let failed = index
        .checked_sub(1)
        .and_then(|i| report.outcomes.get(i))
        .ok_or_else(|| PyValueError::new_err(format!("no outcome at index {index}")))?;
    to_py(
        py,
        &prompts::build_feedback_prompt(&base, instruction, failed, &report, &previous_attempts),
    )
}

#[pyfunction]
fn select_guidance(status: &str, error: &str) -> PyResult<&'static str> {
    Ok(prompts::select_guidance(self::status(status)?, error))
}

#[pyfunction]
fn build_attempt_analysis(previous_attempts: Vec<String>) -> String {
    prompts::build_attempt_analysis(&previous_attempts)
}

#[pyfunction]
#[pyo3(signature = (attempt, schedule=None))]
fn temperature_for_attempt(attempt: u32, schedule: Option<Vec<f64>>) -> PyResult<f64> {
    let mut cfg = RefineConfig::default();
    if let Some(schedule) = schedule {
        cfg.temperature_schedule = schedule;
    }
    cfg.validate().map_err(value_err)?;
    if attempt == 0 {
        return Err(PyValueError::new_err("attempts are numbered from 1"));
    }
    Ok(feedback_harness::temperature_for_attempt(attempt, &cfg))
}

#[pyfunction]
fn pass_at_k(n: u64, c: u64, k: u64) -> PyResult<f64> {
    metrics::pass_at_k(n, c, k).map_err(value_err)
}

/// Exact pass@k as a `fractions.Fraction`.
#[pyfunction]
fn pass_at_k_exact<'py>(py: Python<'py>, n: u64, c: u64, k: u64) -> PyResult<Bound<'py, PyAny>> {
    let r = metrics::pass_at_k_exact(n, c, k).map_err(value_err)?;
    let int = py.import("builtins")?.getattr("int")?;
    let numer = int.call1((r.numer().to_string(),))?;
    let denom = int.call1((r.denom().to_string(),))?;
    py.import("fractions")?.getattr("Fraction")?.call1((numer, denom))
}

/// Evaluation summary (strict, with-feedback, recovery) for a run directory.
#[pyfunction]
fn recovery_summary<'py>(py: Python<'py>, run_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let manifest = store::read_manifest(&run_dir).map_err(value_err)?;
    let loaded = store::load_store(&run_dir, manifest.max_attempts).map_err(runtime_err)?;
    if loaded.traces.is_empty() {
        return Err(PyValueError::new_err(format!("no traces found in {}", run_dir.display())));
    }
    let traces: Vec<_> = loaded.traces.into_values().collect();
    to_py(py, &metrics::recovery_report(&traces))
}

/// Test statuses understood by the runner protocol.
#[pyfunction]
fn test_statuses(py: Python<'_>) -> PyResult<Bound<'_, PyList>> {
    use sandbox::TestStatus::*;
    let all = [Passed, AssertionFailed, RuntimeError, Timeout, SyntaxError, HarnessError];
    PyList::new(py, all.iter().map(|s| s.as_str()))
}

#[pymodule]
fn feedback_harness_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTaskRecord>()?;
    m.add_class::<PyExecutionReport>()?;
    m.add_class::<PySandbox>()?;
    m.add_function(wrap_pyfunction!(load_tasks, m)?)?;
    m.add_function(wrap_pyfunction!(extract_function_name, m)?)?;
    m.add_function(wrap_pyfunction!(extract_code_block, m)?)?;
    m.add_function(wrap_pyfunction!(build_translation_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(build_generation_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(build_feedback_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(select_guidance, m)?)?;
    m.add_function(wrap_pyfunction!(build_attempt_analysis, m)?)?;
    m.add_function(wrap_pyfunction!(temperature_for_attempt, m)?)?;
    m.add_function(wrap_pyfunction!(pass_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(pass_at_k_exact, m)?)?;
    m.add_function(wrap_pyfunction!(recovery_summary, m)?)?;
    m.add_function(wrap_pyfunction!(test_statuses, m)?)?;
    Ok(())
}
