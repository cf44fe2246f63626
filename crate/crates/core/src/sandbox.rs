//! Runs a candidate against its assert list in a fresh interpreter subprocess.
//!
//! The subprocess is `<interpreter> <shim> <request.json>` started in its own
//! temporary working directory with stdin closed. The shim answers on stdout
//! with one JSON object per test:
//!
//! ```text
//! {"index": 1, "status": "PASSED", "error": "", "test_case": "assert f(1) == 1"}
//! ```
//!
//! The whole suite shares one wall-clock budget. When it runs out the process
//! group is killed and every test without a result line is marked `TIMEOUT`.
//! Isolation is best-effort: no network or filesystem lockdown is applied.

use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const POLL_INTERVAL: Duration = Duration::from_millis(5);
const STDERR_LIMIT: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TestStatus {
    Passed,
    AssertionFailed,
    RuntimeError,
    Timeout,
    SyntaxError,
    HarnessError,
}

impl TestStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Passed => "PASSED",
            Self::AssertionFailed => "ASSERTION_FAILED",
            Self::RuntimeError => "RUNTIME_ERROR",
            Self::Timeout => "TIMEOUT",
            Self::SyntaxError => "SYNTAX_ERROR",
            Self::HarnessError => "HARNESS_ERROR",
        }
    }

    pub fn is_failure(self) -> bool {
        self != Self::Passed
    }
}

impl fmt::Display for TestStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    /// 1-based position in the submitted test list.
    pub index: usize,
    pub status: TestStatus,
    pub error: String,
    pub test_case: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub outcomes: Vec<TestOutcome>,
    pub passed: bool,
    /// Seconds of wall clock spent on the subprocess.
    pub wall_time: f64,
}

impl ExecutionReport {
    pub fn from_outcomes(outcomes: Vec<TestOutcome>, wall_time: f64) -> Self {
        let passed = !outcomes.is_empty() && outcomes.iter().all(|o| o.status == TestStatus::Passed);
        Self {
            outcomes,
            passed,
            wall_time,
        }
    }

    /// Every test gets the same failing status and message.
    pub fn uniform(test_list: &[String], status: TestStatus, error: &str, wall_time: f64) -> Self {
        let outcomes = test_list
            .iter()
            .enumerate()
            .map(|(i, t)| TestOutcome {
                index: i + 1,
                status,
                error: error.to_string(),
                test_case: t.clone(),
            })
            .collect();
        Self::from_outcomes(outcomes, wall_time)
    }

    pub fn passed_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.status == TestStatus::Passed).count()
    }
}

/// Lowest-index failing outcome, if any.
pub fn first_failure(report: &ExecutionReport) -> Option<&TestOutcome> {
    report
        .outcomes
        .iter()
        .filter(|o| o.status.is_failure())
        .min_by_key(|o| o.index)
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("failed to launch {interpreter}: {detail}")]
    SpawnFailure { interpreter: String, detail: String },
    #[error("runner protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("invalid execution request: {0}")]
    InvalidInput(String),
    #[error("runner handshake failed: {0}")]
    Handshake(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    pub interpreter: String,
    pub shim: PathBuf,
    /// Seconds allowed for the process to be reaped after a timeout kill.
    pub kill_grace_secs: f64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: "python3".into(),
            shim: PathBuf::from("runner.py"),
            kill_grace_secs: 2.0,
        }
    }
}

/// Anything that can score a candidate against tests. The subprocess
/// [`Sandbox`] is the production implementation.
pub trait Executor: Send + Sync {
    fn run(
        &self,
        task_id: &str,
        code: &str,
        test_list: &[String],
        timeout: Duration,
    ) -> Result<ExecutionReport, SandboxError>;

    /// Startup check run once before a corpus is evaluated.
    fn probe(&self) -> Result<(), SandboxError> {
        Ok(())
    }
}

#[derive(Serialize)]
struct Request<'a> {
    code: &'a str,
    test_list: &'a [String],
    task_id: &'a str,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultLine {
    index: usize,
    status: TestStatus,
    error: String,
    test_case: String,
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    config: SandboxConfig,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    /// Runs a trivial suite and checks the shim answers with one PASSED line.
    pub fn probe(&self) -> Result<(), SandboxError> {
        let tests = vec!["assert True".to_string()];
        let report = self.execute("", &tests, "__probe__", Duration::from_secs(10))?;
        if report.passed {
            Ok(())
        } else {
            let detail = first_failure(&report)
                .map(|o| format!("{}: {}", o.status, o.error))
                .unwrap_or_default();
            Err(SandboxError::Handshake(detail))
        }
    }

    pub fn execute(
        &self,
        code: &str,
        test_list: &[String],
        task_id: &str,
        timeout: Duration,
    ) -> Result<ExecutionReport, SandboxError> {
        if test_list.is_empty() {
            return Err(SandboxError::InvalidInput("test_list is empty".into()));
        }
        if timeout.is_zero() {
            return Err(SandboxError::InvalidInput("timeout must be positive".into()));
        }
        let spawn_err = |detail: String| SandboxError::SpawnFailure {
            interpreter: self.config.interpreter.clone(),
            detail,
        };
        let workdir = tempfile::tempdir().map_err(|e| spawn_err(e.to_string()))?;
        let request_path = workdir.path().join("request.json");
        let request = serde_json::to_vec(&Request {
            code,
            test_list,
            task_id,
        })
        .map_err(|e| spawn_err(e.to_string()))?;
        std::fs::write(&request_path, request).map_err(|e| spawn_err(e.to_string()))?;
        let shim = std::path::absolute(&self.config.shim).unwrap_or_else(|_| self.config.shim.clone());

        let mut command = Command::new(&self.config.interpreter);
        command
            .arg(&shim)
            .arg(&request_path)
            .current_dir(workdir.path())
            .env("PYTHONIOENCODING", "utf-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            command.process_group(0);
        }

        let start = Instant::now();
        let mut child = command.spawn().map_err(|e| spawn_err(e.to_string()))?;
        let lines = spawn_line_reader(&mut child);
        let stderr = spawn_stderr_reader(&mut child);

        let (status, timed_out) = wait_with_deadline(&mut child, start + timeout)
            .map_err(|e| spawn_err(e.to_string()))?;

        let grace = Duration::from_secs_f64(self.config.kill_grace_secs.max(0.0));
        let reap_deadline = Instant::now() + grace;
        let mut raw_lines = Vec::new();
        loop {
            let left = reap_deadline.saturating_duration_since(Instant::now());
            match lines.recv_timeout(left) {
                Ok(line) => raw_lines.push(line),
                Err(_) => break,
            }
        }
        let stderr_text = stderr
            .recv_timeout(reap_deadline.saturating_duration_since(Instant::now()))
            .unwrap_or_default();
        let wall_time = start.elapsed().as_secs_f64();
        drop(workdir);

        let parsed = parse_result_lines(&raw_lines, test_list)?;
        let mut outcomes = parsed;
        let n = test_list.len();
        if timed_out {
            let message = format!("Timeout: execution exceeded {} seconds", fmt_secs(timeout));
            fill_remaining(&mut outcomes, test_list, TestStatus::Timeout, &message);
        } else if !status.is_some_and(|s| s.success()) {
            let message = format!(
                "runner exited with {}: {}",
                status.map_or_else(|| "unknown status".to_string(), |s| s.to_string()),
                excerpt(stderr_text.trim(), 2000)
            );
            fill_remaining(&mut outcomes, test_list, TestStatus::HarnessError, message.trim_end());
        } else if outcomes.len() != n {
            return Err(SandboxError::ProtocolViolation(format!(
                "runner exited cleanly after {} of {n} result lines",
                outcomes.len()
            )));
        }
        Ok(ExecutionReport::from_outcomes(outcomes, wall_time))
    }
}

impl Executor for Sandbox {
    fn run(
        &self,
        task_id: &str,
        code: &str,
        test_list: &[String],
        timeout: Duration,
    ) -> Result<ExecutionReport, SandboxError> {
        self.execute(code, test_list, task_id, timeout)
    }

    fn probe(&self) -> Result<(), SandboxError> {
        Sandbox::probe(self)
    }
}

/// One-shot execution with a given configuration.
pub fn execute(
    config: &SandboxConfig,
    code: &str,
    test_list: &[String],
    timeout: Duration,
) -> Result<ExecutionReport, SandboxError> {
    Sandbox::new(config.clone()).execute(code, test_list, "adhoc", timeout)
}

fn spawn_line_reader(child: &mut Child) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    if let Some(stdout) = child.stdout.take() {
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
    }
    rx
}

fn spawn_stderr_reader(child: &mut Child) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    if let Some(stderr) = child.stderr.take() {
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.take(STDERR_LIMIT as u64).read_to_end(&mut buf);
            let _ = tx.send(String::from_utf8_lossy(&buf).into_owned());
        });
    }
    rx
}

fn wait_with_deadline(
    child: &mut Child,
    deadline: Instant,
) -> std::io::Result<(Option<ExitStatus>, bool)> {
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((Some(status), false));
        }
        if Instant::now() >= deadline {
            kill_tree(child);
            let status = child.wait().ok();
            return Ok((status, true));
        }
        thread::sleep(POLL_INTERVAL);
    }
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group; take down anything it forked.
        if let Ok(pid) = libc::pid_t::try_from(child.id()) {
            unsafe {
                libc::killpg(pid, libc::SIGKILL);
            }
        }
    }
    let _ = child.kill();
}

fn parse_result_lines(
    raw_lines: &[String],
    test_list: &[String],
) -> Result<Vec<TestOutcome>, SandboxError> {
    let mut outcomes = Vec::with_capacity(test_list.len());
    for raw in raw_lines {
        if raw.trim().is_empty() {
            continue;
        }
        let line: ResultLine = serde_json::from_str(raw).map_err(|e| {
            SandboxError::ProtocolViolation(format!("unparseable line {:?}: {e}", excerpt(raw, 200)))
        })?;
        let expected = outcomes.len() + 1;
        if line.index != expected || expected > test_list.len() {
            return Err(SandboxError::ProtocolViolation(format!(
                "expected result for test {expected} of {}, got index {}",
                test_list.len(),
                line.index
            )));
        }
        if (line.status == TestStatus::Passed) != line.error.is_empty() {
            return Err(SandboxError::ProtocolViolation(format!(
                "test {}: status {} inconsistent with error text {:?}",
                line.index,
                line.status,
                excerpt(&line.error, 200)
            )));
        }
        if line.test_case != test_list[line.index - 1] {
            return Err(SandboxError::ProtocolViolation(format!(
                "test {}: echoed test case does not match the request",
                line.index
            )));
        }
        outcomes.push(TestOutcome {
            index: line.index,
            status: line.status,
            error: line.error,
            test_case: line.test_case,
        });
    }
    Ok(outcomes)
}

fn fill_remaining(outcomes: &mut Vec<TestOutcome>, test_list: &[String], status: TestStatus, error: &str) {
    let error = if error.is_empty() { status.as_str() } else { error };
    let start = outcomes.len();
    for (i, test) in test_list.iter().enumerate().skip(start) {
        outcomes.push(TestOutcome {
            index: i + 1,
            status,
            error: error.to_string(),
            test_case: test.clone(),
        });
    }
}

fn fmt_secs(d: Duration) -> String {
    let secs = d.as_secs_f64();
    if secs.fract() == 0.0 {
        format!("{}", secs as u64)
    } else {
        format!("{secs:.3}")
    }
}

fn excerpt(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((i, _)) => text[..i].to_string(),
        None => text.to_string(),
    }
}
