#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use feedback_harness::dataset::{write_tasks, TaskRecord};
use feedback_harness::llm::{MockScript, ScriptEntry};
use feedback_harness::sandbox::{Sandbox, SandboxConfig};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

pub fn stub_sandbox() -> Sandbox {
    Sandbox::new(SandboxConfig {
        interpreter: "python3".into(),
        shim: fixture("fixtures/stub_shim.py"),
        kill_grace_secs: 2.0,
    })
}

pub fn exec_sandbox() -> Sandbox {
    Sandbox::new(SandboxConfig {
        interpreter: "python3".into(),
        shim: fixture("fixtures/exec_shim.py"),
        kill_grace_secs: 2.0,
    })
}

pub fn fenced(body: &str) -> String {
    format!("Here is the solution.\n```python\n{body}\n```\n")
}

/// Candidate text for `name` whose stub outcome is chosen by `directives`.
pub fn candidate(name: &str, directives: &[&str]) -> ScriptEntry {
    let mut body = format!("def {name}(x):\n    return x");
    for d in directives {
        body.push_str("\n#!stub ");
        body.push_str(d);
    }
    ScriptEntry::Text(fenced(&body))
}

pub fn task(id: &str, name: &str, n_tests: usize) -> TaskRecord {
    TaskRecord {
        id: id.into(),
        instruction: format!("Write a function {name} that returns its input."),
        response: None,
        test_list: (1..=n_tests).map(|i| format!("assert {name}({i}) == {i}")).collect(),
    }
}

pub struct MockCorpus {
    pub tasks: Vec<TaskRecord>,
    pub script: MockScript,
}

impl MockCorpus {
    pub fn write(&self, dir: &Path) -> (PathBuf, PathBuf) {
        fs::create_dir_all(dir).unwrap();
        let data = dir.join("tasks.jsonl");
        let mut buf = Vec::new();
        write_tasks(&mut buf, &self.tasks).unwrap();
        fs::write(&data, buf).unwrap();
        let script = dir.join("mock.json");
        fs::write(&script, serde_json::to_string_pretty(&self.script).unwrap()).unwrap();
        (data, script)
    }
}

/// 50 tasks: 45 pass at attempt 1, one recovers at attempt 2, one at
/// attempt 3, three never pass.
pub fn fifty_task_corpus() -> MockCorpus {
    let mut script = MockScript::default();
    let mut tasks = Vec::new();
    for i in 1..=50 {
        let id = format!("task_{i:02}");
        let name = format!("f_{i:02}");
        tasks.push(task(&id, &name, 3));
        let fail_assert = candidate(&name, &["status 2 ASSERTION_FAILED AssertionError"]);
        let entries = match i {
            46 => vec![fail_assert, candidate(&name, &[])],
            47 => vec![
                fail_assert,
                candidate(&name, &["status 1 RUNTIME_ERROR IndexError: list index out of range"]),
                candidate(&name, &[]),
            ],
            48 => vec![fail_assert],
            49 => vec![candidate(&name, &["status 3 RUNTIME_ERROR KeyError: 'k'"])],
            50 => vec![candidate(&name, &["all TIMEOUT Timeout: execution exceeded 30 seconds"])],
            _ => vec![candidate(&name, &[])],
        };
        script.tasks.insert(id, entries);
    }
    MockCorpus { tasks, script }
}

/// Ten tasks, nine solvable (one of them after feedback), one never.
pub fn ten_task_corpus() -> MockCorpus {
    let mut script = MockScript::default();
    let mut tasks = Vec::new();
    for i in 1..=10 {
        let id = format!("t{i:02}");
        let name = format!("g_{i:02}");
        tasks.push(task(&id, &name, 2));
        let entries = match i {
            3 => vec![candidate(&name, &["status 1 ASSERTION_FAILED AssertionError"]), candidate(&name, &[])],
            7 => vec![ScriptEntry::Text("I am not sure how to solve this.".into())],
            _ => vec![candidate(&name, &[])],
        };
        script.tasks.insert(id, entries);
    }
    MockCorpus { tasks, script }
}

/// Evaluation config over the stub shim, reading instructions verbatim.
pub fn run_config(out: &Path, data: &Path, workers: usize) -> feedback_harness::config::RunConfig {
    use feedback_harness::config::RunConfig;
    use feedback_harness::prompts::InstructionVariant;
    let mut cfg = RunConfig {
        dataset: data.to_path_buf(),
        split: "mock".into(),
        output_dir: out.to_path_buf(),
        label: "mock".into(),
        workers,
        sandbox: SandboxConfig {
            interpreter: "python3".into(),
            shim: fixture("fixtures/stub_shim.py"),
            kill_grace_secs: 2.0,
        },
        ..RunConfig::default()
    };
    cfg.refine.instruction_variant = InstructionVariant::Bangla;
    cfg.refine.timeout_secs = 10.0;
    cfg
}

/// Traces with timing removed, for comparing runs.
pub fn normalized(
    traces: &std::collections::BTreeMap<String, feedback_harness::refine::RefinementTrace>,
) -> Vec<feedback_harness::refine::RefinementTrace> {
    traces
        .values()
        .cloned()
        .map(|mut t| {
            for a in &mut t.attempts {
                a.report.wall_time = 0.0;
            }
            t
        })
        .collect()
}

/// Wraps a model and keeps every request it sees.
pub struct RecordingModel<M> {
    pub inner: M,
    pub requests: std::sync::Mutex<Vec<feedback_harness::llm::CompletionRequest>>,
}

impl<M> RecordingModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            requests: std::sync::Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<feedback_harness::llm::CompletionRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl<M: feedback_harness::llm::ChatModel> feedback_harness::llm::ChatModel for RecordingModel<M> {
    fn complete(
        &self,
        request: &feedback_harness::llm::CompletionRequest,
    ) -> Result<String, feedback_harness::llm::LlmError> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.complete(request)
    }

    fn label(&self) -> String {
        self.inner.label()
    }
}
