//! Append-only, line-delimited persistence for runs.
//!
//! A run directory holds:
//! - `run.json`: the run manifest;
//! - `traces.jsonl`: one record per attempt, a task's attempts written
//!   together once the task finishes;
//! - `aborted.jsonl`: tasks that could not be completed, with the reason.
//!
//! Resume works on task ids. A task counts as done when its latest group of
//! attempt records is complete (ends in a pass, or reaches the attempt
//! budget). Torn or corrupt lines are skipped.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::llm::ChatMessage;
use crate::prompts::InstructionVariant;
use crate::refine::{AttemptRecord, RefinementTrace};
use crate::sandbox::{ExecutionReport, TestOutcome};

pub const MANIFEST_FILE: &str = "run.json";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const ABORTED_FILE: &str = "aborted.jsonl";

/// One persisted attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptLine {
    pub task_id: String,
    pub attempt: u32,
    pub temperature: f64,
    pub prompt_digest: String,
    pub raw_output: String,
    pub code: Option<String>,
    pub outcomes: Vec<TestOutcome>,
    pub passed: bool,
    pub wall_time: f64,
    #[serde(default)]
    pub messages: Vec<ChatMessage>,
}

impl AttemptLine {
    pub fn from_record(task_id: &str, record: &AttemptRecord) -> Self {
        Self {
            task_id: task_id.to_string(),
            attempt: record.attempt,
            temperature: record.temperature,
            prompt_digest: record.prompt_digest.clone(),
            raw_output: record.raw_output.clone(),
            code: record.code.clone(),
            outcomes: record.report.outcomes.clone(),
            passed: record.report.passed,
            wall_time: record.report.wall_time,
            messages: record.messages.clone(),
        }
    }

    pub fn into_record(self) -> AttemptRecord {
        AttemptRecord {
            attempt: self.attempt,
            temperature: self.temperature,
            prompt_digest: self.prompt_digest,
            messages: self.messages,
            raw_output: self.raw_output,
            code: self.code,
            report: ExecutionReport {
                outcomes: self.outcomes,
                passed: self.passed,
                wall_time: self.wall_time,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub label: String,
    pub split: String,
    pub variant: InstructionVariant,
    pub max_attempts: u32,
    pub temperature_schedule: Vec<f64>,
    pub model: String,
    pub dataset: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub task_id: String,
    pub reason: String,
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

/// Single writer shared by all workers.
pub struct StoreWriter {
    traces: Mutex<File>,
    aborted: Mutex<File>,
}

/// Opens for append. A torn final line left by a crash is terminated so the
/// next record starts on a fresh line.
pub(crate) fn append(path: &Path) -> std::io::Result<File> {
    let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    let len = file.metadata()?.len();
    if len > 0 {
        let mut last = [0u8; 1];
        file.seek(SeekFrom::Start(len - 1))?;
        file.read_exact(&mut last)?;
        if last[0] != b'\n' {
            file.write_all(b"\n")?;
        }
    }
    Ok(file)
}

impl StoreWriter {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            traces: Mutex::new(append(&dir.join(TRACES_FILE))?),
            aborted: Mutex::new(append(&dir.join(ABORTED_FILE))?),
        })
    }

    /// Writes every attempt of a finished task in a single append.
    pub fn write_trace(&self, trace: &RefinementTrace) -> std::io::Result<()> {
        let mut buf = Vec::new();
        for record in &trace.attempts {
            serde_json::to_writer(&mut buf, &AttemptLine::from_record(&trace.task_id, record))?;
            buf.push(b'\n');
        }
        let mut file = self.traces.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&buf)?;
        file.flush()
    }

    pub fn write_abort(&self, record: &AbortRecord) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.aborted.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)?;
        file.flush()
    }
}

#[derive(Debug, Default)]
pub struct LoadedStore {
    /// Latest complete trace per task.
    pub traces: BTreeMap<String, RefinementTrace>,
    /// 1-based line numbers that failed to parse.
    pub corrupt_lines: Vec<usize>,
    /// Aborted tasks that have no complete trace.
    pub aborted: BTreeMap<String, String>,
}

impl LoadedStore {
    pub fn completed_ids(&self) -> HashSet<&str> {
        self.traces.keys().map(String::as_str).collect()
    }
}

fn group_complete(group: &[AttemptLine], max_attempts: u32) -> bool {
    let contiguous = group
        .iter()
        .enumerate()
        .all(|(i, l)| l.attempt as usize == i + 1);
    let Some(last) = group.last() else { return false };
    let early_pass = group[..group.len() - 1].iter().any(|l| l.passed);
    contiguous && !early_pass && (last.passed || last.attempt >= max_attempts)
}

/// Reads a run directory's traces and abort log.
pub fn load_store(dir: &Path, max_attempts: u32) -> std::io::Result<LoadedStore> {
    let mut store = LoadedStore::default();
    let path = dir.join(TRACES_FILE);
    if path.exists() {
        let mut open: BTreeMap<String, Vec<AttemptLine>> = BTreeMap::new();
        let finish = |task: &str, group: Vec<AttemptLine>, store: &mut LoadedStore| {
            if group_complete(&group, max_attempts) {
                let attempts = group.into_iter().map(AttemptLine::into_record).collect();
                store
                    .traces
                    .insert(task.to_string(), RefinementTrace::from_attempts(task.to_string(), attempts));
            }
        };
        for (idx, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let Ok(record) = serde_json::from_str::<AttemptLine>(&line) else {
                tracing::warn!(line = idx + 1, path = %path.display(), "skipping corrupt trace line");
                store.corrupt_lines.push(idx + 1);
                continue;
            };
            let task = record.task_id.clone();
            if record.attempt == 1 {
                if let Some(prev) = open.remove(&task) {
                    finish(&task, prev, &mut store);
                }
            }
            open.entry(task).or_default().push(record);
        }
        for (task, group) in open {
            finish(&task, group, &mut store);
        }
    }
    let aborted_path = dir.join(ABORTED_FILE);
    if aborted_path.exists() {
        for (idx, line) in BufReader::new(File::open(&aborted_path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<AbortRecord>(&line) {
                Ok(rec) if !store.traces.contains_key(&rec.task_id) => {
                    store.aborted.insert(rec.task_id, rec.reason);
                }
                Ok(_) => {}
                Err(_) => {
                    tracing::warn!(line = idx + 1, path = %aborted_path.display(), "skipping corrupt abort line");
                }
            }
        }
    }
    Ok(store)
}
