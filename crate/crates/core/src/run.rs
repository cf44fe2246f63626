//! Corpus-level commands: translate, evaluate, report.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{load_tasks, load_translations, translation_index, TaskRecord, TranslatedRecord};
use crate::llm::{ChatMessage, ChatModel, CompletionRequest, Purpose, RequestTag, SamplingParams};
use crate::metrics::{recovery_report, EvalSummary};
use crate::prompts::{prompt_digest, InstructionVariant, PromptTemplateSet};
use crate::refine::{solve_task, RefineDeps, RefinementTrace};
use crate::report::{render_report, RunView};
use crate::sandbox::Executor;
use crate::store::{self, load_store, AbortRecord, RunManifest, StoreWriter};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRANSLATE_FAILURES_FILE: &str = "translate_failures.jsonl";
pub const TRANSLATE_LOG_FILE: &str = "translate_log.jsonl";

/// Cooperative stop flag. Workers finish their current task and exit.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Runs `work` over `items` on `workers` threads, stopping early on cancel.
fn run_pool<T: Sync>(items: &[T], workers: usize, cancel: &CancelToken, work: impl Fn(&T) + Sync) {
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            scope.spawn(|| loop {
                if cancel.is_cancelled() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                work(item);
            });
        }
    });
}

fn open_log(path: &Path, truncate: bool) -> std::io::Result<File> {
    if truncate {
        File::create(path)
    } else {
        store::append(path)
    }
}

fn append_json<T: Serialize>(file: &Mutex<File>, value: &T) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    let mut file = file.lock().unwrap_or_else(|e| e.into_inner());
    file.write_all(&line)?;
    file.flush()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TranslateFailure {
    task_id: String,
    error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TranslateCall {
    task_id: String,
    prompt_digest: String,
    messages: Vec<ChatMessage>,
    completion: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslateOutcome {
    pub output: PathBuf,
    pub translated: usize,
    pub skipped: usize,
    pub failed: Vec<String>,
}

/// Ids already present in a translated corpus; unreadable lines are ignored.
fn translated_ids(path: &Path) -> anyhow::Result<HashSet<String>> {
    let mut ids = HashSet::new();
    if !path.exists() {
        return Ok(ids);
    }
    for line in BufReader::new(File::open(path)?).lines() {
        if let Ok(record) = serde_json::from_str::<TranslatedRecord>(&line?) {
            ids.insert(record.task.id);
        }
    }
    Ok(ids)
}

/// Translates every task instruction with the test suite in context.
pub fn cmd_translate(
    cfg: &RunConfig,
    model: &dyn ChatModel,
    templates: &PromptTemplateSet,
    cancel: &CancelToken,
) -> anyhow::Result<TranslateOutcome> {
    cfg.validate()?;
    let tasks = load_tasks(&cfg.dataset, &cfg.split)?;
    let output = cfg.translation_path();
    if let Some(parent) = output.parent() {
        fs::create_dir_all(parent)?;
    }
    let done = if cfg.resume { translated_ids(&output)? } else { HashSet::new() };
    let pending: Vec<&TaskRecord> = tasks.iter().filter(|t| !done.contains(&t.id)).collect();
    let skipped = tasks.len() - pending.len();

    let out = Mutex::new(open_log(&output, !cfg.resume)?);
    let failures = Mutex::new(open_log(&cfg.output_dir.join(TRANSLATE_FAILURES_FILE), !cfg.resume)?);
    let calls = Mutex::new(open_log(&cfg.output_dir.join(TRANSLATE_LOG_FILE), !cfg.resume)?);
    let translated = AtomicUsize::new(0);
    let failed = Mutex::new(Vec::new());
    let params = SamplingParams::new(cfg.refine.temperature_schedule[0], cfg.refine.max_tokens)?;

    run_pool(&pending, cfg.workers, cancel, |task| {
        let messages = templates.build_translation_prompt(task);
        let request = CompletionRequest {
            messages,
            params,
            tag: RequestTag {
                task_id: task.id.clone(),
                attempt: 1,
                purpose: Purpose::Translate,
            },
        };
        let result = model.complete(&request).and_then(|text| {
            let text = text.trim().to_string();
            if text.is_empty() {
                Err(crate::llm::LlmError::EmptyCompletion)
            } else {
                Ok(text)
            }
        });
        let english = match result {
            Ok(english) => english,
            Err(e) => {
                tracing::error!(task = %task.id, error = %e, "translation failed");
                failed.lock().unwrap_or_else(|e| e.into_inner()).push(task.id.clone());
                let failure = TranslateFailure {
                    task_id: task.id.clone(),
                    error: e.to_string(),
                };
                if let Err(e) = append_json(&failures, &failure) {
                    tracing::error!(task = %task.id, error = %e, "cannot record translation failure");
                }
                return;
            }
        };
        let call = TranslateCall {
            task_id: task.id.clone(),
            prompt_digest: prompt_digest(&request.messages),
            messages: request.messages.clone(),
            completion: english.clone(),
        };
        let record = TranslatedRecord::new((*task).clone(), english, model.label());
        match append_json(&calls, &call).and_then(|_| append_json(&out, &record)) {
            Ok(()) => {
                translated.fetch_add(1, Ordering::SeqCst);
            }
            Err(e) => {
                tracing::error!(task = %task.id, error = %e, "cannot persist translation");
                failed.lock().unwrap_or_else(|e| e.into_inner()).push(task.id.clone());
            }
        }
    });

    let mut failed = failed.into_inner().unwrap_or_else(|e| e.into_inner());
    failed.sort();
    Ok(TranslateOutcome {
        output,
        translated: translated.into_inner(),
        skipped,
        failed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOutcome {
    pub summary: EvalSummary,
    /// Aborted task ids with their reason.
    pub aborted: BTreeMap<String, String>,
    /// True when every corpus task has a complete trace.
    pub complete: bool,
}

/// Picks the instruction text for every task according to the variant.
fn instructions_for(cfg: &RunConfig, tasks: &[TaskRecord]) -> anyhow::Result<Vec<String>> {
    match cfg.refine.instruction_variant {
        InstructionVariant::Bangla => Ok(tasks.iter().map(|t| t.instruction.clone()).collect()),
        InstructionVariant::English => {
            let path = cfg.translation_path();
            let translations = load_translations(&path, tasks)
                .with_context(|| format!("english variant needs translations at {}", path.display()))?;
            let index = translation_index(&translations);
            tasks
                .iter()
                .map(|t| {
                    index
                        .get(t.id.as_str())
                        .map(|tr| tr.english_instruction.clone())
                        .with_context(|| format!("no translation for task {}", t.id))
                })
                .collect()
        }
    }
}

/// Runs the feedback loop over the corpus and writes traces and a summary.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    model: &dyn ChatModel,
    executor: &dyn Executor,
    templates: &PromptTemplateSet,
    cancel: &CancelToken,
) -> anyhow::Result<EvaluateOutcome> {
    cfg.validate()?;
    let tasks = load_tasks(&cfg.dataset, &cfg.split)?;
    let instructions = instructions_for(cfg, &tasks)?;
    let dir = &cfg.output_dir;
    let manifest = RunManifest {
        label: cfg.label.clone(),
        split: cfg.split.clone(),
        variant: cfg.refine.instruction_variant,
        max_attempts: cfg.refine.max_attempts,
        temperature_schedule: cfg.refine.temperature_schedule.clone(),
        model: model.label(),
        dataset: cfg.dataset.clone(),
    };

    if cfg.resume {
        if let Ok(previous) = store::read_manifest(dir) {
            if previous.max_attempts != manifest.max_attempts
                || previous.temperature_schedule != manifest.temperature_schedule
                || previous.variant != manifest.variant
            {
                bail!("cannot resume {}: refine settings differ from the stored run", dir.display());
            }
        }
    } else {
        for name in [store::TRACES_FILE, store::ABORTED_FILE, SUMMARY_FILE] {
            let path = dir.join(name);
            if path.exists() {
                fs::remove_file(&path)?;
            }
        }
    }
    store::write_manifest(dir, &manifest)?;

    let done: HashSet<String> = if cfg.resume {
        load_store(dir, cfg.refine.max_attempts)?.traces.into_keys().collect()
    } else {
        HashSet::new()
    };
    let pending: Vec<usize> = (0..tasks.len()).filter(|&i| !done.contains(&tasks[i].id)).collect();
    tracing::info!(total = tasks.len(), pending = pending.len(), "evaluating");

    if !pending.is_empty() {
        executor.probe().context("sandbox startup probe failed")?;
    }

    let writer = StoreWriter::open(dir)?;
    let deps = RefineDeps {
        model,
        executor,
        templates,
    };
    run_pool(&pending, cfg.workers, cancel, |&i| {
        let task = &tasks[i];
        let result = solve_task(task, &instructions[i], &cfg.refine, &deps);
        let persisted = match result {
            Ok(trace) => writer.write_trace(&trace),
            Err(e) => {
                tracing::error!(task = %task.id, error = %e, "task aborted");
                writer.write_abort(&AbortRecord {
                    task_id: task.id.clone(),
                    reason: e.to_string(),
                })
            }
        };
        if let Err(e) = persisted {
            tracing::error!(task = %task.id, error = %e, "cannot persist trace");
        }
    });
    drop(writer);

    let loaded = load_store(dir, cfg.refine.max_attempts)?;
    let traces = ordered_traces(&tasks, &loaded.traces);
    let summary = recovery_report(&traces);
    let complete = traces.len() == tasks.len();
    let aborted = loaded.aborted;
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(dir.join(SUMMARY_FILE), text + "\n")?;
    Ok(EvaluateOutcome {
        summary,
        aborted,
        complete,
    })
}

/// Traces in corpus order, restricted to tasks of the corpus.
pub fn ordered_traces(
    tasks: &[TaskRecord],
    traces: &BTreeMap<String, RefinementTrace>,
) -> Vec<RefinementTrace> {
    tasks.iter().filter_map(|t| traces.get(&t.id).cloned()).collect()
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub text: String,
    /// Corrupt lines were skipped while reading.
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no traces found in {0}")]
    EmptyStore(String),
}

/// Renders tables for one or more run directories.
pub fn cmd_report(dirs: &[PathBuf]) -> anyhow::Result<ReportOutput> {
    let mut views = Vec::new();
    let mut warnings = Vec::new();
    for dir in dirs {
        let manifest = store::read_manifest(dir)?;
        let loaded = load_store(dir, manifest.max_attempts)?;
        for line in &loaded.corrupt_lines {
            warnings.push(format!("{}: skipped corrupt trace line {line}", dir.display()));
        }
        views.push(RunView {
            manifest,
            traces: loaded.traces.into_values().collect(),
            aborted: loaded.aborted,
        });
    }
    if views.iter().all(|v| v.traces.is_empty()) {
        let names: Vec<String> = dirs.iter().map(|d| d.display().to_string()).collect();
        return Err(ReportError::EmptyStore(names.join(", ")).into());
    }
    Ok(ReportOutput {
        text: render_report(&views),
        warnings,
    })
}
