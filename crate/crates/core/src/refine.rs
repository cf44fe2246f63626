//! Generate, test, and retry with execution feedback at rising temperature.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codeparse::{extract_code_block, Candidate};
use crate::dataset::{extract_function_name, DatasetError, TaskRecord};
use crate::llm::{ChatMessage, ChatModel, CompletionRequest, LlmError, Purpose, RequestTag, SamplingParams};
use crate::prompts::{prompt_digest, InstructionVariant, PromptError, PromptTemplateSet};
use crate::sandbox::{first_failure, ExecutionReport, Executor, SandboxError, TestStatus};

pub const NO_CODE_BLOCK_ERROR: &str =
    "NoCodeBlock: the response contained no fenced code block; wrap your code in ```python ``` blocks";
pub const EMPTY_COMPLETION_ERROR: &str =
    "EmptyCompletion: the model returned no content; wrap your code in ```python ``` blocks";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub max_attempts: u32,
    pub temperature_schedule: Vec<f64>,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub instruction_variant: InstructionVariant,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            temperature_schedule: vec![0.1, 0.3, 0.5],
            max_tokens: 768,
            timeout_secs: 30.0,
            instruction_variant: InstructionVariant::English,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: &str| Err(RefineError::Config(m.to_string()));
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        if self.temperature_schedule.is_empty() {
            return bad("temperature_schedule is empty");
        }
        if self.temperature_schedule.windows(2).any(|w| w[1] < w[0]) {
            return bad("temperature_schedule must be non-decreasing");
        }
        if self.temperature_schedule.iter().any(|t| !(0.0..=2.0).contains(t)) {
            return bad("temperatures must lie in [0, 2]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1");
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return bad("timeout_secs must be positive");
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Sampling temperature for 1-based attempt `attempt`; attempts past the end
/// of the schedule reuse its last value.
pub fn temperature_for_attempt(attempt: u32, cfg: &RefineConfig) -> f64 {
    let schedule = &cfg.temperature_schedule;
    let idx = (attempt.max(1) as usize).min(schedule.len()) - 1;
    schedule[idx]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FinalStatus {
    Solved,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub temperature: f64,
    pub prompt_digest: String,
    pub messages: Vec<ChatMessage>,
    pub raw_output: String,
    /// Extracted code; `None` when the completion had no code block.
    pub code: Option<String>,
    pub report: ExecutionReport,
}

impl AttemptRecord {
    /// Text fed back as this attempt's history entry.
    pub fn attempt_text(&self) -> &str {
        self.code.as_deref().unwrap_or(&self.raw_output)
    }

    pub fn candidate(&self, task_id: &str) -> Option<Candidate> {
        self.code.as_ref().map(|code| Candidate {
            task_id: task_id.to_string(),
            attempt_index: self.attempt,
            raw_output: self.raw_output.clone(),
            code: code.clone(),
            temperature: self.temperature,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub task_id: String,
    pub attempts: Vec<AttemptRecord>,
    pub final_status: FinalStatus,
    pub solving_attempt: Option<u32>,
    /// Attempt with the most passing tests, earliest on ties.
    pub best_attempt: u32,
}

impl RefinementTrace {
    /// Rebuilds the derived fields from an attempt list.
    pub fn from_attempts(task_id: String, attempts: Vec<AttemptRecord>) -> Self {
        let solving_attempt = attempts.iter().find(|a| a.report.passed).map(|a| a.attempt);
        let mut best = attempts.first().map_or((1, 0), |a| (a.attempt, a.report.passed_count()));
        for a in &attempts {
            let passed = a.report.passed_count();
            if passed > best.1 {
                best = (a.attempt, passed);
            }
        }
        Self {
            task_id,
            final_status: if solving_attempt.is_some() {
                FinalStatus::Solved
            } else {
                FinalStatus::Exhausted
            },
            solving_attempt,
            best_attempt: best.0,
            attempts,
        }
    }

    pub fn first_attempt_passed(&self) -> bool {
        self.attempts.first().is_some_and(|a| a.report.passed)
    }

    pub fn best(&self) -> Option<&AttemptRecord> {
        self.attempts.iter().find(|a| a.attempt == self.best_attempt)
    }

    /// The submitted solution: the solving attempt, else the best attempt.
    pub fn final_code(&self) -> Option<&str> {
        let idx = self.solving_attempt.unwrap_or(self.best_attempt);
        self.attempts
            .iter()
            .find(|a| a.attempt == idx)
            .and_then(|a| a.code.as_deref())
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.attempts.iter().map(|a| a.temperature).collect()
    }
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("model call failed: {0}")]
    Model(#[from] LlmError),
    #[error("sandbox failed: {0}")]
    Sandbox(#[from] SandboxError),
    #[error("prompt construction failed: {0}")]
    Prompt(#[from] PromptError),
    #[error("cannot determine the function under test: {0}")]
    Dataset(#[from] DatasetError),
    #[error("invalid refine config: {0}")]
    Config(String),
}

/// Everything a refinement run talks to.
pub struct RefineDeps<'a> {
    pub model: &'a dyn ChatModel,
    pub executor: &'a dyn Executor,
    pub templates: &'a PromptTemplateSet,
}

/// Runs the feedback loop for one task.
///
/// Attempt 1 sends the few-shot generation prompt. Each later attempt sends
/// the feedback prompt built from the previous attempt's first failure and
/// every earlier attempt's code. Stops at the first fully passing report or
/// after `max_attempts`.
pub fn solve_task(
    task: &TaskRecord,
    instruction: &str,
    cfg: &RefineConfig,
    deps: &RefineDeps<'_>,
) -> Result<RefinementTrace, RefineError> {
    cfg.validate()?;
    let function_name = extract_function_name(&task.test_list)?;
    let base = deps.templates.build_generation_prompt(
        instruction,
        &task.test_list,
        &function_name,
        cfg.instruction_variant,
    )?;

    let mut attempts: Vec<AttemptRecord> = Vec::new();
    for attempt in 1..=cfg.max_attempts {
        let temperature = temperature_for_attempt(attempt, cfg);
        let messages = match attempts.last() {
            None => base.clone(),
            Some(prev) => {
                let history: Vec<&str> = attempts.iter().map(AttemptRecord::attempt_text).collect();
                let failed = first_failure(&prev.report)
                    .expect("loop continues only after a failing report");
                deps.templates
                    .build_feedback_prompt(&base, instruction, failed, &prev.report, &history)
            }
        };
        let request = CompletionRequest {
            messages,
            params: SamplingParams::new(temperature, cfg.max_tokens)?,
            tag: RequestTag {
                task_id: task.id.clone(),
                attempt,
                purpose: Purpose::Generate,
            },
        };
        let (raw_output, code, report) = match deps.model.complete(&request) {
            Ok(raw) => match extract_code_block(&raw) {
                Ok(code) => {
                    let report = deps.executor.run(&task.id, &code, &task.test_list, cfg.timeout())?;
                    (raw, Some(code), report)
                }
                Err(_) => {
                    let report =
                        ExecutionReport::uniform(&task.test_list, TestStatus::HarnessError, NO_CODE_BLOCK_ERROR, 0.0);
                    (raw, None, report)
                }
            },
            Err(LlmError::EmptyCompletion) => {
                let report =
                    ExecutionReport::uniform(&task.test_list, TestStatus::HarnessError, EMPTY_COMPLETION_ERROR, 0.0);
                (String::new(), None, report)
            }
            Err(e) => return Err(e.into()),
        };
        tracing::debug!(task = %task.id, attempt, temperature, passed = report.passed, "attempt finished");
        let passed = report.passed;
        attempts.push(AttemptRecord {
            attempt,
            temperature,
            prompt_digest: prompt_digest(&request.messages),
            messages: request.messages,
            raw_output,
            code,
            report,
        });
        if passed {
            break;
        }
    }
    Ok(RefinementTrace::from_attempts(task.id.clone(), attempts))
}
