//! Test-driven, execution-feedback code generation harness.
//!
//! The pipeline: load assert-tested task records, optionally translate their
//! instructions with the test suite in context, prompt a chat model with a
//! few-shot generation prompt, run the extracted candidate against the asserts
//! in a subprocess, and on failure re-prompt with a classified error trace at a
//! rising sampling temperature. Traces are persisted line-by-line and scored
//! with Pass@1 / Pass@k.

pub mod codeparse;
pub mod config;
pub mod dataset;
pub mod llm;
pub mod metrics;
pub mod prompts;
pub mod refine;
pub mod report;
pub mod run;
pub mod sandbox;
pub mod store;

pub use codeparse::{extract_code_block, Candidate, ExtractError};
pub use dataset::{extract_function_name, load_tasks, load_translations, TaskRecord, TranslatedTask};
pub use llm::{ChatMessage, ChatModel, CompletionRequest, EndpointConfig, LlmError, Role, SamplingParams};
pub use metrics::{pass_at_1, pass_at_k, recovery_report, EvalSummary, Score, Scoring};
pub use prompts::{InstructionVariant, PromptTemplateSet};
pub use refine::{solve_task, temperature_for_attempt, FinalStatus, RefineConfig, RefinementTrace};
pub use sandbox::{execute, first_failure, ExecutionReport, Executor, Sandbox, SandboxConfig, TestOutcome, TestStatus};
