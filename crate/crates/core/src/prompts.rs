//! Prompt families: translation, few-shot generation and feedback/retry.
//!
//! Template text lives in `templates/` as one UTF-8 file per template, with
//! `{name}` placeholders. A template directory on disk can replace the
//! built-in set; it must carry the same file names.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::TaskRecord;
use crate::llm::{ChatMessage, Role};
use crate::sandbox::{ExecutionReport, TestOutcome, TestStatus};

/// Characters of each attempt compared when counting distinct approaches.
pub const APPROACH_PREFIX_CHARS: usize = 50;

/// Every placeholder name any template may use.
pub const KNOWN_PLACEHOLDERS: &[&str] = &[
    "instruction",
    "test_list",
    "function_name",
    "status",
    "error",
    "test_case",
    "index",
    "total",
    "specific_guidance",
    "attempt_analysis",
    "attempt_count",
    "first_length",
    "latest_length",
    "approach_count",
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown instruction variant {0:?} (expected `bangla` or `english`)")]
    UnknownVariant(String),
    #[error("template {template} leaves placeholder {{{name}}} unbound")]
    UnresolvedPlaceholder { template: &'static str, name: String },
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which instruction language the few-shot examples and task text use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionVariant {
    Bangla,
    English,
}

impl FromStr for InstructionVariant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bangla" | "bn" => Ok(Self::Bangla),
            "english" | "en" => Ok(Self::English),
            _ => Err(PromptError::UnknownVariant(s.to_string())),
        }
    }
}

impl fmt::Display for InstructionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bangla => "bangla",
            Self::English => "english",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    pub translation_system: String,
    pub translation_user: String,
    pub translation_tests: String,
    pub generation_system_bn: String,
    pub generation_system_en: String,
    pub generation_user: String,
    pub feedback_user: String,
    pub attempt_analysis: String,
    pub guidance_assertion: String,
    pub guidance_index: String,
    pub guidance_dict: String,
    pub guidance_attribute: String,
}

const TEMPLATE_FILES: [&str; 12] = [
    "translation_system.txt",
    "translation_user.txt",
    "translation_tests.txt",
    "generation_system_bn.txt",
    "generation_system_en.txt",
    "generation_user.txt",
    "feedback.txt",
    "attempt_analysis.txt",
    "guidance_assertion.txt",
    "guidance_index.txt",
    "guidance_dict.txt",
    "guidance_attribute.txt",
];

// Template files end with one newline that is not part of the template.
fn asset(text: &str) -> String {
    text.strip_suffix('\n').unwrap_or(text).to_string()
}

impl PromptTemplateSet {
    pub fn builtin() -> &'static Self {
        static SET: OnceLock<PromptTemplateSet> = OnceLock::new();
        SET.get_or_init(|| Self {
            translation_system: asset(include_str!("../templates/translation_system.txt")),
            translation_user: asset(include_str!("../templates/translation_user.txt")),
            translation_tests: asset(include_str!("../templates/translation_tests.txt")),
            generation_system_bn: asset(include_str!("../templates/generation_system_bn.txt")),
            generation_system_en: asset(include_str!("../templates/generation_system_en.txt")),
            generation_user: asset(include_str!("../templates/generation_user.txt")),
            feedback_user: asset(include_str!("../templates/feedback.txt")),
            attempt_analysis: asset(include_str!("../templates/attempt_analysis.txt")),
            guidance_assertion: asset(include_str!("../templates/guidance_assertion.txt")),
            guidance_index: asset(include_str!("../templates/guidance_index.txt")),
            guidance_dict: asset(include_str!("../templates/guidance_dict.txt")),
            guidance_attribute: asset(include_str!("../templates/guidance_attribute.txt")),
        })
    }

    /// Loads a full template set from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path)
                .map(|t| asset(&t))
                .map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })
        };
        let mut texts = TEMPLATE_FILES
            .iter()
            .map(|n| read(n))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter();
        let mut next = || texts.next().unwrap_or_default();
        let set = Self {
            translation_system: next(),
            translation_user: next(),
            translation_tests: next(),
            generation_system_bn: next(),
            generation_system_en: next(),
            generation_user: next(),
            feedback_user: next(),
            attempt_analysis: next(),
            guidance_assertion: next(),
            guidance_index: next(),
            guidance_dict: next(),
            guidance_attribute: next(),
        };
        set.check_placeholders()?;
        Ok(set)
    }

    /// Every placeholder appearing in a template must be a known name.
    pub fn check_placeholders(&self) -> Result<(), PromptError> {
        let known: HashSet<&str> = KNOWN_PLACEHOLDERS.iter().copied().collect();
        let all = [
            ("translation_system", &self.translation_system),
            ("translation_user", &self.translation_user),
            ("translation_tests", &self.translation_tests),
            ("generation_system_bn", &self.generation_system_bn),
            ("generation_system_en", &self.generation_system_en),
            ("generation_user", &self.generation_user),
            ("feedback_user", &self.feedback_user),
            ("attempt_analysis", &self.attempt_analysis),
        ];
        for (template, text) in all {
            if let Some(name) = placeholders(text).into_iter().find(|n| !known.contains(n)) {
                return Err(PromptError::UnresolvedPlaceholder {
                    template,
                    name: name.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn generation_system(&self, variant: InstructionVariant) -> &str {
        match variant {
            InstructionVariant::Bangla => &self.generation_system_bn,
            InstructionVariant::English => &self.generation_system_en,
        }
    }

    /// Translator persona plus the instruction, followed by the task's full
    /// test suite so the translation is anchored to expected behaviour.
    pub fn build_translation_prompt(&self, task: &TaskRecord) -> Vec<ChatMessage> {
        let mut user = render_infallible(
            &self.translation_user,
            &[("instruction", task.instruction.as_str())],
        );
        if task.test_list.is_empty() {
            tracing::warn!(task = %task.id, "translation prompt built without tests");
        } else {
            user.push_str(&render_infallible(
                &self.translation_tests,
                &[("test_list", &join_tests(&task.test_list))],
            ));
        }
        vec![
            ChatMessage::system(self.translation_system.clone()),
            ChatMessage::user(user),
        ]
    }

    pub fn build_generation_prompt<S: AsRef<str>>(
        &self,
        instruction: &str,
        test_list: &[S],
        function_name: &str,
        variant: InstructionVariant,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let tests = join_tests(test_list);
        let user = render(
            "generation_user",
            &self.generation_user,
            &[
                ("instruction", instruction),
                ("test_list", &tests),
                ("function_name", function_name),
            ],
        )?;
        Ok(vec![
            ChatMessage::system(self.generation_system(variant).to_string()),
            ChatMessage::user(user),
        ])
    }

    /// Summary of earlier attempts: count, first and latest lengths in
    /// characters, and the number of distinct 50-character prefixes.
    /// An empty history is treated as a single empty attempt.
    pub fn build_attempt_analysis<S: AsRef<str>>(&self, previous_attempts: &[S]) -> String {
        let history: Vec<&str> = if previous_attempts.is_empty() {
            vec![""]
        } else {
            previous_attempts.iter().map(AsRef::as_ref).collect()
        };
        let first = history[0].chars().count().to_string();
        let latest = history[history.len() - 1].chars().count().to_string();
        let approaches = history
            .iter()
            .map(|a| a.chars().take(APPROACH_PREFIX_CHARS).collect::<String>())
            .collect::<HashSet<_>>()
            .len()
            .to_string();
        render_infallible(
            &self.attempt_analysis,
            &[
                ("attempt_count", &history.len().to_string()),
                ("first_length", &first),
                ("latest_length", &latest),
                ("approach_count", &approaches),
            ],
        )
    }

    /// Error-type specific advice; empty when no rule applies.
    pub fn select_guidance(&self, status: TestStatus, error_msg: &str) -> &str {
        match status {
            TestStatus::AssertionFailed => &self.guidance_assertion,
            TestStatus::RuntimeError => {
                let msg = error_msg.to_lowercase();
                if msg.contains("index") || msg.contains("list") {
                    &self.guidance_index
                } else if msg.contains("key") || msg.contains("dict") {
                    &self.guidance_dict
                } else if msg.contains("attribute") {
                    &self.guidance_attribute
                } else {
                    ""
                }
            }
            _ => "",
        }
    }

    /// Retry prompt: the base generation messages with the failure report
    /// appended to the final user message.
    pub fn build_feedback_prompt<S: AsRef<str>>(
        &self,
        base: &[ChatMessage],
        instruction: &str,
        failed: &TestOutcome,
        report: &ExecutionReport,
        previous_attempts: &[S],
    ) -> Vec<ChatMessage> {
        let analysis = self.build_attempt_analysis(previous_attempts);
        let status = failed.status.to_string();
        let feedback = render_infallible(
            &self.feedback_user,
            &[
                ("status", status.as_str()),
                ("error", &failed.error),
                ("test_case", &failed.test_case),
                ("index", &failed.index.to_string()),
                ("total", &report.outcomes.len().to_string()),
                ("specific_guidance", self.select_guidance(failed.status, &failed.error)),
                ("attempt_analysis", &analysis),
                ("instruction", instruction),
            ],
        );
        let mut messages = base.to_vec();
        match messages.iter_mut().rev().find(|m| m.role == Role::User) {
            Some(last) => last.content.push_str(&feedback),
            None => messages.push(ChatMessage::user(feedback)),
        }
        messages
    }
}

pub fn join_tests<S: AsRef<str>>(tests: &[S]) -> String {
    tests
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Names of `{identifier}` placeholders in order of appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match placeholder_at(after) {
            Some(name) => {
                out.push(name);
                rest = &after[name.len() + 1..];
            }
            None => rest = after,
        }
    }
    out
}

fn placeholder_at(s: &str) -> Option<&str> {
    let end = s.find('}')?;
    let name = &s[..end];
    let mut chars = name.chars();
    let first = chars.next()?;
    let valid = (first.is_ascii_alphabetic() || first == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    valid.then_some(name)
}

/// Single-pass substitution of `{name}` placeholders. Substituted values are
/// not rescanned. Braces that do not form a placeholder are kept verbatim.
pub fn render(
    template_name: &'static str,
    template: &str,
    bindings: &[(&str, &str)],
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match placeholder_at(after) {
            Some(name) => {
                let value = bindings
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::UnresolvedPlaceholder {
                        template: template_name,
                        name: name.to_string(),
                    })?;
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

// For built-in templates whose bindings are fixed in code.
fn render_infallible(template: &str, bindings: &[(&str, &str)]) -> String {
    render("builtin", template, bindings).unwrap_or_else(|e| panic!("built-in template: {e}"))
}

/// SHA-256 over the JSON form of the messages, hex encoded.
pub fn prompt_digest(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).unwrap_or_default();
    hex::encode(Sha256::digest(&bytes))
}

pub fn build_translation_prompt(task: &TaskRecord) -> Vec<ChatMessage> {
    PromptTemplateSet::builtin().build_translation_prompt(task)
}

pub fn build_generation_prompt<S: AsRef<str>>(
    instruction: &str,
    test_list: &[S],
    function_name: &str,
    variant: InstructionVariant,
) -> Result<Vec<ChatMessage>, PromptError> {
    PromptTemplateSet::builtin().build_generation_prompt(instruction, test_list, function_name, variant)
}

pub fn build_attempt_analysis<S: AsRef<str>>(previous_attempts: &[S]) -> String {
    PromptTemplateSet::builtin().build_attempt_analysis(previous_attempts)
}

pub fn select_guidance(status: TestStatus, error_msg: &str) -> &'static str {
    PromptTemplateSet::builtin().select_guidance(status, error_msg)
}

pub fn build_feedback_prompt<S: AsRef<str>>(
    base: &[ChatMessage],
    instruction: &str,
    failed: &TestOutcome,
    report: &ExecutionReport,
    previous_attempts: &[S],
) -> Vec<ChatMessage> {
    PromptTemplateSet::builtin().build_feedback_prompt(base, instruction, failed, report, previous_attempts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(index: usize, status: TestStatus, error: &str, test: &str) -> TestOutcome {
        TestOutcome {
            index,
            status,
            error: error.into(),
            test_case: test.into(),
        }
    }

    #[test]
    fn builtin_templates_only_use_known_placeholders() {
        PromptTemplateSet::builtin().check_placeholders().unwrap();
    }

    #[test]
    fn render_binds_and_keeps_literal_braces() {
        let out = render("t", "a {x} {1} {} {y z} {x}", &[("x", "{x}")]).unwrap();
        assert_eq!(out, "a {x} {1} {} {y z} {x}");
        assert!(matches!(
            render("t", "{missing}", &[]),
            Err(PromptError::UnresolvedPlaceholder { .. })
        ));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("english".parse::<InstructionVariant>().unwrap(), InstructionVariant::English);
        assert_eq!("Bangla".parse::<InstructionVariant>().unwrap(), InstructionVariant::Bangla);
        assert!(matches!(
            "klingon".parse::<InstructionVariant>(),
            Err(PromptError::UnknownVariant(_))
        ));
    }

    #[test]
    fn attempt_analysis_counts() {
        let a = "a".repeat(120);
        let b = "b".repeat(95);
        let text = build_attempt_analysis(&[a.as_str(), b.as_str()]);
        assert!(text.contains("PATTERN ANALYSIS FROM 2 ATTEMPTS"));
        assert!(text.contains("- Attempt 1: 120 characters"));
        assert!(text.contains("- Latest: 95 characters"));
        assert!(text.contains("- Different approaches tried: 2"));

        let same = build_attempt_analysis(&[a.as_str(), a.as_str()]);
        assert!(same.contains("- Different approaches tried: 1"));

        // Equal first 50 chars, different tails.
        let p1 = format!("{}{}", "x".repeat(50), "tail one");
        let p2 = format!("{}{}", "x".repeat(50), "other");
        let shared = build_attempt_analysis(&[p1.as_str(), p2.as_str()]);
        assert!(shared.contains("- Different approaches tried: 1"));
    }

    #[test]
    fn attempt_analysis_counts_characters_not_bytes() {
        let text = build_attempt_analysis(&["অআই"]);
        assert!(text.contains("- Attempt 1: 3 characters"));
        assert!(text.contains("FROM 1 ATTEMPTS"));
    }

    #[test]
    fn guidance_branches() {
        assert!(select_guidance(TestStatus::AssertionFailed, "anything").contains("Check return data type"));
        assert!(select_guidance(TestStatus::RuntimeError, "IndexError: list index out of range")
            .contains("INDEX/LIST ERROR GUIDANCE"));
        assert!(select_guidance(TestStatus::RuntimeError, "KeyError: 'a'").contains("DICTIONARY ERROR GUIDANCE"));
        assert!(select_guidance(TestStatus::RuntimeError, "AttributeError: 'int' object has no attribute 'x'")
            .contains("ATTRIBUTE ERROR GUIDANCE"));
        assert_eq!(select_guidance(TestStatus::RuntimeError, "ZeroDivisionError"), "");
        assert_eq!(select_guidance(TestStatus::Timeout, "index"), "");
        assert_eq!(select_guidance(TestStatus::SyntaxError, "list"), "");
    }

    #[test]
    fn feedback_prompt_carries_failure() {
        let report = ExecutionReport {
            outcomes: vec![
                outcome(1, TestStatus::Passed, "", "assert f(1) == 1"),
                outcome(2, TestStatus::RuntimeError, "KeyError: 'z'", "assert f(2) == 2"),
                outcome(3, TestStatus::Passed, "", "assert f(3) == 3"),
            ],
            passed: false,
            wall_time: 0.1,
        };
        let failed = report.outcomes[1].clone();
        let base = build_generation_prompt("do f", &["assert f(1) == 1"], "f", InstructionVariant::English).unwrap();
        let messages = build_feedback_prompt(&base, "do f", &failed, &report, &["def f(x): return {}[x]"]);
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[0], base[0]);
        let user = &messages[1].content;
        assert!(user.starts_with(&base[1].content));
        assert!(user.contains("- Error Type: RUNTIME_ERROR"));
        assert!(user.contains("- Error Message: KeyError: 'z'"));
        assert!(user.contains("- Failing Test Case: assert f(2) == 2"));
        assert!(user.contains("Failed at Test #2 out of 3"));
        assert!(user.contains("DICTIONARY ERROR GUIDANCE"));
        assert!(user.contains("# Original Task: do f"));
        assert!(user.ends_with("GENERATE A COMPLETELY NEW APPROACH - Previous attempts failed for a reason."));
        for name in KNOWN_PLACEHOLDERS {
            assert!(!user.contains(&format!("{{{name}}}")), "unbound {name}");
        }
    }
}
