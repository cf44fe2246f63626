use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatModel, CompletionRequest, LlmError, Purpose};

/// One scripted reply: literal assistant text or a forced failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Text(String),
    Fail { error: ScriptedFailure },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptedFailure {
    Transport,
    Rejected,
    Empty,
}

/// Replies keyed by task id and attempt number.
///
/// Attempt `k` of a task gets `tasks[id][k-1]`, clamped to the last entry;
/// tasks without a script fall back to `default`. Translation requests use
/// `translations[id]`, then `default_translation`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    pub label: Option<String>,
    pub default: Vec<ScriptEntry>,
    pub tasks: BTreeMap<String, Vec<ScriptEntry>>,
    pub translations: BTreeMap<String, String>,
    pub default_translation: Option<String>,
}

impl MockScript {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Deterministic stand-in for a model endpoint.
#[derive(Debug)]
pub struct ScriptedModel {
    script: MockScript,
    calls: AtomicUsize,
}

impl ScriptedModel {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    /// Replies "OK" to everything.
    pub fn echo_ok() -> Self {
        Self::new(MockScript {
            default: vec![ScriptEntry::Text("OK".into())],
            default_translation: Some("OK".into()),
            ..MockScript::default()
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn entry(&self, request: &CompletionRequest) -> Option<ScriptEntry> {
        let tag = &request.tag;
        match tag.purpose {
            Purpose::Translate => self
                .script
                .translations
                .get(&tag.task_id)
                .or(self.script.default_translation.as_ref())
                .cloned()
                .map(ScriptEntry::Text),
            Purpose::Generate => {
                let list = self
                    .script
                    .tasks
                    .get(&tag.task_id)
                    .unwrap_or(&self.script.default);
                let idx = (tag.attempt.max(1) as usize - 1).min(list.len().checked_sub(1)?);
                list.get(idx).cloned()
            }
        }
    }
}

impl ChatModel for ScriptedModel {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.entry(request) {
            Some(ScriptEntry::Text(text)) if !text.is_empty() => Ok(text),
            Some(ScriptEntry::Text(_)) | Some(ScriptEntry::Fail { error: ScriptedFailure::Empty }) => {
                Err(LlmError::EmptyCompletion)
            }
            Some(ScriptEntry::Fail { error: ScriptedFailure::Rejected }) => Err(LlmError::EndpointRejected {
                status: 400,
                body: "scripted rejection".into(),
            }),
            Some(ScriptEntry::Fail { error: ScriptedFailure::Transport }) | None => Err(LlmError::Transport {
                attempts: 1,
                detail: format!("no scripted reply for task {}", request.tag.task_id),
            }),
        }
    }

    fn label(&self) -> String {
        self.script.label.clone().unwrap_or_else(|| "mock".into())
    }
}
