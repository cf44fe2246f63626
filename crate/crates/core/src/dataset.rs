//! Task records: loading, validation and callee extraction.
//!
//! Corpora are line-delimited JSON, one record per line:
//! `{"id": ..., "instruction": ..., "response": ..., "test_list": [...]}`.
//! `response` is optional since only training splits carry reference code.
//! Translated corpora carry the same keys plus `english_instruction` and
//! `translator_model`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    pub test_list: Vec<String>,
}

/// An instruction translated into English by a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslatedTask {
    pub task_id: String,
    pub english_instruction: String,
    pub translator_model: String,
}

/// Wire form of a translated corpus line: the source record plus the translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslatedRecord {
    #[serde(flatten)]
    pub task: TaskRecord,
    pub english_instruction: String,
    pub translator_model: String,
}

impl TranslatedRecord {
    pub fn new(task: TaskRecord, english_instruction: String, translator_model: String) -> Self {
        Self {
            task,
            english_instruction,
            translator_model,
        }
    }

    pub fn translation(&self) -> TranslatedTask {
        TranslatedTask {
            task_id: self.task.id.clone(),
            english_instruction: self.english_instruction.clone(),
            translator_model: self.translator_model.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: record {id:?} is missing field `{field}`")]
    MissingField {
        line: usize,
        id: Option<String>,
        field: &'static str,
    },
    #[error("line {line}: duplicate record id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: record {id:?} has an empty test_list")]
    EmptyTestList { line: usize, id: String },
    #[error("line {line}: malformed record {id:?}: {detail}")]
    MalformedRecord {
        line: usize,
        id: Option<String>,
        detail: String,
    },
    #[error("line {line}: translation refers to unknown task {id:?}")]
    UnknownTask { line: usize, id: String },
    #[error("no test matches `assert <identifier>(`")]
    NoCallableFound,
}

/// Loads and validates a line-delimited task corpus, preserving file order.
pub fn load_tasks(path: &Path, split_label: &str) -> Result<Vec<TaskRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let tasks = parse_tasks(&text)?;
    if tasks.is_empty() {
        tracing::warn!(split = split_label, path = %path.display(), "task file contains no records");
    } else {
        tracing::info!(split = split_label, count = tasks.len(), "loaded tasks");
    }
    Ok(tasks)
}

/// Parses corpus text. Blank lines are ignored.
pub fn parse_tasks(text: &str) -> Result<Vec<TaskRecord>, DatasetError> {
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let object = parse_object(raw, line)?;
        let task = task_from_object(&object, line)?;
        if !seen.insert(task.id.clone()) {
            return Err(DatasetError::DuplicateId { line, id: task.id });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

fn parse_object(raw: &str, line: usize) -> Result<Map<String, Value>, DatasetError> {
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(DatasetError::MalformedRecord {
            line,
            id: None,
            detail: "line is not a JSON object".into(),
        }),
        Err(e) => Err(DatasetError::MalformedRecord {
            line,
            id: None,
            detail: e.to_string(),
        }),
    }
}

fn string_field(
    object: &Map<String, Value>,
    field: &'static str,
    line: usize,
    id: Option<&str>,
) -> Result<String, DatasetError> {
    match object.get(field) {
        None | Some(Value::Null) => Err(DatasetError::MissingField {
            line,
            id: id.map(str::to_owned),
            field,
        }),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(DatasetError::MalformedRecord {
            line,
            id: id.map(str::to_owned),
            detail: format!("field `{field}` must be a string, found {other}"),
        }),
    }
}

fn task_from_object(object: &Map<String, Value>, line: usize) -> Result<TaskRecord, DatasetError> {
    let id = string_field(object, "id", line, None)?;
    if id.is_empty() {
        return Err(DatasetError::MalformedRecord {
            line,
            id: Some(id),
            detail: "field `id` is empty".into(),
        });
    }
    let instruction = string_field(object, "instruction", line, Some(&id))?;
    let response = match object.get("response") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            return Err(DatasetError::MalformedRecord {
                line,
                id: Some(id),
                detail: format!("field `response` must be a string, found {other}"),
            })
        }
    };
    let tests = match object.get("test_list") {
        None | Some(Value::Null) => {
            return Err(DatasetError::MissingField {
                line,
                id: Some(id),
                field: "test_list",
            })
        }
        Some(Value::Array(items)) => items,
        Some(_) => {
            return Err(DatasetError::MalformedRecord {
                line,
                id: Some(id),
                detail: "field `test_list` must be an array of strings".into(),
            })
        }
    };
    if tests.is_empty() {
        return Err(DatasetError::EmptyTestList { line, id });
    }
    let mut test_list = Vec::with_capacity(tests.len());
    for (i, item) in tests.iter().enumerate() {
        let Value::String(test) = item else {
            return Err(DatasetError::MalformedRecord {
                line,
                id: Some(id),
                detail: format!("test_list[{i}] is not a string"),
            });
        };
        if !is_assert_statement(test) {
            return Err(DatasetError::MalformedRecord {
                line,
                id: Some(id),
                detail: format!("test_list[{i}] does not begin with `assert`"),
            });
        }
        test_list.push(test.clone());
    }
    Ok(TaskRecord {
        id,
        instruction,
        response,
        test_list,
    })
}

/// True when the statement, after leading whitespace, starts with the `assert` token.
pub fn is_assert_statement(test: &str) -> bool {
    let Some(rest) = test.trim_start().strip_prefix("assert") else {
        return false;
    };
    rest.chars()
        .next()
        .is_none_or(|c| !(c.is_alphanumeric() || c == '_'))
}

/// Writes records in the line-delimited corpus format.
pub fn write_tasks<W: Write>(mut out: W, tasks: &[TaskRecord]) -> std::io::Result<()> {
    for task in tasks {
        serde_json::to_writer(&mut out, task)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Loads a translated corpus and checks every entry against the source tasks.
pub fn load_translations(
    path: &Path,
    tasks: &[TaskRecord],
) -> Result<Vec<TranslatedTask>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let known: HashSet<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let object = parse_object(raw, line)?;
        let id = string_field(&object, "id", line, None)?;
        let english_instruction = string_field(&object, "english_instruction", line, Some(&id))?;
        let translator_model = string_field(&object, "translator_model", line, Some(&id))?;
        if english_instruction.trim().is_empty() {
            return Err(DatasetError::MalformedRecord {
                line,
                id: Some(id),
                detail: "field `english_instruction` is empty".into(),
            });
        }
        if !known.contains(id.as_str()) {
            return Err(DatasetError::UnknownTask { line, id });
        }
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId { line, id });
        }
        out.push(TranslatedTask {
            task_id: id,
            english_instruction,
            translator_model,
        });
    }
    Ok(out)
}

/// Index of translations by task id.
pub fn translation_index(translations: &[TranslatedTask]) -> HashMap<&str, &TranslatedTask> {
    translations.iter().map(|t| (t.task_id.as_str(), t)).collect()
}

/// Returns the function called directly after `assert` in the tests.
///
/// The scan is lexical: `assert`, optional `not`, then an identifier
/// immediately followed by `(`. With several callees the most frequent
/// wins, ties going to the one seen first.
pub fn extract_function_name<S: AsRef<str>>(test_list: &[S]) -> Result<String, DatasetError> {
    let mut counts: Vec<(&str, usize)> = Vec::new();
    for test in test_list {
        if let Some(name) = callee_of(test.as_ref()) {
            match counts.iter_mut().find(|(n, _)| *n == name) {
                Some((_, c)) => *c += 1,
                None => counts.push((name, 1)),
            }
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for &(name, count) in &counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((name, count));
        }
    }
    best.map(|(name, _)| name.to_string())
        .ok_or(DatasetError::NoCallableFound)
}

fn callee_of(test: &str) -> Option<&str> {
    let rest = test.trim_start().strip_prefix("assert")?;
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let mut rest = rest.trim_start();
    loop {
        let end = rest
            .char_indices()
            .find(|&(_, c)| !(c.is_alphanumeric() || c == '_'))
            .map_or(rest.len(), |(i, _)| i);
        let ident = &rest[..end];
        let first = ident.chars().next()?;
        if first.is_numeric() {
            return None;
        }
        let after = &rest[end..];
        if ident == "not" && after.starts_with(char::is_whitespace) {
            rest = after.trim_start();
            continue;
        }
        return after.starts_with('(').then_some(ident);
    }
}
