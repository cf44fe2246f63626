//! Pulls candidate source out of raw model completions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const FENCE: &str = "```";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("completion contains no fenced code block")]
    NoCodeBlock,
}

/// A generated solution for one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub task_id: String,
    pub attempt_index: u32,
    pub raw_output: String,
    pub code: String,
    pub temperature: f64,
}

struct Block<'a> {
    python: bool,
    lines: Vec<&'a str>,
}

fn is_python_tag(tag: &str) -> bool {
    matches!(
        tag.to_ascii_lowercase().as_str(),
        "python" | "py" | "python3" | "py3"
    )
}

fn blocks(raw: &str) -> Vec<Block<'_>> {
    let mut out = Vec::new();
    let mut open: Option<Block<'_>> = None;
    for line in raw.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        match open.as_mut() {
            // Any line carrying a fence closes the block.
            Some(_) if line.contains(FENCE) => out.extend(open.take()),
            Some(block) => block.lines.push(line),
            None => {
                if let Some(rest) = line.trim_start().strip_prefix(FENCE) {
                    let tag = rest.trim_start_matches('`').split_whitespace().next().unwrap_or("");
                    open = Some(Block {
                        python: is_python_tag(tag),
                        lines: Vec::new(),
                    });
                } else if line.contains(FENCE) {
                    // Fence opened mid-line, e.g. "Here it is: ```python".
                    let rest = &line[line.find(FENCE).unwrap_or(0) + FENCE.len()..];
                    let tag = rest.split_whitespace().next().unwrap_or("");
                    if !rest.contains(FENCE) {
                        open = Some(Block {
                            python: is_python_tag(tag),
                            lines: Vec::new(),
                        });
                    }
                }
            }
        }
    }
    // An unterminated fence runs to the end of the text.
    out.extend(open);
    out
}

fn tagged_untagged<'a>(blocks: &'a [Block<'a>]) -> Option<&'a Block<'a>> {
    blocks
        .iter()
        .find(|b| b.python)
        .or_else(|| blocks.iter().find(|b| !b.python))
}

/// Contents of the first python-tagged fence, else the first other fence,
/// with surrounding blank lines removed.
pub fn extract_code_block(raw: &str) -> Result<String, ExtractError> {
    let all = blocks(raw);
    let chosen = tagged_untagged(&all).ok_or(ExtractError::NoCodeBlock)?;
    let lines = &chosen.lines;
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => Ok(lines[s..=e].join("\n")),
        _ => Err(ExtractError::NoCodeBlock),
    }
}
