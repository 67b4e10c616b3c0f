//! Question datasets in JSON Lines form.
//!
//! One record per line:
//!
//! ```text
//! {"id": "q1", "question": "...", "topic_entities": ["A"], "answers": ["B"],
//!  "gold_hops": 2, "subgraph_ref": "q1.tsv"}
//! ```
//!
//! `gold_hops` and `subgraph_ref` are optional. Unknown keys are ignored.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub topic_entities: Vec<String>,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_hops: Option<usize>,
    /// Per-question graph file, relative to the dataset file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgraph_ref: Option<String>,
}

impl QaExample {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.topic_entities.is_empty() {
            return Err("topic_entities is empty".into());
        }
        if self.answers.is_empty() {
            return Err("answers is empty".into());
        }
        if self.gold_hops == Some(0) {
            return Err("gold_hops must be at least 1".into());
        }
        Ok(())
    }
}

/// Parses dataset text; `origin` names the source in error messages.
pub fn parse_dataset(text: &str, origin: impl AsRef<Path>) -> Result<Vec<QaExample>> {
    let origin = origin.as_ref();
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let ex: QaExample =
            serde_json::from_str(line).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        ex.validate().map_err(|m| Error::parse(origin, lineno, m))?;
        if !ids.insert(ex.id.clone()) {
            return Err(Error::parse(
                origin,
                lineno,
                format!("duplicate id `{}`", ex.id),
            ));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QaExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn write_dataset(path: impl AsRef<Path>, examples: &[QaExample]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, ex).expect("example serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
