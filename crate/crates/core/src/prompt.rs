//! Path serialization and few-shot prompt rendering.
//!
//! A path renders as `E0 -> rel1 -> E1 -> ... -> Eh`. The prompt is a fixed
//! preamble, `E` worked exemplars, then the live question:
//!
//! ```text
//! <preamble>
//!
//! ### Example 1
//! Question: ...
//! Paths:
//! - A -> r -> B
//! Think: ...
//! Answer: ...
//!
//! ### Task
//! Question: ...
//! Paths:
//! - ...            (or the single line "(none)")
//! <answer format instruction>
//! Answer:
//! ```
//!
//! Exemplar files are TOML with one `[[exemplar]]` table per example and the
//! keys `question`, `paths` (array of serialized paths), `think`, `answer`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::pathgen::ReasoningPath;

pub const ARROW: &str = " -> ";
pub const QUESTION_HEADER: &str = "Question:";
pub const PATHS_HEADER: &str = "Paths:";
pub const THINK_HEADER: &str = "Think:";
pub const ANSWER_HEADER: &str = "Answer:";
pub const EXAMPLE_MARKER: &str = "### Example";
pub const TASK_MARKER: &str = "### Task";
pub const PATH_BULLET: &str = "- ";
pub const NO_PATHS: &str = "(none)";

pub const PREAMBLE: &str = "Answer the question using the knowledge graph reasoning paths. \
Each path links entities and relations with \"->\", starting from the entity mentioned in the question.";

pub const ANSWER_INSTRUCTION: &str = "Reason over the paths step by step, then reply with only the answer \
entities as a comma-separated list after \"Answer:\". If the paths do not contain the answer, use your own knowledge.";

/// Default exemplars shipped with the crate.
pub const DEFAULT_EXEMPLARS: &str = include_str!("../data/exemplars.toml");

/// Number of exemplars used unless configured otherwise.
pub const DEFAULT_EXEMPLAR_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewShotExample {
    pub question: String,
    pub paths: Vec<String>,
    pub think: String,
    pub answer: String,
}

impl FewShotExample {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("question", &self.question),
            ("think", &self.think),
            ("answer", &self.answer),
        ] {
            if value.trim().is_empty() {
                return Err(Error::Data(format!("exemplar field `{field}` is empty")));
            }
        }
        if self.paths.is_empty() {
            return Err(Error::Data("exemplar has no paths".into()));
        }
        for p in &self.paths {
            parse_path_text(p)?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ExemplarFile {
    exemplar: Vec<FewShotExample>,
}

pub fn parse_exemplars(text: &str) -> Result<Vec<FewShotExample>> {
    let file: ExemplarFile =
        toml::from_str(text).map_err(|e| Error::Data(format!("exemplar file: {e}")))?;
    for ex in &file.exemplar {
        ex.validate()?;
    }
    Ok(file.exemplar)
}

pub fn load_exemplars(path: impl AsRef<Path>) -> Result<Vec<FewShotExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_exemplars(&text)
}

pub fn default_exemplars() -> Vec<FewShotExample> {
    parse_exemplars(DEFAULT_EXEMPLARS).expect("bundled exemplars are valid")
}

/// Renders a path as its label sequence joined by [`ARROW`].
pub fn serialize_path(path: &ReasoningPath, kg: &KnowledgeGraph) -> Result<String> {
    let mut out = String::from(kg.entity_name(path.source())?);
    for (r, e) in path.relations().iter().zip(&path.entities()[1..]) {
        out.push_str(ARROW);
        out.push_str(kg.relation_name(*r)?);
        out.push_str(ARROW);
        out.push_str(kg.entity_name(*e)?);
    }
    Ok(out)
}

/// Splits a serialized path back into entity and relation labels.
pub fn parse_path_text(text: &str) -> Result<(Vec<String>, Vec<String>)> {
    let parts: Vec<&str> = text.split(ARROW).collect();
    if parts.len() < 3 || parts.len().is_multiple_of(2) || parts.iter().any(|p| p.trim().is_empty()) {
        return Err(Error::Prompt(format!("malformed path `{text}`")));
    }
    let entities = parts.iter().step_by(2).map(|s| s.to_string()).collect();
    let relations = parts
        .iter()
        .skip(1)
        .step_by(2)
        .map(|s| s.to_string())
        .collect();
    Ok((entities, relations))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub exemplar_count: usize,
    pub path_count: usize,
}

fn push_paths(out: &mut String, paths: &[String]) {
    out.push_str(PATHS_HEADER);
    out.push('\n');
    if paths.is_empty() {
        out.push_str(NO_PATHS);
        out.push('\n');
    }
    for p in paths {
        out.push_str(PATH_BULLET);
        out.push_str(p);
        out.push('\n');
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders the first `count` exemplars followed by the live question.
pub fn build_prompt(
    question: &str,
    paths: &[String],
    exemplars: &[FewShotExample],
    count: usize,
) -> Result<RenderedPrompt> {
    if count > exemplars.len() {
        return Err(Error::Config(format!(
            "{count} exemplars requested, {} available",
            exemplars.len()
        )));
    }
    let mut text = String::new();
    text.push_str(PREAMBLE);
    text.push_str("\n\n");
    for (i, ex) in exemplars[..count].iter().enumerate() {
        text.push_str(&format!("{EXAMPLE_MARKER} {}\n", i + 1));
        text.push_str(&format!("{QUESTION_HEADER} {}\n", one_line(&ex.question)));
        push_paths(&mut text, &ex.paths);
        text.push_str(&format!("{THINK_HEADER} {}\n", one_line(&ex.think)));
        text.push_str(&format!("{ANSWER_HEADER} {}\n\n", one_line(&ex.answer)));
    }
    text.push_str(TASK_MARKER);
    text.push('\n');
    text.push_str(&format!("{QUESTION_HEADER} {}\n", one_line(question)));
    push_paths(&mut text, paths);
    text.push_str(ANSWER_INSTRUCTION);
    text.push('\n');
    text.push_str(ANSWER_HEADER);
    text.push('\n');
    Ok(RenderedPrompt {
        text,
        exemplar_count: count,
        path_count: paths.len(),
    })
}

/// Serialized paths listed under the live question of a rendered prompt.
pub fn live_paths(prompt: &str) -> Result<Vec<String>> {
    let task = prompt
        .rfind(&format!("{TASK_MARKER}\n"))
        .ok_or_else(|| Error::Prompt("no task section".into()))?;
    let mut lines = prompt[task..].lines().skip(1);
    lines
        .by_ref()
        .find(|l| *l == PATHS_HEADER)
        .ok_or_else(|| Error::Prompt("task section has no paths block".into()))?;
    let mut out = Vec::new();
    for line in lines {
        if line == NO_PATHS && out.is_empty() {
            break;
        }
        match line.strip_prefix(PATH_BULLET) {
            Some(p) => {
                parse_path_text(p)?;
                out.push(p.to_string());
            }
            None => break,
        }
    }
    Ok(out)
}
