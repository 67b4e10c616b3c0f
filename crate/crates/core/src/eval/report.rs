//! Per-question rows, aggregate metrics and their on-disk forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRow {
    pub id: String,
    pub gold_hops: Option<usize>,
    pub predicted_hops: Option<usize>,
    /// Number of paths placed in the prompt.
    pub paths: usize,
    /// A gold answer is the endpoint of some selected path.
    pub path_hit: bool,
    /// The first selected path ends in a gold answer.
    pub top_path_hit: bool,
    /// Some parsed answer matches a gold answer.
    pub correct: bool,
    /// The first parsed answer matches a gold answer.
    pub hit_at_1: bool,
    pub answers: Vec<String>,
    pub error: Option<String>,
}

impl QuestionRow {
    pub fn failed(id: &str, gold_hops: Option<usize>, error: String) -> Self {
        Self {
            id: id.to_string(),
            gold_hops,
            predicted_hops: None,
            paths: 0,
            path_hit: false,
            top_path_hit: false,
            correct: false,
            hit_at_1: false,
            answers: Vec::new(),
            error: Some(error),
        }
    }

    pub fn hop_correct(&self) -> Option<bool> {
        self.gold_hops.map(|g| self.predicted_hops == Some(g))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub questions: usize,
    /// Containment accuracy, the headline metric.
    pub accuracy: f64,
    pub hits_at_1: f64,
    pub path_hit_rate: f64,
    pub top_path_hit_rate: f64,
    /// Over questions that carry `gold_hops`; `None` when none do.
    pub hop_accuracy: Option<f64>,
    pub errors: usize,
    pub rows: Vec<QuestionRow>,
    pub config: BTreeMap<String, String>,
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

impl EvalReport {
    pub fn from_rows(rows: Vec<QuestionRow>, config: BTreeMap<String, String>) -> Self {
        let n = rows.len();
        let count = |f: fn(&QuestionRow) -> bool| rows.iter().filter(|r| f(r)).count();
        let hop: Vec<bool> = rows.iter().filter_map(QuestionRow::hop_correct).collect();
        Self {
            questions: n,
            accuracy: fraction(count(|r| r.correct), n),
            hits_at_1: fraction(count(|r| r.hit_at_1), n),
            path_hit_rate: fraction(count(|r| r.path_hit), n),
            top_path_hit_rate: fraction(count(|r| r.top_path_hit), n),
            hop_accuracy: (!hop.is_empty())
                .then(|| fraction(hop.iter().filter(|&&b| b).count(), hop.len())),
            errors: count(|r| r.error.is_some()),
            rows,
            config,
        }
    }

    pub const TSV_HEADER: &'static str =
        "id\tgold_hops\tpredicted_hops\tpaths\tpath_hit\ttop_path_hit\tcorrect\thit_at_1\tanswers\terror";

    pub fn write_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", Self::TSV_HEADER)?;
        let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        let flag = |b: bool| if b { "1" } else { "0" };
        for r in &self.rows {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.id,
                opt(r.gold_hops),
                opt(r.predicted_hops),
                r.paths,
                flag(r.path_hit),
                flag(r.top_path_hit),
                flag(r.correct),
                flag(r.hit_at_1),
                clean(&r.answers.join(" | ")),
                r.error.as_deref().map_or_else(String::new, clean),
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        let _ = writeln!(s, "questions = {}", self.questions);
        let _ = writeln!(s, "accuracy = {:.6}", self.accuracy);
        let _ = writeln!(s, "hits_at_1 = {:.6}", self.hits_at_1);
        let _ = writeln!(s, "path_hit_rate = {:.6}", self.path_hit_rate);
        let _ = writeln!(s, "top_path_hit_rate = {:.6}", self.top_path_hit_rate);
        match self.hop_accuracy {
            Some(h) => {
                let _ = writeln!(s, "hop_accuracy = {h:.6}");
            }
            None => {
                let _ = writeln!(s, "hop_accuracy = n/a");
            }
        }
        let _ = writeln!(s, "errors = {}", self.errors);
        s
    }

    /// Writes `<stem>.tsv` and `<stem>.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let tsv = dir.join(format!("{stem}.tsv"));
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).map_err(|e| Error::io(&tsv, e))?;
        fs::write(&tsv, buf).map_err(|e| Error::io(&tsv, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        fs::write(&txt, self.summary()).map_err(|e| Error::io(&txt, e))
    }
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}
