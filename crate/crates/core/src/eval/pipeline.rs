//! Question preparation and the end-to-end evaluation loop.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::QaExample;
use super::report::{EvalReport, QuestionRow};
use crate::encoder::{
    build_encoder, EncoderConfig, EncoderKind, QuestionEncoder, QuestionEncoding,
};
use crate::error::{Error, Result};
use crate::kg::{
    khop_subgraph, load_graph_with_relations, AnswerVector, EntityId, KnowledgeGraph, Vocab,
};
use crate::llm::{normalize_answer, parse_answer, ClientConfig, LlmClient};
use crate::pathgen::{generate_paths, PathConfig};
use crate::prompt::{
    build_prompt, default_exemplars, serialize_path, FewShotExample, DEFAULT_EXEMPLAR_COUNT,
};
use crate::reasoner::checkpoint::Checkpoint;
use crate::reasoner::train::TrainSample;
use crate::reasoner::{forward, ReasoningOptions, ReasoningTrace};

/// Where each question's graph comes from.
#[derive(Debug, Clone, Copy)]
pub enum GraphSource<'a> {
    /// One graph for every question.
    Shared(&'a KnowledgeGraph),
    /// `subgraph_ref` of each question, resolved against this directory and
    /// loaded with the model's relation vocabulary.
    PerQuestion(&'a Path),
}

/// Restriction of a shared graph to the neighbourhood of the topics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KhopRestriction {
    pub hops: usize,
    pub bidirectional: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub paths: PathConfig,
    /// Number of exemplars E rendered before the question.
    pub fewshot: usize,
    pub exemplars: Vec<FewShotExample>,
    /// Force the mask ablation regardless of the checkpoint flag.
    pub mask_off: bool,
    pub client: ClientConfig,
    /// Precomputed question encodings instead of the hash encoder.
    pub encodings: Option<PathBuf>,
    pub khop: Option<KhopRestriction>,
    /// Extra accepted spellings, keyed by normalized gold answer.
    pub aliases: BTreeMap<String, BTreeSet<String>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PathConfig::default(),
            fewshot: DEFAULT_EXEMPLAR_COUNT,
            exemplars: default_exemplars(),
            mask_off: false,
            client: ClientConfig::default(),
            encodings: None,
            khop: None,
            aliases: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.paths.validate()?;
        if self.fewshot > self.exemplars.len() {
            return Err(Error::Config(format!(
                "E = {} but only {} exemplars are loaded",
                self.fewshot,
                self.exemplars.len()
            )));
        }
        self.client.validate()
    }

    pub fn options(&self, ckpt: &Checkpoint) -> ReasoningOptions {
        ReasoningOptions {
            mask_off: self.mask_off || ckpt.options.mask_off,
            ..ckpt.options
        }
    }

    pub fn snapshot(&self, ckpt: &Checkpoint) -> BTreeMap<String, String> {
        let s = ckpt.params.shape;
        let opts = self.options(ckpt);
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("k", self.paths.top_k.to_string());
        put("n", self.paths.per_entity.to_string());
        put(
            "beam",
            self.paths.beam.map_or("inf".into(), |b| b.to_string()),
        );
        put("fewshot", self.fewshot.to_string());
        put("mask_off", opts.mask_off.to_string());
        put("mode", format!("{:?}", self.client.mode).to_lowercase());
        put("model.d", s.dim.to_string());
        put("model.m", s.relations.to_string());
        put("model.T", s.steps.to_string());
        if let Some(k) = self.khop {
            put(
                "khop",
                format!("{}{}", k.hops, if k.bidirectional { "+rev" } else { "" }),
            );
        }
        m
    }

    fn encoder(&self, ckpt: &Checkpoint) -> Result<Box<dyn QuestionEncoder>> {
        build_encoder(&EncoderConfig {
            dim: ckpt.params.shape.dim,
            kind: match &self.encodings {
                Some(p) => EncoderKind::PrecomputedFile(p.clone()),
                None => EncoderKind::DeterministicHash,
            },
            seed: ckpt.encoder_seed,
        })
    }

    fn accepted(&self, gold: &[String]) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for g in gold {
            let n = normalize_answer(g);
            if let Some(extra) = self.aliases.get(&n) {
                out.extend(extra.iter().cloned());
            }
            out.insert(n);
        }
        out
    }
}

/// Reads an alias file: one line per entity, tab-separated, first field the
/// canonical name and the rest accepted alternatives.
pub fn load_aliases(path: impl AsRef<Path>) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t').map(normalize_answer);
        let canon = fields
            .next()
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Error::parse(path, i + 1, "empty canonical name"))?;
        out.entry(canon)
            .or_default()
            .extend(fields.filter(|a| !a.is_empty()));
    }
    Ok(out)
}

/// A question resolved against its graph.
#[derive(Debug, Clone)]
pub struct PreparedQuestion<'g> {
    pub example: QaExample,
    pub graph: Cow<'g, KnowledgeGraph>,
    pub topics: BTreeSet<EntityId>,
    /// Gold answers present in the graph.
    pub gold: BTreeSet<EntityId>,
    pub encoding: QuestionEncoding,
}

impl PreparedQuestion<'_> {
    pub fn train_sample(&self) -> Option<TrainSample<'_>> {
        let answer = AnswerVector::new(self.gold.clone()).ok()?;
        Some(TrainSample {
            id: self.example.id.clone(),
            encoding: self.encoding.clone(),
            topics: self.topics.clone(),
            answer,
            graph: &self.graph,
        })
    }
}

fn resolve(kg: &KnowledgeGraph, labels: &[String]) -> BTreeSet<EntityId> {
    labels.iter().filter_map(|l| kg.entity(l)).collect()
}

/// Resolves topics and answers, loads or restricts the graph and encodes
/// the question. Unknown topic entities are an error; unknown answers are
/// dropped from `gold`.
pub fn prepare_question<'g>(
    ex: &QaExample,
    source: GraphSource<'g>,
    relations: &Vocab,
    encoder: &dyn QuestionEncoder,
    khop: Option<KhopRestriction>,
) -> Result<PreparedQuestion<'g>> {
    let mut graph: Cow<'g, KnowledgeGraph> = match source {
        GraphSource::Shared(kg) => Cow::Borrowed(kg),
        GraphSource::PerQuestion(dir) => {
            let rel = ex
                .subgraph_ref
                .as_ref()
                .ok_or_else(|| Error::Data(format!("question `{}` has no subgraph_ref", ex.id)))?;
            Cow::Owned(load_graph_with_relations(dir.join(rel), relations)?)
        }
    };
    if graph.relations().names() != relations.names() {
        return Err(Error::Data(format!(
            "graph relations differ from the model's ({} vs {})",
            graph.relation_count(),
            relations.len()
        )));
    }
    let topics = resolve(&graph, &ex.topic_entities);
    if topics.len() != ex.topic_entities.len() {
        let missing: Vec<&str> = ex
            .topic_entities
            .iter()
            .filter(|l| graph.entity(l).is_none())
            .map(String::as_str)
            .collect();
        return Err(Error::Data(format!(
            "question `{}`: unknown topic entities {missing:?}",
            ex.id
        )));
    }
    if let Some(k) = khop {
        graph = Cow::Owned(khop_subgraph(&graph, &topics, k.hops, k.bidirectional)?);
    }
    let topics = resolve(&graph, &ex.topic_entities);
    let gold = resolve(&graph, &ex.answers);
    let encoding = encoder.encode(&ex.id, &ex.question)?;
    Ok(PreparedQuestion {
        example: ex.clone(),
        graph,
        topics,
        gold,
        encoding,
    })
}

/// Prepares every question, failing on the first error.
pub fn prepare_all<'g>(
    dataset: &[QaExample],
    source: GraphSource<'g>,
    relations: &Vocab,
    encoder: &dyn QuestionEncoder,
    khop: Option<KhopRestriction>,
) -> Result<Vec<PreparedQuestion<'g>>> {
    dataset
        .iter()
        .map(|ex| prepare_question(ex, source, relations, encoder, khop))
        .collect()
}

/// Everything produced for one question on the way to an answer.
#[derive(Debug, Clone)]
pub struct QuestionRun {
    pub trace: ReasoningTrace,
    pub paths: Vec<String>,
    pub prompt: crate::prompt::RenderedPrompt,
    pub completion: Option<String>,
    pub row: QuestionRow,
}

/// Runs the model and path extraction, renders the prompt and queries the
/// client. Client failures end up in the row rather than the result.
pub fn run_question(
    q: &PreparedQuestion<'_>,
    ckpt: &Checkpoint,
    cfg: &PipelineConfig,
    client: &LlmClient,
) -> Result<QuestionRun> {
    let opts = cfg.options(ckpt);
    let trace = forward(&q.encoding, &q.topics, &q.graph, &ckpt.params, &opts)?;
    let report = generate_paths(&trace, &q.topics, &q.graph, &cfg.paths);
    let paths = report
        .selected
        .iter()
        .map(|p| serialize_path(p, &q.graph))
        .collect::<Result<Vec<_>>>()?;
    let prompt = build_prompt(&q.example.question, &paths, &cfg.exemplars, cfg.fewshot)?;

    let path_hit = report
        .selected
        .iter()
        .any(|p| q.gold.contains(&p.terminal()));
    let top_path_hit = report
        .selected
        .first()
        .is_some_and(|p| q.gold.contains(&p.terminal()));
    let mut row = QuestionRow {
        id: q.example.id.clone(),
        gold_hops: q.example.gold_hops,
        predicted_hops: Some(trace.hop.hops),
        paths: paths.len(),
        path_hit,
        top_path_hit,
        correct: false,
        hit_at_1: false,
        answers: Vec::new(),
        error: None,
    };
    let completion = match client.complete(&prompt) {
        Ok(text) => {
            let parsed = parse_answer(&text);
            let accepted = cfg.accepted(&q.example.answers);
            row.correct = parsed.answers.iter().any(|a| accepted.contains(a));
            row.hit_at_1 = parsed.answers.first().is_some_and(|a| accepted.contains(a));
            row.answers = parsed.answers;
            Some(text)
        }
        Err(e) => {
            log::warn!("question {}: {e}", q.example.id);
            row.error = Some(e.to_string());
            None
        }
    };
    Ok(QuestionRun {
        trace,
        paths,
        prompt,
        completion,
        row,
    })
}

/// Evaluates every question of `dataset`. Setup problems (client config,
/// encoder, relation mismatch) are errors; per-question failures are
/// recorded in the rows.
pub fn evaluate(
    ckpt: &Checkpoint,
    dataset: &[QaExample],
    source: GraphSource<'_>,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if let GraphSource::Shared(kg) = source {
        ckpt.check_relations(kg.relations())?;
    }
    let encoder = cfg.encoder(ckpt)?;
    let client = LlmClient::new(cfg.client.clone())?;
    let mut rows = Vec::with_capacity(dataset.len());
    for ex in dataset {
        let row = prepare_question(ex, source, &ckpt.relations, encoder.as_ref(), cfg.khop)
            .and_then(|q| run_question(&q, ckpt, cfg, &client))
            .map(|run| run.row)
            .unwrap_or_else(|e| {
                log::warn!("question {}: {e}", ex.id);
                QuestionRow::failed(&ex.id, ex.gold_hops, e.to_string())
            });
        rows.push(row);
    }
    Ok(EvalReport::from_rows(rows, cfg.snapshot(ckpt)))
}
