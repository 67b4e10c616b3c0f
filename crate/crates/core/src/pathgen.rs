//! Reasoning-path extraction from a forward trace.
//!
//! Paths grow one hop per reasoning step from the topic entities. A hop at
//! step `t` may only use a triple whose relation was active at that step and
//! whose subject still carried probability before the step. Paths that land
//! on one of the top-K final entities become candidates; the best `N`
//! candidates per entity are kept.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use crate::error::{Error, Result};
use crate::kg::{EntityId, EntityState, KnowledgeGraph, RelationId};
use crate::reasoner::{ReasoningTrace, MASK_THRESHOLD};

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningPath {
    entities: Vec<EntityId>,
    relations: Vec<RelationId>,
    step_scores: Vec<f64>,
    score: f64,
}

impl ReasoningPath {
    /// `entities` must be one longer than `relations`, with at least one hop.
    pub fn new(
        entities: Vec<EntityId>,
        relations: Vec<RelationId>,
        step_scores: Vec<f64>,
    ) -> Result<Self> {
        if relations.is_empty() {
            return Err(Error::Data(
                "a reasoning path needs at least one hop".into(),
            ));
        }
        if entities.len() != relations.len() + 1 || step_scores.len() != relations.len() {
            return Err(Error::Shape(
                "path entity/relation/score lengths disagree".into(),
            ));
        }
        let score = step_scores.iter().sum::<f64>() / step_scores.len() as f64;
        Ok(Self {
            entities,
            relations,
            step_scores,
            score,
        })
    }

    pub fn entities(&self) -> &[EntityId] {
        &self.entities
    }

    pub fn relations(&self) -> &[RelationId] {
        &self.relations
    }

    pub fn step_scores(&self) -> &[f64] {
        &self.step_scores
    }

    pub fn hop_count(&self) -> usize {
        self.relations.len()
    }

    /// Mean of the per-hop relation scores.
    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn source(&self) -> EntityId {
        self.entities[0]
    }

    pub fn terminal(&self) -> EntityId {
        *self.entities.last().expect("nonempty")
    }

    /// True when every hop is a stored triple.
    pub fn is_valid_in(&self, kg: &KnowledgeGraph) -> bool {
        self.relations.iter().enumerate().all(|(i, &r)| {
            let (s, o) = (self.entities[i], self.entities[i + 1]);
            s.index() < kg.entity_count()
                && kg.outgoing(s).iter().any(|&j| {
                    let t = kg.triple(j);
                    t.relation == r && t.object == o
                })
        })
    }

    fn key(&self) -> (Vec<EntityId>, Vec<RelationId>) {
        (self.entities.clone(), self.relations.clone())
    }

    fn extend(&self, r: RelationId, o: EntityId, step_score: f64) -> Self {
        let mut entities = self.entities.clone();
        entities.push(o);
        let mut relations = self.relations.clone();
        relations.push(r);
        let mut step_scores = self.step_scores.clone();
        step_scores.push(step_score);
        let score = step_scores.iter().sum::<f64>() / step_scores.len() as f64;
        Self {
            entities,
            relations,
            step_scores,
            score,
        }
    }
}

/// Total order used for beams and per-entity selection: higher score first,
/// then fewer hops, then lexicographic relation ids, then entity ids.
pub fn path_order(a: &ReasoningPath, b: &ReasoningPath) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.hop_count().cmp(&b.hop_count()))
        .then_with(|| a.relations.cmp(&b.relations))
        .then_with(|| a.entities.cmp(&b.entities))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    /// Number of candidate answer entities.
    pub top_k: usize,
    /// Paths kept per candidate entity.
    pub per_entity: usize,
    /// Intermediate paths kept per step; `None` keeps all of them.
    pub beam: Option<usize>,
    /// A relation is usable at a step when its filtered score exceeds this.
    pub threshold: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            per_entity: 1,
            beam: Some(1000),
            threshold: MASK_THRESHOLD,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.per_entity == 0 {
            return Err(Error::Config("K and N must be at least 1".into()));
        }
        if let Some(b) = self.beam {
            if b < self.top_k {
                return Err(Error::Config(format!(
                    "beam {b} smaller than K = {}",
                    self.top_k
                )));
            }
        }
        Ok(())
    }
}

/// Highest-scoring entities, ties to the smaller id; zero scores never appear.
pub fn top_k_entities(state: &EntityState, k: usize) -> Vec<(EntityId, f64)> {
    let mut all: Vec<(EntityId, f64)> = state.iter().filter(|&(_, s)| s > 0.0).collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Grows paths for `t = 1..=H` (H from the trace's hop selector) and returns
/// every distinct path that ends in a top-K entity, in discovery order.
pub fn enumerate_paths(
    trace: &ReasoningTrace,
    topics: &BTreeSet<EntityId>,
    kg: &KnowledgeGraph,
    cfg: &PathConfig,
) -> Vec<ReasoningPath> {
    let top: HashSet<EntityId> = top_k_entities(&trace.final_state, cfg.top_k)
        .into_iter()
        .map(|(e, _)| e)
        .collect();
    let mut candidates = Vec::new();
    let mut seen = HashSet::new();
    if top.is_empty() {
        return candidates;
    }

    // Zero-hop seeds: one per topic entity.
    let mut frontier: Vec<ReasoningPath> = topics
        .iter()
        .map(|&e| ReasoningPath {
            entities: vec![e],
            relations: Vec::new(),
            step_scores: Vec::new(),
            score: 0.0,
        })
        .collect();

    let hops = trace.hop.hops.min(trace.steps.len());
    for t in 0..hops {
        let scores = &trace.steps[t].filtered_scores;
        let before = trace.state_before(t);
        let mut next = Vec::new();
        for path in &frontier {
            let u = path.terminal();
            if before.get(u) <= 0.0 {
                continue;
            }
            for &j in kg.outgoing(u) {
                let tr = kg.triple(j);
                let w = scores[tr.relation.index()];
                if w > cfg.threshold {
                    next.push(path.extend(tr.relation, tr.object, w));
                }
            }
        }
        for p in &next {
            if top.contains(&p.terminal()) && seen.insert(p.key()) {
                candidates.push(p.clone());
            }
        }
        if let Some(b) = cfg.beam {
            if next.len() > b {
                next.sort_by(path_order);
                next.truncate(b);
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    candidates
}

/// Best `n` candidates for each top-K entity, grouped in entity rank order.
pub fn select_paths(
    candidates: &[ReasoningPath],
    topk: &[(EntityId, f64)],
    n: usize,
) -> Vec<ReasoningPath> {
    let mut by_entity: BTreeMap<EntityId, Vec<&ReasoningPath>> = BTreeMap::new();
    for p in candidates {
        by_entity.entry(p.terminal()).or_default().push(p);
    }
    let mut out = Vec::new();
    for (e, _) in topk {
        if let Some(list) = by_entity.get_mut(e) {
            list.sort_by(|a, b| path_order(a, b));
            out.extend(list.iter().take(n).map(|&p| p.clone()));
        }
    }
    out
}

/// Everything path generation produced for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct PathReport {
    pub top_k: Vec<(EntityId, f64)>,
    pub candidates: Vec<ReasoningPath>,
    pub selected: Vec<ReasoningPath>,
    /// Top-K entities for which no path survived.
    pub unreached: Vec<EntityId>,
}

pub fn generate_paths(
    trace: &ReasoningTrace,
    topics: &BTreeSet<EntityId>,
    kg: &KnowledgeGraph,
    cfg: &PathConfig,
) -> PathReport {
    let top_k = top_k_entities(&trace.final_state, cfg.top_k);
    let candidates = enumerate_paths(trace, topics, kg, cfg);
    let selected = select_paths(&candidates, &top_k, cfg.per_entity);
    let reached: HashSet<EntityId> = candidates.iter().map(ReasoningPath::terminal).collect();
    let unreached = top_k
        .iter()
        .map(|&(e, _)| e)
        .filter(|e| !reached.contains(e))
        .collect();
    PathReport {
        top_k,
        candidates,
        selected,
        unreached,
    }
}

/// Writes the tab-separated path dump: question id, 1-based rank, score with
/// nine decimals, then the label sequence joined by ` -> `.
pub fn write_path_dump(
    w: &mut impl Write,
    question_id: &str,
    paths: &[ReasoningPath],
    kg: &KnowledgeGraph,
) -> Result<()> {
    for (rank, p) in paths.iter().enumerate() {
        let text = crate::prompt::serialize_path(p, kg)?;
        writeln!(w, "{question_id}\t{}\t{:.9}\t{text}", rank + 1, p.score())
            .map_err(|e| Error::io("<path dump>", e))?;
    }
    Ok(())
}
