use std::collections::{BTreeMap, BTreeSet};

use super::{affine, dot, sigmoid, softmax, ReasonerParams, ReasoningOptions, REL_CTX_EPS};
use crate::encoder::QuestionEncoding;
use crate::error::{Error, Result};
use crate::kg::{one_hot, AnswerVector, EntityId, EntityState, KnowledgeGraph};

/// Output of the stepwise question attention.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepAttention {
    /// `[pooled question, relation context]`.
    pub query_input: Vec<f64>,
    /// Attention query.
    pub query: Vec<f64>,
    /// Softmax weights over tokens.
    pub weights: Vec<f64>,
    /// Attended question vector.
    pub q_t: Vec<f64>,
}

/// Flow through one triple whose subject carries probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleFlow {
    pub triple: usize,
    pub sub_p: f64,
    pub rel_p: f64,
    pub obj_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedStep {
    pub step_mask: Vec<bool>,
    pub filtered: Vec<f64>,
    /// Triples with positive subject probability, in triple order. Triples
    /// not listed have `sub_p = rel_p * sub_p = 0`.
    pub flows: Vec<TripleFlow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub attention: StepAttention,
    /// Hidden layer of the relation MLP (after tanh).
    pub mlp_hidden: Vec<f64>,
    pub raw_scores: Vec<f64>,
    pub step_mask: Vec<bool>,
    pub filtered_scores: Vec<f64>,
    pub flows: Vec<TripleFlow>,
    /// Propagated mass before clamping, for every entity that received any.
    pub pre_clamp: BTreeMap<EntityId, f64>,
    pub entity_state: EntityState,
    /// Sum of filtered scores (denominator of the relation context).
    pub rel_mass: f64,
    pub rel_ctx_out: Vec<f64>,
}

/// Relations that carried probability at any step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationMask {
    pub bits: Vec<bool>,
}

impl RelationMask {
    pub fn zeros(m: usize) -> Self {
        Self {
            bits: vec![false; m],
        }
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(k, _)| k)
    }

    pub fn as_floats(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopDistribution {
    pub logits: Vec<f64>,
    /// Probability of stopping after step `t + 1`.
    pub probs: Vec<f64>,
    /// Selected hop count, 1-based.
    pub hops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningTrace {
    pub initial: EntityState,
    pub steps: Vec<StepTrace>,
    pub mask: RelationMask,
    pub hop: HopDistribution,
    pub final_state: EntityState,
}

impl ReasoningTrace {
    /// Entity state before step `t` (0-based), i.e. e^t in 0-based terms.
    pub fn state_before(&self, t: usize) -> &EntityState {
        if t == 0 {
            &self.initial
        } else {
            &self.steps[t - 1].entity_state
        }
    }
}

/// Attention over question tokens for 0-based step `step`.
pub fn step_attention(
    enc: &QuestionEncoding,
    rel_ctx: &[f64],
    step: usize,
    params: &ReasonerParams,
) -> Result<StepAttention> {
    let d = params.shape.dim;
    if step >= params.shape.steps {
        return Err(Error::Shape(format!(
            "step {step} outside budget {}",
            params.shape.steps
        )));
    }
    if enc.pooled.len() != d || rel_ctx.len() != d || enc.hidden.iter().any(|h| h.len() != d) {
        return Err(Error::Shape(format!(
            "encoding/context width does not match model dimension {d}"
        )));
    }
    if enc.hidden.is_empty() {
        return Err(Error::Shape("encoding has no tokens".into()));
    }
    let mut query_input = Vec::with_capacity(2 * d);
    query_input.extend_from_slice(&enc.pooled);
    query_input.extend_from_slice(rel_ctx);
    let query = affine(
        params.attn_w_step(step),
        params.attn_b_step(step),
        &query_input,
    );
    let logits: Vec<f64> = enc.hidden.iter().map(|h| dot(&query, h)).collect();
    let weights = softmax(&logits);
    let mut q_t = vec![0.0; d];
    for (w, h) in weights.iter().zip(&enc.hidden) {
        for (q, x) in q_t.iter_mut().zip(h) {
            *q += w * x;
        }
    }
    Ok(StepAttention {
        query_input,
        query,
        weights,
        q_t,
    })
}

pub(crate) fn relation_mlp(q_t: &[f64], params: &ReasonerParams) -> (Vec<f64>, Vec<f64>) {
    let hidden: Vec<f64> = affine(&params.kg_w1, &params.kg_b1, q_t)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let scores = affine(&params.kg_w2, &params.kg_b2, &hidden)
        .into_iter()
        .map(sigmoid)
        .collect();
    (hidden, scores)
}

/// Per-relation activation probabilities for the attended question vector.
pub fn relation_scores(q_t: &[f64], params: &ReasonerParams) -> Result<Vec<f64>> {
    if q_t.len() != params.shape.dim {
        return Err(Error::Shape(format!(
            "question vector has width {}, expected {}",
            q_t.len(),
            params.shape.dim
        )));
    }
    Ok(relation_mlp(q_t, params).1)
}

/// Computes per-triple subject/relation/object probabilities and keeps only
/// relations that some triple can push positive mass through.
pub fn masked_step(e_prev: &EntityState, raw_scores: &[f64], kg: &KnowledgeGraph) -> MaskedStep {
    let m = raw_scores.len();
    let mut step_mask = vec![false; m];
    let mut flows = Vec::new();
    for (e, sub_p) in e_prev.iter() {
        for &j in kg.outgoing(e) {
            let k = kg.triple(j).relation.index();
            let rel_p = raw_scores[k];
            let obj_p = sub_p * rel_p;
            if obj_p > 0.0 {
                step_mask[k] = true;
            }
            flows.push(TripleFlow {
                triple: j,
                sub_p,
                rel_p,
                obj_p,
            });
        }
    }
    flows.sort_by_key(|f| f.triple);
    let filtered = raw_scores
        .iter()
        .zip(&step_mask)
        .map(|(&r, &on)| if on { r } else { 0.0 })
        .collect();
    MaskedStep {
        step_mask,
        filtered,
        flows,
    }
}

pub(crate) fn propagate_raw(
    e_prev: &EntityState,
    scores: &[f64],
    kg: &KnowledgeGraph,
) -> BTreeMap<EntityId, f64> {
    let mut mass: BTreeMap<EntityId, f64> = BTreeMap::new();
    for (e, p) in e_prev.iter() {
        for &j in kg.outgoing(e) {
            let t = kg.triple(j);
            let w = scores[t.relation.index()];
            if w != 0.0 {
                *mass.entry(t.object).or_insert(0.0) += p * w;
            }
        }
    }
    mass
}

pub(crate) fn clamp_state(mass: &BTreeMap<EntityId, f64>, ceiling: f64) -> EntityState {
    let mut state = EntityState::new();
    for (&e, &s) in mass {
        state.set(e, s.clamp(0.0, ceiling));
    }
    state
}

/// Diffuses entity scores one hop along triples weighted by relation
/// scores, summing parallel contributions, then clamps to [0, 1].
pub fn propagate(e_prev: &EntityState, scores: &[f64], kg: &KnowledgeGraph) -> EntityState {
    clamp_state(&propagate_raw(e_prev, scores, kg), 1.0)
}

/// Score-weighted mean of relation embeddings, plus the total weight.
pub fn relation_context(filtered: &[f64], params: &ReasonerParams) -> (Vec<f64>, f64) {
    let d = params.shape.dim;
    let mass: f64 = filtered.iter().sum();
    let mut ctx = vec![0.0; d];
    for (k, &w) in filtered.iter().enumerate() {
        if w != 0.0 {
            for (c, e) in ctx.iter_mut().zip(params.rel_row(k)) {
                *c += w * e;
            }
        }
    }
    let denom = mass.max(REL_CTX_EPS);
    ctx.iter_mut().for_each(|c| *c /= denom);
    (ctx, mass)
}

/// Hop-count distribution from `[pooled question, mask]`; ties go to the
/// smaller hop count.
pub fn select_hops(
    pooled: &[f64],
    mask: &[f64],
    params: &ReasonerParams,
) -> Result<HopDistribution> {
    let s = params.shape;
    if pooled.len() != s.dim || mask.len() != s.relations {
        return Err(Error::Shape("hop selector input has wrong width".into()));
    }
    let input: Vec<f64> = pooled.iter().chain(mask).copied().collect();
    let logits = affine(&params.hop_w, &params.hop_b, &input);
    let probs = softmax(&logits);
    Ok(HopDistribution {
        hops: argmax_first(&probs) + 1,
        logits,
        probs,
    })
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Runs every reasoning step and the hop selector.
pub fn forward(
    enc: &QuestionEncoding,
    topics: &BTreeSet<EntityId>,
    kg: &KnowledgeGraph,
    params: &ReasonerParams,
    opts: &ReasoningOptions,
) -> Result<ReasoningTrace> {
    let shape = params.shape;
    if kg.relation_count() != shape.relations {
        return Err(Error::Shape(format!(
            "graph has {} relations, model expects {}",
            kg.relation_count(),
            shape.relations
        )));
    }
    let initial = one_hot(topics, kg.entity_count())?;
    let mut state = initial.clone();
    let mut rel_ctx = vec![0.0; shape.dim];
    let mut mask = RelationMask::zeros(shape.relations);
    let mut steps = Vec::with_capacity(shape.steps);

    for t in 0..shape.steps {
        let attention = step_attention(enc, &rel_ctx, t, params)?;
        let (mlp_hidden, raw_scores) = relation_mlp(&attention.q_t, params);
        let masked = masked_step(&state, &raw_scores, kg);
        let filtered_scores = if opts.mask_off {
            raw_scores.clone()
        } else {
            masked.filtered
        };
        let pre_clamp = propagate_raw(&state, &filtered_scores, kg);
        let next = clamp_state(&pre_clamp, opts.clamp);
        let (ctx, rel_mass) = relation_context(&filtered_scores, params);
        for (bit, &f) in mask.bits.iter_mut().zip(&filtered_scores) {
            *bit |= f > opts.mask_threshold;
        }
        steps.push(StepTrace {
            attention,
            mlp_hidden,
            raw_scores,
            step_mask: masked.step_mask,
            filtered_scores,
            flows: masked.flows,
            pre_clamp,
            entity_state: next.clone(),
            rel_mass,
            rel_ctx_out: ctx.clone(),
        });
        state = next;
        rel_ctx = ctx;
    }

    let hop_mask = if opts.mask_off {
        vec![0.0; shape.relations]
    } else {
        mask.as_floats()
    };
    let hop = select_hops(&enc.pooled, &hop_mask, params)?;
    let final_state = mix_states(&steps, &hop.probs, opts.clamp);
    Ok(ReasoningTrace {
        initial,
        steps,
        mask,
        hop,
        final_state,
    })
}

fn mix_states(steps: &[StepTrace], weights: &[f64], ceiling: f64) -> EntityState {
    let mut acc: BTreeMap<EntityId, f64> = BTreeMap::new();
    for (step, &c) in steps.iter().zip(weights) {
        for (e, s) in step.entity_state.iter() {
            *acc.entry(e).or_insert(0.0) += c * s;
        }
    }
    // The mixture is convex, so only rounding can push it past the ceiling.
    clamp_state(&acc, ceiling.max(1.0))
}

/// Squared L2 distance between final scores and the multi-hot answer.
pub fn loss(final_state: &EntityState, answer: &AnswerVector) -> f64 {
    let mut total = 0.0;
    for (e, s) in final_state.iter() {
        let a = if answer.contains(e) { 1.0 } else { 0.0 };
        total += (s - a) * (s - a);
    }
    for &e in answer.gold() {
        if final_state.get(e) == 0.0 {
            total += 1.0;
        }
    }
    total
}
