//! Random instances and reference implementations shared by the
//! integration tests. The references are written against dense arrays and
//! plain recursion so they share no code paths with the library.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use hopwise::encoder::QuestionEncoding;
use hopwise::kg::AnswerVector;
use hopwise::kg::{EntityId, KnowledgeGraph, Vocab};
use hopwise::reasoner::{
    loss_and_grad, ParamGroup, ReasonerParams, ReasonerShape, ReasoningOptions, ReasoningTrace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub kg: KnowledgeGraph,
    pub topics: BTreeSet<EntityId>,
    pub answer: BTreeSet<EntityId>,
    pub enc: QuestionEncoding,
    pub params: ReasonerParams,
}

pub struct InstanceSpec {
    pub max_entities: usize,
    pub max_relations: usize,
    pub max_steps: usize,
    pub max_dim: usize,
    /// Average out-degree.
    pub degree: f64,
    /// Probability that a relation's output bias is pushed far negative,
    /// driving its score under the mask threshold.
    pub dead_relation_p: f64,
    /// Scale applied to the initial output biases.
    pub bias_scale: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            max_entities: 50,
            max_relations: 10,
            max_steps: 3,
            max_dim: 16,
            degree: 2.0,
            dead_relation_p: 0.15,
            bias_scale: 2.0,
        }
    }
}

pub fn random_encoding(rng: &mut ChaCha8Rng, d: usize) -> QuestionEncoding {
    let tokens = rng.random_range(1..=6);
    let hidden: Vec<Vec<f64>> = (0..tokens)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let pooled = (0..d)
        .map(|j| hidden.iter().map(|h| h[j]).sum::<f64>() / tokens as f64)
        .collect();
    QuestionEncoding {
        pooled,
        hidden,
        tokens: (0..tokens).map(|i| format!("t{i}")).collect(),
    }
}

pub fn random_instance(seed: u64, spec: &InstanceSpec) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=spec.max_entities);
    let m = rng.random_range(1..=spec.max_relations);
    let steps = rng.random_range(1..=spec.max_steps);
    let d = rng.random_range(2..=spec.max_dim);

    let names: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
    let rels: Vec<String> = (0..m).map(|k| format!("r{k}")).collect();
    let edges = ((n as f64 * spec.degree).round() as usize).max(1);
    let mut triples = Vec::with_capacity(edges);
    for _ in 0..edges {
        let s = rng.random_range(0..n);
        let o = rng.random_range(0..n);
        let r = rng.random_range(0..m);
        triples.push((names[s].as_str(), rels[r].as_str(), names[o].as_str()));
    }
    let vocab = Vocab::from_names(rels.iter()).unwrap();
    let kg = KnowledgeGraph::from_labels_with_relations(triples, &vocab).unwrap();
    let count = kg.entity_count();

    let mut topics = BTreeSet::new();
    for _ in 0..rng.random_range(1..=2) {
        topics.insert(EntityId(rng.random_range(0..count) as u32));
    }
    let mut answer = BTreeSet::new();
    for _ in 0..rng.random_range(1..=3) {
        answer.insert(EntityId(rng.random_range(0..count) as u32));
    }

    let shape = ReasonerShape {
        dim: d,
        relations: m,
        steps,
    };
    let mut params = ReasonerParams::init(shape, rng.random()).unwrap();
    for b in params.kg_b2.iter_mut() {
        *b = if rng.random_bool(spec.dead_relation_p) {
            -30.0
        } else {
            rng.random_range(-spec.bias_scale..spec.bias_scale)
        };
    }
    for b in params
        .kg_b1
        .iter_mut()
        .chain(params.attn_b.iter_mut())
        .chain(params.hop_b.iter_mut())
    {
        *b = rng.random_range(-0.5..0.5);
    }
    let enc = random_encoding(&mut rng, d);
    Instance {
        kg,
        topics,
        answer,
        enc,
        params,
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `W x + b` with `W` stored row-major as `rows x x.len()`.
fn matvec(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..b.len())
        .map(|i| b[i] + (0..cols).map(|j| w[i * cols + j] * x[j]).sum::<f64>())
        .collect()
}

pub struct DenseRun {
    /// `states[t]` is the entity vector after step `t + 1`.
    pub states: Vec<Vec<f64>>,
    pub raw: Vec<Vec<f64>>,
    pub step_masks: Vec<Vec<bool>>,
    pub filtered: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    pub probs: Vec<f64>,
    pub hops: usize,
    pub final_state: Vec<f64>,
}

/// Dense reference forward pass: full n x n transition matrices and the
/// relation mask recomputed by scanning every triple.
pub fn dense_forward(
    enc: &QuestionEncoding,
    topics: &BTreeSet<EntityId>,
    kg: &KnowledgeGraph,
    p: &ReasonerParams,
    opts: &ReasoningOptions,
) -> DenseRun {
    let ReasonerShape {
        dim: d,
        relations: m,
        steps,
    } = p.shape;
    let n = kg.entity_count();
    let mut e = vec![0.0; n];
    for t in topics {
        e[t.0 as usize] = 1.0;
    }
    let mut ctx = vec![0.0; d];
    let mut mask = vec![false; m];
    let mut out = DenseRun {
        states: Vec::new(),
        raw: Vec::new(),
        step_masks: Vec::new(),
        filtered: Vec::new(),
        mask: Vec::new(),
        probs: Vec::new(),
        hops: 0,
        final_state: Vec::new(),
    };
    for t in 0..steps {
        let x: Vec<f64> = enc.pooled.iter().chain(&ctx).copied().collect();
        let w = &p.attn_w[t * d * 2 * d..(t + 1) * d * 2 * d];
        let query = matvec(w, &p.attn_b[t * d..(t + 1) * d], &x);
        let logits: Vec<f64> = enc
            .hidden
            .iter()
            .map(|h| h.iter().zip(&query).map(|(a, b)| a * b).sum())
            .collect();
        let att = softmax(&logits);
        let q: Vec<f64> = (0..d)
            .map(|j| enc.hidden.iter().zip(&att).map(|(h, a)| a * h[j]).sum())
            .collect();
        let hidden: Vec<f64> = matvec(&p.kg_w1, &p.kg_b1, &q)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let raw: Vec<f64> = matvec(&p.kg_w2, &p.kg_b2, &hidden)
            .into_iter()
            .map(sig)
            .collect();

        let mut step_mask = vec![false; m];
        for tr in kg.triples() {
            if e[tr.subject.0 as usize] * raw[tr.relation.0 as usize] > 0.0 {
                step_mask[tr.relation.0 as usize] = true;
            }
        }
        let filtered: Vec<f64> = if opts.mask_off {
            raw.clone()
        } else {
            (0..m)
                .map(|k| if step_mask[k] { raw[k] } else { 0.0 })
                .collect()
        };

        let mut trans = vec![vec![0.0; n]; n];
        for tr in kg.triples() {
            trans[tr.subject.0 as usize][tr.object.0 as usize] += filtered[tr.relation.0 as usize];
        }
        let next: Vec<f64> = (0..n)
            .map(|o| {
                let s: f64 = (0..n).map(|s| e[s] * trans[s][o]).sum();
                s.clamp(0.0, opts.clamp)
            })
            .collect();

        let total: f64 = filtered.iter().sum();
        ctx = (0..d)
            .map(|j| {
                (0..m)
                    .map(|k| filtered[k] * p.rel_embed[k * d + j])
                    .sum::<f64>()
                    / total.max(1e-12)
            })
            .collect();
        for k in 0..m {
            mask[k] |= filtered[k] > opts.mask_threshold;
        }
        e = next.clone();
        out.states.push(next);
        out.raw.push(raw);
        out.step_masks.push(step_mask);
        out.filtered.push(filtered);
    }
    let hop_in: Vec<f64> = enc
        .pooled
        .iter()
        .copied()
        .chain(
            mask.iter()
                .map(|&b| if b && !opts.mask_off { 1.0 } else { 0.0 }),
        )
        .collect();
    let probs = softmax(&matvec(&p.hop_w, &p.hop_b, &hop_in));
    let mut hops = 0;
    for (i, &c) in probs.iter().enumerate() {
        if c > probs[hops] {
            hops = i;
        }
    }
    let ceiling = opts.clamp.max(1.0);
    let final_state = (0..n)
        .map(|i| {
            let v: f64 = out.states.iter().zip(&probs).map(|(s, c)| c * s[i]).sum();
            v.clamp(0.0, ceiling)
        })
        .collect();
    out.mask = mask;
    out.probs = probs;
    out.hops = hops + 1;
    out.final_state = final_state;
    out
}

/// Largest coordinate difference between the library trace and the dense
/// run, over every step state and the final mixture.
pub fn max_state_gap(trace: &ReasoningTrace, dense: &DenseRun, n: usize) -> f64 {
    let mut gap: f64 = 0.0;
    for (step, want) in trace.steps.iter().zip(&dense.states) {
        for (a, b) in step.entity_state.to_dense(n).iter().zip(want) {
            gap = gap.max((a - b).abs());
        }
    }
    for (a, b) in trace.final_state.to_dense(n).iter().zip(&dense.final_state) {
        gap = gap.max((a - b).abs());
    }
    gap
}

pub type PathKey = (Vec<EntityId>, Vec<u32>);

/// Every path of 1..=H hops from a topic that uses, at step t, only
/// triples whose relation is above `threshold` in the step's filtered scores
/// and whose subject is active before the step, and that ends in a top-K
/// entity.
pub fn dfs_paths(
    trace: &ReasoningTrace,
    topics: &BTreeSet<EntityId>,
    kg: &KnowledgeGraph,
    top_k: usize,
    threshold: f64,
) -> HashSet<PathKey> {
    let mut ranked: Vec<(EntityId, f64)> =
        trace.final_state.iter().filter(|&(_, s)| s > 0.0).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let top: HashSet<EntityId> = ranked.iter().take(top_k).map(|&(e, _)| e).collect();

    let hops = trace.hop.hops.min(trace.steps.len());
    let mut found = HashSet::new();
    fn walk(
        trace: &ReasoningTrace,
        kg: &KnowledgeGraph,
        top: &HashSet<EntityId>,
        threshold: f64,
        hops: usize,
        ents: &mut Vec<EntityId>,
        rels: &mut Vec<u32>,
        found: &mut HashSet<PathKey>,
    ) {
        let t = rels.len();
        if t > 0 && top.contains(ents.last().unwrap()) {
            found.insert((ents.clone(), rels.clone()));
        }
        if t == hops {
            return;
        }
        let u = *ents.last().unwrap();
        let before = if t == 0 {
            &trace.initial
        } else {
            &trace.steps[t - 1].entity_state
        };
        if before.get(u) <= 0.0 {
            return;
        }
        for tr in kg.triples().iter().filter(|tr| tr.subject == u) {
            if trace.steps[t].filtered_scores[tr.relation.0 as usize] > threshold {
                ents.push(tr.object);
                rels.push(tr.relation.0);
                walk(trace, kg, top, threshold, hops, ents, rels, found);
                ents.pop();
                rels.pop();
            }
        }
    }
    for &s in topics {
        walk(
            trace,
            kg,
            &top,
            threshold,
            hops,
            &mut vec![s],
            &mut Vec::new(),
            &mut found,
        );
    }
    found
}

/// Per-group relative error `|a - n| / max(|a|, |n|, floor)` between the
/// analytic gradient and central differences.
pub fn gradient_errors(inst: &Instance, opts: &ReasoningOptions, h: f64) -> Vec<(ParamGroup, f64)> {
    let answer = AnswerVector::new(inst.answer.clone()).unwrap();
    let (_, grad, _) = loss_and_grad(
        &inst.enc,
        &inst.topics,
        &inst.kg,
        &answer,
        &inst.params,
        opts,
    )
    .unwrap();
    let eval = |p: &ReasonerParams| {
        let trace = hopwise::reasoner::forward(&inst.enc, &inst.topics, &inst.kg, p, opts).unwrap();
        hopwise::reasoner::loss(&trace.final_state, &answer)
    };
    let mut out = Vec::new();
    for g in ParamGroup::ALL {
        let analytic = grad.group(g).to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        let mut p = inst.params.clone();
        for i in 0..analytic.len() {
            let orig = p.group(g)[i];
            p.group_mut(g)[i] = orig + h;
            let up = eval(&p);
            p.group_mut(g)[i] = orig - h;
            let down = eval(&p);
            p.group_mut(g)[i] = orig;
            numeric[i] = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let denom = norm(&analytic).max(norm(&numeric)).max(1e-8);
        out.push((g, norm(&diff) / denom));
    }
    out
}

/// True when every pre-clamp entity score is at least `margin` away from
/// the clamp ceiling and no filtered score sits within a factor
/// `1 +- margin` of the mask threshold.
pub fn away_from_kinks(trace: &ReasoningTrace, opts: &ReasoningOptions, margin: f64) -> bool {
    trace.steps.iter().all(|s| {
        s.pre_clamp
            .values()
            .all(|&v| (v - opts.clamp).abs() > margin)
            && s.filtered_scores
                .iter()
                .all(|&f| f == 0.0 || (f / opts.mask_threshold).ln().abs() > margin.ln_1p())
    })
}
