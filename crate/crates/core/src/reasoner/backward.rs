//! Reverse-mode gradient of the squared-error loss through a full forward
//! pass. Mask bits are constants, clamped entries pass no gradient, and the
//! encoder is frozen.

use std::collections::{BTreeMap, BTreeSet};

use super::forward::{forward, loss, ReasoningTrace};
use super::{ReasonerParams, ReasoningOptions, REL_CTX_EPS};
use crate::encoder::QuestionEncoding;
use crate::error::Result;
use crate::kg::{AnswerVector, EntityId, KnowledgeGraph};

/// Parameter-shaped gradient.
pub type Gradient = ReasonerParams;

/// `out += g ⊗ x` on a row-major block.
fn outer_add(out: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        for (o, &xc) in out[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *o += gr * xc;
        }
    }
}

/// `W^T g` for row-major `W` with `g.len()` rows.
fn matvec_t(w: &[f64], g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        for (o, &wc) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += gr * wc;
        }
    }
    out
}

fn add_into(out: &mut [f64], g: &[f64]) {
    for (o, x) in out.iter_mut().zip(g) {
        *o += x;
    }
}

/// Loss, gradient with respect to every parameter block, and the trace.
pub fn loss_and_grad(
    enc: &QuestionEncoding,
    topics: &BTreeSet<EntityId>,
    kg: &KnowledgeGraph,
    answer: &AnswerVector,
    params: &ReasonerParams,
    opts: &ReasoningOptions,
) -> Result<(f64, Gradient, ReasoningTrace)> {
    let trace = forward(enc, topics, kg, params, opts)?;
    let value = loss(&trace.final_state, answer);
    let grad = backward(enc, kg, answer, params, opts, &trace);
    Ok((value, grad, trace))
}

fn backward(
    enc: &QuestionEncoding,
    kg: &KnowledgeGraph,
    answer: &AnswerVector,
    params: &ReasonerParams,
    opts: &ReasoningOptions,
    trace: &ReasoningTrace,
) -> Gradient {
    let shape = params.shape;
    let (d, steps) = (shape.dim, shape.steps);
    let mut grad = ReasonerParams::zeros(shape);

    // dL/d(final) over the support of the final state and the answer.
    let mut g_final: BTreeMap<EntityId, f64> = BTreeMap::new();
    for (e, s) in trace.final_state.iter() {
        let a = if answer.contains(e) { 1.0 } else { 0.0 };
        g_final.insert(e, 2.0 * (s - a));
    }
    for &e in answer.gold() {
        g_final.entry(e).or_insert(-2.0);
    }

    // Hop mixture.
    let c = &trace.hop.probs;
    let mut g_state: Vec<BTreeMap<EntityId, f64>> = vec![BTreeMap::new(); steps];
    let mut g_c = vec![0.0; steps];
    for (t, step) in trace.steps.iter().enumerate() {
        for (&e, &g) in &g_final {
            g_c[t] += g * step.entity_state.get(e);
            if step.entity_state.get(e) > 0.0 || step.pre_clamp.contains_key(&e) {
                *g_state[t].entry(e).or_insert(0.0) += c[t] * g;
            }
        }
    }
    let g_dot: f64 = c.iter().zip(&g_c).map(|(a, b)| a * b).sum();
    let g_logits: Vec<f64> = c
        .iter()
        .zip(&g_c)
        .map(|(ct, gt)| ct * (gt - g_dot))
        .collect();
    let hop_mask = if opts.mask_off {
        vec![0.0; shape.relations]
    } else {
        trace.mask.as_floats()
    };
    let hop_input: Vec<f64> = enc.pooled.iter().chain(&hop_mask).copied().collect();
    outer_add(&mut grad.hop_w, &g_logits, &hop_input);
    add_into(&mut grad.hop_b, &g_logits);

    // Steps in reverse; `g_ctx` is the gradient flowing into the relation
    // context produced by step t (consumed by step t + 1).
    let mut g_ctx = vec![0.0; d];
    for t in (0..steps).rev() {
        let step = &trace.steps[t];
        let e_prev = trace.state_before(t);
        let mut g_filtered = vec![0.0; shape.relations];

        // Relation context: ctx = sum_k F_k E_k / max(S, eps).
        let denom = step.rel_mass.max(REL_CTX_EPS);
        if g_ctx.iter().any(|&g| g != 0.0) {
            let normalized = step.rel_mass > REL_CTX_EPS;
            for (k, gf) in g_filtered.iter_mut().enumerate() {
                let row = params.rel_row(k);
                let mut acc = 0.0;
                for i in 0..d {
                    let centred = if normalized {
                        row[i] - step.rel_ctx_out[i]
                    } else {
                        row[i]
                    };
                    acc += g_ctx[i] * centred;
                }
                *gf += acc / denom;
                let f = step.filtered_scores[k];
                if f != 0.0 {
                    let ge = &mut grad.rel_embed[k * d..(k + 1) * d];
                    for i in 0..d {
                        ge[i] += g_ctx[i] * f / denom;
                    }
                }
            }
        }

        // Propagation with clamp.
        let g_mass: BTreeMap<EntityId, f64> = g_state[t]
            .iter()
            .filter_map(|(&e, &g)| {
                let s = step.pre_clamp.get(&e).copied().unwrap_or(0.0);
                (s > 0.0 && s < opts.clamp).then_some((e, g))
            })
            .collect();
        if !g_mass.is_empty() {
            let mut g_prev: BTreeMap<EntityId, f64> = BTreeMap::new();
            for (e, p) in e_prev.iter() {
                for &j in kg.outgoing(e) {
                    let tr = kg.triple(j);
                    let Some(&g) = g_mass.get(&tr.object) else {
                        continue;
                    };
                    let k = tr.relation.index();
                    let f = step.filtered_scores[k];
                    g_filtered[k] += g * p;
                    if t > 0 && f != 0.0 {
                        *g_prev.entry(e).or_insert(0.0) += g * f;
                    }
                }
            }
            if t > 0 {
                for (e, g) in g_prev {
                    *g_state[t - 1].entry(e).or_insert(0.0) += g;
                }
            }
        }

        // Mask (constant) then sigmoid.
        let g_z2: Vec<f64> = (0..shape.relations)
            .map(|k| {
                let passes = opts.mask_off || step.step_mask[k];
                if passes {
                    let r = step.raw_scores[k];
                    g_filtered[k] * r * (1.0 - r)
                } else {
                    0.0
                }
            })
            .collect();

        // Relation MLP.
        let a1 = &step.mlp_hidden;
        outer_add(&mut grad.kg_w2, &g_z2, a1);
        add_into(&mut grad.kg_b2, &g_z2);
        let g_a1 = matvec_t(&params.kg_w2, &g_z2, d);
        let g_z1: Vec<f64> = g_a1
            .iter()
            .zip(a1)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        let q_t = &step.attention.q_t;
        outer_add(&mut grad.kg_w1, &g_z1, q_t);
        add_into(&mut grad.kg_b1, &g_z1);
        let g_qt = matvec_t(&params.kg_w1, &g_z1, d);

        // Attention: q_t = sum_i b_i h_i, b = softmax(Q . h_i).
        let b = &step.attention.weights;
        let g_b: Vec<f64> = enc.hidden.iter().map(|h| super::dot(&g_qt, h)).collect();
        let g_b_dot: f64 = b.iter().zip(&g_b).map(|(x, y)| x * y).sum();
        let g_logit: Vec<f64> = b
            .iter()
            .zip(&g_b)
            .map(|(bi, gi)| bi * (gi - g_b_dot))
            .collect();
        let mut g_query = vec![0.0; d];
        for (gl, h) in g_logit.iter().zip(&enc.hidden) {
            for (gq, x) in g_query.iter_mut().zip(h) {
                *gq += gl * x;
            }
        }
        let block = 2 * d * d;
        outer_add(
            &mut grad.attn_w[t * block..(t + 1) * block],
            &g_query,
            &step.attention.query_input,
        );
        add_into(&mut grad.attn_b[t * d..(t + 1) * d], &g_query);
        let g_input = matvec_t(params.attn_w_step(t), &g_query, 2 * d);
        g_ctx = g_input[d..].to_vec();
    }
    grad
}
