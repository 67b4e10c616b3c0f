//! Trainable stepwise graph reasoner.
//!
//! One reasoning step attends over the question tokens, scores every
//! relation, keeps only relations that can actually carry probability from
//! the current entity state, diffuses the state along the kept triples and
//! summarises the kept relations into a context vector for the next step.
//! After the last step a softmax head picks the hop count from the pooled
//! question and the set of relations that were ever active, and the final
//! entity scores are the hop-weighted mixture of the step states.

mod backward;
pub mod checkpoint;
mod forward;
mod params;
pub mod train;

pub use backward::{loss_and_grad, Gradient};
pub use forward::{
    forward, loss, masked_step, propagate, relation_context, relation_scores, select_hops,
    step_attention, HopDistribution, MaskedStep, ReasoningTrace, RelationMask, StepAttention,
    StepTrace, TripleFlow,
};
pub use params::{ParamGroup, ReasonerParams, ReasonerShape};

/// Activation threshold used when accumulating the relation mask.
pub const MASK_THRESHOLD: f64 = 1e-6;

/// Denominator floor of the relation-context average.
pub const REL_CTX_EPS: f64 = 1e-12;

/// Knobs that change forward semantics without changing parameter shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReasoningOptions {
    /// Filtered scores above this mark a relation as active.
    pub mask_threshold: f64,
    /// Upper clamp applied to entity scores after each propagation.
    pub clamp: f64,
    /// Ablation: use raw relation scores everywhere and hide the mask from
    /// the hop selector.
    pub mask_off: bool,
}

impl Default for ReasoningOptions {
    fn default() -> Self {
        Self {
            mask_threshold: MASK_THRESHOLD,
            clamp: 1.0,
            mask_off: false,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `out = W x + b` with `W` row-major `rows x cols`.
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    debug_assert_eq!(w.len(), b.len() * cols);
    b.iter()
        .enumerate()
        .map(|(r, &bias)| bias + dot(&w[r * cols..(r + 1) * cols], x))
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
