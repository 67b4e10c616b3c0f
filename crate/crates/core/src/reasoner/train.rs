//! Mini-batch training with an adaptive first-order optimizer.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    loss_and_grad, ParamGroup, ReasonerParams, ReasonerShape, ReasoningOptions, MASK_THRESHOLD,
};
use crate::encoder::QuestionEncoding;
use crate::error::{Error, Result};
use crate::kg::{AnswerVector, EntityId, KnowledgeGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Radam,
}

/// Training configuration. Serialized as a flat `key = value` file; missing
/// keys take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Reasoning step budget.
    #[serde(rename = "T")]
    pub steps: usize,
    /// Embedding width (must match the encoder).
    pub d: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Upper clamp on entity scores.
    pub clamp: f64,
    pub mask_threshold: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub mask_off: bool,
    /// Seed of the hash question encoder.
    pub encoder_seed: u64,
    /// Epochs during which the hop selector is held at its initial weights
    /// while the relation scorer learns.
    pub hop_warmup: usize,
}

fn default_clamp() -> f64 {
    1.0
}
fn default_mask_threshold() -> f64 {
    MASK_THRESHOLD
}
fn default_hop_warmup() -> usize {
    20
}
fn default_batch() -> usize {
    16
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Radam
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2,
            d: 64,
            epochs: 60,
            lr: 1e-3,
            seed: 0,
            clamp: default_clamp(),
            mask_threshold: default_mask_threshold(),
            batch_size: default_batch(),
            optimizer: default_optimizer(),
            mask_off: false,
            encoder_seed: 0,
            hop_warmup: default_hop_warmup(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.d == 0 || self.batch_size == 0 {
            return Err(Error::Config("T, d and batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        if !(self.clamp > 0.0 && self.clamp <= 1.0) {
            return Err(Error::Config(format!(
                "clamp must be in (0, 1], got {}",
                self.clamp
            )));
        }
        if self.mask_threshold.is_nan() || self.mask_threshold < 0.0 {
            return Err(Error::Config("mask_threshold must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn options(&self) -> ReasoningOptions {
        ReasoningOptions {
            mask_threshold: self.mask_threshold,
            clamp: self.clamp,
            mask_off: self.mask_off,
        }
    }
}

/// One supervised question.
#[derive(Debug, Clone)]
pub struct TrainSample<'a> {
    pub id: String,
    pub encoding: QuestionEncoding,
    pub topics: BTreeSet<EntityId>,
    pub answer: AnswerVector,
    pub graph: &'a KnowledgeGraph,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ReasonerParams,
    /// Mean per-sample loss of each epoch, measured before that sample's
    /// update batch was applied.
    pub loss_history: Vec<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam / RAdam state over every parameter block.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: ReasonerParams,
    v: ReasonerParams,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, shape: ReasonerShape) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            m: ReasonerParams::zeros(shape),
            v: ReasonerParams::zeros(shape),
        }
    }

    pub fn apply(&mut self, params: &mut ReasonerParams, grad: &ReasonerParams) {
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - BETA1.powf(t);
        let bias2 = 1.0 - BETA2.powf(t);
        // RAdam variance rectification; None means "not yet tractable".
        let rect = match self.kind {
            OptimizerKind::Adam => Some(1.0),
            OptimizerKind::Radam => {
                let rho_inf = 2.0 / (1.0 - BETA2) - 1.0;
                let rho_t = rho_inf - 2.0 * t * BETA2.powf(t) / bias2;
                (rho_t > 5.0).then(|| {
                    ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                        / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                        .sqrt()
                })
            }
        };
        for g in ParamGroup::ALL {
            let grads = grad.group(g);
            let m = self.m.group_mut(g);
            let v = self.v.group_mut(g);
            let p = params.group_mut(g);
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * grads[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * grads[i] * grads[i];
                let m_hat = m[i] / bias1;
                let update = match rect {
                    Some(r) => r * m_hat / ((v[i] / bias2).sqrt() + EPS),
                    None => m_hat,
                };
                p[i] -= self.lr * update;
            }
        }
    }
}

/// Minimizes the mean squared-error loss over `samples`.
///
/// Deterministic for a fixed config: the shuffle uses a seeded ChaCha
/// generator and gradients are summed in sample order.
pub fn train(
    samples: &[TrainSample<'_>],
    relations: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let shape = ReasonerShape {
        dim: cfg.d,
        relations,
        steps: cfg.steps,
    };
    let params = ReasonerParams::init(shape, cfg.seed)?;
    train_from(samples, params, cfg)
}

/// Continues training from `params`.
pub fn train_from(
    samples: &[TrainSample<'_>],
    mut params: ReasonerParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let shape = params.shape;
    let opts = cfg.options();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, shape);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f5a_3b1e);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = ReasonerParams::zeros(shape);
            for &i in batch {
                let s = &samples[i];
                let (value, grad, _) =
                    loss_and_grad(&s.encoding, &s.topics, s.graph, &s.answer, &params, &opts)?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        sample: s.id.clone(),
                        epoch,
                    });
                }
                epoch_loss += value;
                for g in ParamGroup::ALL {
                    for (a, x) in acc.group_mut(g).iter_mut().zip(grad.group(g)) {
                        *a += x;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in ParamGroup::ALL {
                acc.group_mut(g).iter_mut().for_each(|a| *a *= scale);
            }
            if epoch < cfg.hop_warmup {
                acc.hop_w.fill(0.0);
                acc.hop_b.fill(0.0);
            }
            opt.apply(&mut params, &acc);
        }
        let mean = epoch_loss / samples.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        history.push(mean);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}
