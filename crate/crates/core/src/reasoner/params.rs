use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Model dimensions: embedding width `dim`, relation count and step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReasonerShape {
    pub dim: usize,
    pub relations: usize,
    pub steps: usize,
}

impl ReasonerShape {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.relations == 0 || self.steps == 0 {
            return Err(Error::Config(format!("degenerate model shape {self:?}")));
        }
        Ok(())
    }
}

/// Named parameter blocks, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    KgW1,
    KgB1,
    KgW2,
    KgB2,
    AttnW,
    AttnB,
    RelEmbed,
    HopW,
    HopB,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::KgW1,
        ParamGroup::KgB1,
        ParamGroup::KgW2,
        ParamGroup::KgB2,
        ParamGroup::AttnW,
        ParamGroup::AttnB,
        ParamGroup::RelEmbed,
        ParamGroup::HopW,
        ParamGroup::HopB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::KgW1 => "relation_mlp.w1",
            ParamGroup::KgB1 => "relation_mlp.b1",
            ParamGroup::KgW2 => "relation_mlp.w2",
            ParamGroup::KgB2 => "relation_mlp.b2",
            ParamGroup::AttnW => "step_query.w",
            ParamGroup::AttnB => "step_query.b",
            ParamGroup::RelEmbed => "relation_embedding",
            ParamGroup::HopW => "hop_head.w",
            ParamGroup::HopB => "hop_head.b",
        }
    }

    pub fn len(self, s: &ReasonerShape) -> usize {
        let (d, m, t) = (s.dim, s.relations, s.steps);
        match self {
            ParamGroup::KgW1 => d * d,
            ParamGroup::KgB1 => d,
            ParamGroup::KgW2 => m * d,
            ParamGroup::KgB2 => m,
            ParamGroup::AttnW => t * d * 2 * d,
            ParamGroup::AttnB => t * d,
            ParamGroup::RelEmbed => m * d,
            ParamGroup::HopW => t * (d + m),
            ParamGroup::HopB => t,
        }
    }
}

/// Reasoner weights. Matrices are row-major.
///
/// * relation MLP: `d -> d` (tanh) `-> m`, followed by a sigmoid
/// * step query: one `2d -> d` affine map per step, applied to
///   `[pooled question, relation context]`
/// * relation embedding: `m x d`, averaged into the relation context
/// * hop head: `(d + m) -> T`, applied to `[pooled question, mask]`
#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerParams {
    pub shape: ReasonerShape,
    pub kg_w1: Vec<f64>,
    pub kg_b1: Vec<f64>,
    pub kg_w2: Vec<f64>,
    pub kg_b2: Vec<f64>,
    pub attn_w: Vec<f64>,
    pub attn_b: Vec<f64>,
    pub rel_embed: Vec<f64>,
    pub hop_w: Vec<f64>,
    pub hop_b: Vec<f64>,
}

impl ReasonerParams {
    pub fn zeros(shape: ReasonerShape) -> Self {
        let z = |g: ParamGroup| vec![0.0; g.len(&shape)];
        Self {
            shape,
            kg_w1: z(ParamGroup::KgW1),
            kg_b1: z(ParamGroup::KgB1),
            kg_w2: z(ParamGroup::KgW2),
            kg_b2: z(ParamGroup::KgB2),
            attn_w: z(ParamGroup::AttnW),
            attn_b: z(ParamGroup::AttnB),
            rel_embed: z(ParamGroup::RelEmbed),
            hop_w: z(ParamGroup::HopW),
            hop_b: z(ParamGroup::HopB),
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases,
    /// small relation embeddings.
    pub fn init(shape: ReasonerShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(shape);
        let (d, m) = (shape.dim as f64, shape.relations as f64);
        let mut fill = |v: &mut [f64], scale: f64| {
            for x in v.iter_mut() {
                *x = rng.random_range(-scale..=scale);
            }
        };
        fill(&mut p.kg_w1, 1.0 / d.sqrt());
        fill(&mut p.kg_w2, 1.0 / d.sqrt());
        fill(&mut p.attn_w, 1.0 / (2.0 * d).sqrt());
        fill(&mut p.rel_embed, 0.5);
        fill(&mut p.hop_w, 1.0 / (d + m).sqrt());
        Ok(p)
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::KgW1 => &self.kg_w1,
            ParamGroup::KgB1 => &self.kg_b1,
            ParamGroup::KgW2 => &self.kg_w2,
            ParamGroup::KgB2 => &self.kg_b2,
            ParamGroup::AttnW => &self.attn_w,
            ParamGroup::AttnB => &self.attn_b,
            ParamGroup::RelEmbed => &self.rel_embed,
            ParamGroup::HopW => &self.hop_w,
            ParamGroup::HopB => &self.hop_b,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        match g {
            ParamGroup::KgW1 => &mut self.kg_w1,
            ParamGroup::KgB1 => &mut self.kg_b1,
            ParamGroup::KgW2 => &mut self.kg_w2,
            ParamGroup::KgB2 => &mut self.kg_b2,
            ParamGroup::AttnW => &mut self.attn_w,
            ParamGroup::AttnB => &mut self.attn_b,
            ParamGroup::RelEmbed => &mut self.rel_embed,
            ParamGroup::HopW => &mut self.hop_w,
            ParamGroup::HopB => &mut self.hop_b,
        }
    }

    pub fn param_count(&self) -> usize {
        ParamGroup::ALL.iter().map(|&g| g.len(&self.shape)).sum()
    }

    /// Checks block sizes against the shape and that every value is finite.
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        for g in ParamGroup::ALL {
            let v = self.group(g);
            if v.len() != g.len(&self.shape) {
                return Err(Error::Shape(format!(
                    "{} has {} values, expected {}",
                    g.name(),
                    v.len(),
                    g.len(&self.shape)
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("{} has a non-finite value", g.name())));
            }
        }
        Ok(())
    }

    /// Rows of the step-`t` query map (0-based step).
    pub(crate) fn attn_w_step(&self, t: usize) -> &[f64] {
        let block = 2 * self.shape.dim * self.shape.dim;
        &self.attn_w[t * block..(t + 1) * block]
    }

    pub(crate) fn attn_b_step(&self, t: usize) -> &[f64] {
        let d = self.shape.dim;
        &self.attn_b[t * d..(t + 1) * d]
    }

    pub(crate) fn rel_row(&self, k: usize) -> &[f64] {
        let d = self.shape.dim;
        &self.rel_embed[k * d..(k + 1) * d]
    }
}
