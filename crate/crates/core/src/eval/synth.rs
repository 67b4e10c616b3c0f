//! Synthetic family knowledge graphs with controlled hop structure.
//!
//! Every pair is a family of a father `F` and two sons `X`, `Y` linked by
//! `X -father-> F`, `Y -father-> F`, `F -son-> X` and `F -son-> Y`. Direct
//! pairs additionally carry `X -brother-> Y` and `Y -brother-> X`. The
//! question always asks for the brother of `X`, so it is answerable in one
//! hop for direct pairs and only through the two-hop father/son chain
//! otherwise. Extra relation types attach each person to filler entities
//! that have no outgoing edges.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::QaExample;
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

pub const BROTHER: &str = "brother";
pub const FATHER: &str = "father";
pub const SON: &str = "son";

const FILLER_RELATIONS: &[&str] = &[
    "born_in",
    "lives_in",
    "works_at",
    "studied_at",
    "member_of",
    "supports",
    "owns",
];

const TEMPLATES: &[&str] = &[
    "who is the brother of {}?",
    "name the brother of {}.",
    "which person is a brother of {}?",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "ten", "vo", "sa", "del", "ri", "an", "bo", "gu", "fe", "nor", "li",
    "mar", "ze", "tu", "pa", "hel",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Number of families, one question each.
    pub pairs: usize,
    /// Entity budget: three per family, the rest become filler entities.
    pub entities: usize,
    /// Relation types including brother, father and son.
    pub relation_types: usize,
    /// Fraction of families answerable through the direct relation.
    pub direct_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            pairs: 600,
            entities: 2000,
            relation_types: 5,
            direct_fraction: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("infeasible synthetic spec: {m}")));
        if self.pairs == 0 {
            return bad("pairs must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.direct_fraction) {
            return bad(format!(
                "direct_fraction {} outside [0, 1]",
                self.direct_fraction
            ));
        }
        if self.relation_types < 3 {
            return bad("need at least 3 relation types".into());
        }
        let fillers = FILLER_RELATIONS.len() + 3;
        if self.relation_types > fillers {
            return bad(format!("at most {fillers} relation types are supported"));
        }
        let people = self.pairs.saturating_mul(3);
        if people > self.entities {
            return bad(format!(
                "{} pairs need {people} entities, budget is {}",
                self.pairs, self.entities
            ));
        }
        if self.relation_types > 3 && people == self.entities {
            return bad("extra relation types need filler entities".into());
        }
        Ok(())
    }

    pub fn direct_count(&self) -> usize {
        (self.pairs as f64 * self.direct_fraction).round() as usize
    }
}

fn fresh_name(
    rng: &mut ChaCha8Rng,
    used: &mut HashSet<String>,
    parts: usize,
    suffix: &str,
) -> String {
    loop {
        let mut word = String::new();
        for _ in 0..parts {
            word.push_str(SYLLABLES[rng.random_range(0..SYLLABLES.len())]);
        }
        let mut chars = word.chars();
        let first = chars
            .next()
            .expect("syllables are nonempty")
            .to_ascii_uppercase();
        let name = format!("{first}{}{suffix}", chars.as_str());
        if used.insert(name.clone()) {
            return name;
        }
    }
}

/// Generates the graph and one question per family. Identical inputs give
/// identical outputs.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<(KnowledgeGraph, Vec<QaExample>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();

    let mut direct = vec![false; spec.pairs];
    direct[..spec.direct_count()].fill(true);
    direct.shuffle(&mut rng);

    let filler_count = spec.entities - 3 * spec.pairs;
    let extra_relations = &FILLER_RELATIONS[..spec.relation_types - 3];
    let fillers: Vec<String> = if extra_relations.is_empty() {
        Vec::new()
    } else {
        (0..filler_count)
            .map(|_| fresh_name(&mut rng, &mut used, 3, " Hall"))
            .collect()
    };

    let mut triples: Vec<(String, String, String)> = Vec::new();
    let mut examples = Vec::with_capacity(spec.pairs);
    for (i, &is_direct) in direct.iter().enumerate() {
        let surname = fresh_name(&mut rng, &mut used, 3, "");
        let mut person = |rng: &mut ChaCha8Rng| {
            let given = fresh_name(rng, &mut HashSet::new(), 2, "");
            let full = format!("{given} {surname}");
            if used.insert(full.clone()) {
                Some(full)
            } else {
                None
            }
        };
        let mut names = Vec::with_capacity(3);
        while names.len() < 3 {
            if let Some(n) = person(&mut rng) {
                names.push(n);
            }
        }
        let (f, x, y) = (&names[0], &names[1], &names[2]);
        let mut add = |s: &str, r: &str, o: &str| triples.push((s.into(), r.into(), o.into()));
        add(x, FATHER, f);
        add(y, FATHER, f);
        add(f, SON, x);
        add(f, SON, y);
        if is_direct {
            add(x, BROTHER, y);
            add(y, BROTHER, x);
        }
        for rel in extra_relations {
            for p in [f, x, y] {
                let target = &fillers[rng.random_range(0..fillers.len())];
                add(p, rel, target);
            }
        }
        let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
        examples.push(QaExample {
            id: format!("syn-{i:05}"),
            question: template.replace("{}", x),
            topic_entities: vec![x.clone()],
            answers: vec![y.clone()],
            gold_hops: Some(if is_direct { 1 } else { 2 }),
            subgraph_ref: None,
        });
    }

    let kg = KnowledgeGraph::from_labels(
        triples
            .iter()
            .map(|(s, r, o)| (s.as_str(), r.as_str(), o.as_str())),
        false,
    )?;
    Ok((kg, examples))
}
