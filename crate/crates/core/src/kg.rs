//! Indexed triple store.
//!
//! Triples are kept as an ordered list with per-entity subject/object
//! indices instead of a dense entity-by-entity matrix, so several relations
//! may connect the same pair and memory stays linear in the triple count.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Suffix appended to a relation label to name its reverse.
pub const REVERSE_SUFFIX: &str = "_inv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    /// Position in the graph's triple list.
    pub index: usize,
}

/// Label interner; ids are assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for name in names {
            let name = name.into();
            if vocab.get(&name).is_some() {
                return Err(Error::Data(format!(
                    "duplicate label `{name}` in vocabulary"
                )));
            }
            vocab.intern(&name);
        }
        Ok(vocab)
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.lookup.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.lookup.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

fn check_label(label: &str) -> Result<()> {
    if label.is_empty() {
        return Err(Error::Data("empty label".into()));
    }
    if label.contains(['\t', '\n', '\r']) {
        return Err(Error::Data(format!(
            "label {label:?} contains a tab or newline"
        )));
    }
    Ok(())
}

/// Immutable knowledge graph: vocabularies plus an indexed triple list.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    by_subject: Vec<Vec<usize>>,
    by_object: Vec<Vec<usize>>,
    /// For subgraphs: entity id in the parent graph, indexed by local id.
    origin: Option<Vec<EntityId>>,
}

impl KnowledgeGraph {
    /// Builds a graph from label triples. Duplicate triples are dropped,
    /// vocabularies follow first appearance.
    pub fn from_labels<'a, I>(triples: I, add_reverse: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut builder = GraphBuilder::new(Vocab::new(), Vocab::new());
        let mut forward = Vec::new();
        let mut seen = HashSet::new();
        for (s, r, o) in triples {
            check_label(s)?;
            check_label(r)?;
            check_label(o)?;
            let s = builder.entities.intern(s);
            let r = builder.relations.intern(r);
            let o = builder.entities.intern(o);
            if seen.insert((s, r, o)) {
                forward.push((s, r, o));
            }
        }
        if forward.is_empty() {
            return Err(Error::Data("graph has no triples".into()));
        }

        let base_relations = builder.relations.len() as u32;
        if add_reverse {
            for r in 0..base_relations {
                let name = format!("{}{}", builder.relations.names[r as usize], REVERSE_SUFFIX);
                if builder.relations.get(&name).is_some() {
                    return Err(Error::Data(format!(
                        "reverse relation `{name}` collides with an input relation"
                    )));
                }
                builder.relations.intern(&name);
            }
        }
        for &(s, r, o) in &forward {
            builder.push(s, r, o);
        }
        if add_reverse {
            for &(s, r, o) in &forward {
                builder.push(o, r + base_relations, s);
            }
        }
        Ok(builder.finish(None))
    }

    /// Builds a graph whose relation ids come from a fixed vocabulary, so the
    /// ids agree with a trained model. Unknown relation labels are an error.
    pub fn from_labels_with_relations<'a, I>(triples: I, relations: &Vocab) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut builder = GraphBuilder::new(Vocab::new(), relations.clone());
        let mut seen = HashSet::new();
        for (s, r, o) in triples {
            check_label(s)?;
            check_label(o)?;
            let r = relations
                .get(r)
                .ok_or_else(|| Error::Data(format!("relation `{r}` not in vocabulary")))?;
            let s = builder.entities.intern(s);
            let o = builder.entities.intern(o);
            if seen.insert((s, r, o)) {
                builder.push(s, r, o);
            }
        }
        if builder.triples.is_empty() {
            return Err(Error::Data("graph has no triples".into()));
        }
        Ok(builder.finish(None))
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, index: usize) -> &Triple {
        &self.triples[index]
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    /// Triple indices whose subject is `e`.
    pub fn outgoing(&self, e: EntityId) -> &[usize] {
        self.by_subject.get(e.index()).map_or(&[], Vec::as_slice)
    }

    /// Triple indices whose object is `e`.
    pub fn incoming(&self, e: EntityId) -> &[usize] {
        self.by_object.get(e.index()).map_or(&[], Vec::as_slice)
    }

    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn entity_name(&self, e: EntityId) -> Result<&str> {
        self.entities.name(e.0).ok_or(Error::OutOfRange {
            what: "entity",
            index: e.index(),
            size: self.entity_count(),
        })
    }

    pub fn relation_name(&self, r: RelationId) -> Result<&str> {
        self.relations.name(r.0).ok_or(Error::OutOfRange {
            what: "relation",
            index: r.index(),
            size: self.relation_count(),
        })
    }

    /// Parent-graph id of each local entity, when this graph is a subgraph.
    pub fn origin(&self) -> Option<&[EntityId]> {
        self.origin.as_deref()
    }

    pub fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.index() < self.entity_count() {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                what: "entity",
                index: e.index(),
                size: self.entity_count(),
            })
        }
    }

    /// Writes the graph in the tab-separated triple format.
    pub fn write_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entities.names[t.subject.index()],
                self.relations.names[t.relation.index()],
                self.entities.names[t.object.index()]
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

struct GraphBuilder {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
}

impl GraphBuilder {
    fn new(entities: Vocab, relations: Vocab) -> Self {
        Self {
            entities,
            relations,
            triples: Vec::new(),
        }
    }

    fn push(&mut self, s: u32, r: u32, o: u32) {
        let index = self.triples.len();
        self.triples.push(Triple {
            subject: EntityId(s),
            relation: RelationId(r),
            object: EntityId(o),
            index,
        });
    }

    fn finish(self, origin: Option<Vec<EntityId>>) -> KnowledgeGraph {
        let n = self.entities.len();
        let mut by_subject = vec![Vec::new(); n];
        let mut by_object = vec![Vec::new(); n];
        for t in &self.triples {
            by_subject[t.subject.index()].push(t.index);
            by_object[t.object.index()].push(t.index);
        }
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            triples: self.triples,
            by_subject,
            by_object,
            origin,
        }
    }
}

fn parse_lines(text: &str, path: &Path) -> Result<Vec<(String, String, String)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(path, i + 1, "empty field"));
        }
        rows.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ));
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "graph file contains no triples"));
    }
    Ok(rows)
}

/// Loads a tab-separated triple file. With `add_reverse`, every relation `r`
/// gets a companion `r_inv` and every triple its inverse.
pub fn load_graph(path: impl AsRef<Path>, add_reverse: bool) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_lines(&text, path)?;
    KnowledgeGraph::from_labels(
        rows.iter()
            .map(|(s, r, o)| (s.as_str(), r.as_str(), o.as_str())),
        add_reverse,
    )
}

/// Loads a triple file against a fixed relation vocabulary.
pub fn load_graph_with_relations(
    path: impl AsRef<Path>,
    relations: &Vocab,
) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_lines(&text, path)?;
    KnowledgeGraph::from_labels_with_relations(
        rows.iter()
            .map(|(s, r, o)| (s.as_str(), r.as_str(), o.as_str())),
        relations,
    )
}

/// Sparse nonnegative scores over entities. Absent entries are exactly zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityState {
    scores: BTreeMap<EntityId, f64>,
}

impl EntityState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `score` for `e`; zero removes the entry.
    ///
    /// Panics when the score is outside [0, 1] or not finite.
    pub fn set(&mut self, e: EntityId, score: f64) {
        assert!(
            (0.0..=1.0).contains(&score),
            "entity score {score} outside [0, 1]"
        );
        if score > 0.0 {
            self.scores.insert(e, score);
        } else {
            self.scores.remove(&e);
        }
    }

    pub fn get(&self, e: EntityId) -> f64 {
        self.scores.get(&e).copied().unwrap_or(0.0)
    }

    /// Nonzero entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (EntityId, f64)> + '_ {
        self.scores.iter().map(|(&e, &s)| (e, s))
    }

    pub fn support(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.scores.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (e, s) in self.iter() {
            out[e.index()] = s;
        }
        out
    }
}

/// Sets each listed entity to 1.
pub fn one_hot(entities: &BTreeSet<EntityId>, n: usize) -> Result<EntityState> {
    if entities.is_empty() {
        return Err(Error::Data("at least one topic entity is required".into()));
    }
    let mut state = EntityState::new();
    for &e in entities {
        if e.index() >= n {
            return Err(Error::OutOfRange {
                what: "entity",
                index: e.index(),
                size: n,
            });
        }
        state.set(e, 1.0);
    }
    Ok(state)
}

/// Gold answer set; its vector form is multi-hot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerVector {
    gold: BTreeSet<EntityId>,
}

impl AnswerVector {
    pub fn new(gold: BTreeSet<EntityId>) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::Data("answer set is empty".into()));
        }
        Ok(Self { gold })
    }

    pub fn gold(&self) -> &BTreeSet<EntityId> {
        &self.gold
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.gold.contains(&e)
    }

    pub fn as_state(&self) -> EntityState {
        let mut s = EntityState::new();
        for &e in &self.gold {
            s.set(e, 1.0);
        }
        s
    }
}

/// Extracts the triples reachable from `topics` within `k` hops.
///
/// Forward edges are always followed; with `bidirectional`, edges are also
/// walked from object to subject. Entities are re-indexed densely (topics
/// first, then first appearance in the kept triples) and
/// [`KnowledgeGraph::origin`] maps them back. The relation vocabulary is kept
/// whole so relation ids stay aligned with a trained model.
pub fn khop_subgraph(
    kg: &KnowledgeGraph,
    topics: &BTreeSet<EntityId>,
    k: usize,
    bidirectional: bool,
) -> Result<KnowledgeGraph> {
    if k == 0 {
        return Err(Error::Config("k-hop expansion needs k >= 1".into()));
    }
    if topics.is_empty() {
        return Err(Error::Data("at least one topic entity is required".into()));
    }
    for &t in topics {
        kg.check_entity(t)?;
    }

    let mut visited: HashSet<EntityId> = topics.iter().copied().collect();
    let mut frontier: Vec<EntityId> = topics.iter().copied().collect();
    let mut kept: BTreeSet<usize> = BTreeSet::new();
    for _ in 0..k {
        let mut next = Vec::new();
        for &e in &frontier {
            for &j in kg.outgoing(e) {
                kept.insert(j);
                let o = kg.triple(j).object;
                if visited.insert(o) {
                    next.push(o);
                }
            }
            if bidirectional {
                for &j in kg.incoming(e) {
                    kept.insert(j);
                    let s = kg.triple(j).subject;
                    if visited.insert(s) {
                        next.push(s);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }

    let mut builder = GraphBuilder::new(Vocab::new(), kg.relations.clone());
    let mut origin = Vec::new();
    let mut local = |e: EntityId, builder: &mut GraphBuilder| -> u32 {
        let name = &kg.entities.names[e.index()];
        let before = builder.entities.len();
        let id = builder.entities.intern(name);
        if builder.entities.len() > before {
            origin.push(e);
        }
        id
    };
    for &t in topics {
        local(t, &mut builder);
    }
    for &j in &kept {
        let t = kg.triple(j);
        let s = local(t.subject, &mut builder);
        let o = local(t.object, &mut builder);
        builder.push(s, t.relation.0, o);
    }
    Ok(builder.finish(Some(origin)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> KnowledgeGraph {
        KnowledgeGraph::from_labels([("A", "r1", "B"), ("B", "r2", "C")], false).unwrap()
    }

    #[test]
    fn single_triple() {
        let kg = KnowledgeGraph::from_labels([("A", "r", "B")], false).unwrap();
        assert_eq!(
            (kg.entity_count(), kg.relation_count(), kg.triples().len()),
            (2, 1, 1)
        );

        let kg = KnowledgeGraph::from_labels([("A", "r", "B")], true).unwrap();
        assert_eq!(
            (kg.entity_count(), kg.relation_count(), kg.triples().len()),
            (2, 2, 2)
        );
        assert_eq!(
            kg.relations().names(),
            &["r".to_string(), "r_inv".to_string()]
        );
        let inv = kg.triple(1);
        assert_eq!(
            (inv.subject, inv.relation, inv.object),
            (EntityId(1), RelationId(1), EntityId(0))
        );
    }

    #[test]
    fn reverse_chain_index_structure() {
        let kg =
            KnowledgeGraph::from_labels([("A", "r", "B"), ("B", "r", "C"), ("C", "s", "A")], true)
                .unwrap();
        assert_eq!(kg.triples().len(), 6);
        let b = kg.entity("B").unwrap();
        // B -r-> C and B -r_inv-> A
        assert_eq!(kg.outgoing(b), &[1, 3]);
        assert_eq!(kg.incoming(b), &[0, 4]);
    }

    #[test]
    fn duplicates_dropped() {
        let kg =
            KnowledgeGraph::from_labels([("A", "r", "B"), ("A", "r", "B"), ("A", "s", "B")], false)
                .unwrap();
        assert_eq!(kg.triples().len(), 2);
        assert_eq!(kg.outgoing(EntityId(0)).len(), 2);
    }

    #[test]
    fn reverse_name_collision_rejected() {
        let err = KnowledgeGraph::from_labels([("A", "r", "B"), ("B", "r_inv", "A")], true);
        assert!(err.is_err());
    }

    #[test]
    fn one_hot_cases() {
        let s = one_hot(&[EntityId(0)].into(), 3).unwrap();
        assert_eq!(s.to_dense(3), vec![1.0, 0.0, 0.0]);
        let s = one_hot(&[EntityId(0), EntityId(2)].into(), 3).unwrap();
        assert_eq!(s.to_dense(3), vec![1.0, 0.0, 1.0]);
        assert!(matches!(
            one_hot(&[EntityId(5)].into(), 3),
            Err(Error::OutOfRange { .. })
        ));
        assert!(one_hot(&BTreeSet::new(), 3).is_err());
    }

    #[test]
    fn answer_vector_multi_hot() {
        let a = AnswerVector::new([EntityId(1), EntityId(3)].into()).unwrap();
        assert_eq!(a.as_state().to_dense(4), vec![0.0, 1.0, 0.0, 1.0]);
        assert!(AnswerVector::new(BTreeSet::new()).is_err());
    }

    #[test]
    fn khop_chain() {
        let kg = chain();
        let a: BTreeSet<_> = [kg.entity("A").unwrap()].into();
        let sub = khop_subgraph(&kg, &a, 1, false).unwrap();
        assert_eq!(sub.triples().len(), 1);
        assert_eq!(sub.entity_name(sub.triple(0).object).unwrap(), "B");
        let sub = khop_subgraph(&kg, &a, 2, false).unwrap();
        assert_eq!(sub.triples().len(), 2);
        assert_eq!(
            sub.origin().unwrap(),
            &[EntityId(0), EntityId(1), EntityId(2)]
        );
        assert_eq!(sub.relation_count(), kg.relation_count());
    }

    #[test]
    fn khop_star_bidirectional() {
        let kg = KnowledgeGraph::from_labels(
            [
                ("l1", "p", "hub"),
                ("l2", "p", "hub"),
                ("l3", "p", "hub"),
                ("l4", "p", "hub"),
            ],
            false,
        )
        .unwrap();
        let hub: BTreeSet<_> = [kg.entity("hub").unwrap()].into();
        assert_eq!(
            khop_subgraph(&kg, &hub, 1, true).unwrap().triples().len(),
            4
        );
        assert_eq!(
            khop_subgraph(&kg, &hub, 1, false).unwrap().triples().len(),
            0
        );
    }

    #[test]
    fn khop_errors() {
        let kg = chain();
        assert!(khop_subgraph(&kg, &[EntityId(9)].into(), 1, false).is_err());
        assert!(khop_subgraph(&kg, &[EntityId(0)].into(), 0, false).is_err());
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        fs::write(&p, "A\tr\tB\nA\tB\n").unwrap();
        match load_graph(&p, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::write(&p, "").unwrap();
        assert!(load_graph(&p, false).is_err());
    }

    #[test]
    #[should_panic]
    fn state_rejects_out_of_range() {
        EntityState::new().set(EntityId(0), 1.5);
    }
}
