//! RDFS entailment: the six schema rules, forward-chaining closure with
//! provenance, and reasoning probes over the 3x3 premise grid.
//!
//! | rule   | P1                     | P2                 | conclusion      |
//! |--------|------------------------|--------------------|-----------------|
//! | rdfs2  | `a domain x`           | `u a v`            | `u type x`      |
//! | rdfs3  | `a range x`            | `u a v`            | `v type x`      |
//! | rdfs5  | `b subproperty_of c`   | `a subproperty_of b` | `a subproperty_of c` |
//! | rdfs7  | `a subproperty_of b`   | `u a v`            | `u b v`         |
//! | rdfs9  | `x subclass_of y`      | `u type x`         | `u type y`      |
//! | rdfs11 | `y subclass_of z`      | `x subclass_of y`  | `x subclass_of z` |
//!
//! The masked constituent of each conclusion is the object of P1.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::memorize::{class_vocabulary, domain_phrase, property_vocabulary, range_phrase};
use crate::ontology::OntologyGraph;
use crate::prompt::{
    render_pattern, render_pattern_statement, render_statement, ClozePrompt, PromptError, Relation, Segment, Surface,
    TemplateKind, TemplateSet,
};
use crate::util::seeded_rng;

pub const TYPE: &str = "type";
pub const SUBCLASS_OF: &str = "subclass_of";
pub const SUBPROPERTY_OF: &str = "subproperty_of";
pub const DOMAIN: &str = "domain";
pub const RANGE: &str = "range";

/// Prefix marking a pseudoword in a triple shape.
pub const PSEUDO_PREFIX: char = '?';

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triple {
    pub fn new(s: impl Into<String>, p: impl Into<String>, o: impl Into<String>) -> Self {
        Triple {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
        }
    }

    fn get(&self, pos: usize) -> &str {
        match pos {
            0 => &self.subject,
            1 => &self.predicate,
            _ => &self.object,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RdfsRule {
    Rdfs2,
    Rdfs3,
    Rdfs5,
    Rdfs7,
    Rdfs9,
    Rdfs11,
}

impl RdfsRule {
    pub const ALL: [RdfsRule; 6] = [
        RdfsRule::Rdfs2,
        RdfsRule::Rdfs3,
        RdfsRule::Rdfs5,
        RdfsRule::Rdfs7,
        RdfsRule::Rdfs9,
        RdfsRule::Rdfs11,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RdfsRule::Rdfs2 => "rdfs2",
            RdfsRule::Rdfs3 => "rdfs3",
            RdfsRule::Rdfs5 => "rdfs5",
            RdfsRule::Rdfs7 => "rdfs7",
            RdfsRule::Rdfs9 => "rdfs9",
            RdfsRule::Rdfs11 => "rdfs11",
        }
    }

    pub fn def(self) -> &'static RuleDef {
        RULES
            .iter()
            .find(|r| r.rule == self)
            .expect("every rule has a definition")
    }
}

impl fmt::Display for RdfsRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RdfsRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RdfsRule::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown rule `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Var(&'static str),
    Const(&'static str),
}

use Term::{Const, Var};

/// What the masked constituent of a conclusion is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskedKind {
    Class,
    Property,
    PropertyPattern,
}

/// One rule of the table: two premise patterns and a conclusion pattern.
#[derive(Debug)]
pub struct RuleDef {
    pub rule: RdfsRule,
    pub p1: [Term; 3],
    pub p2: [Term; 3],
    pub conclusion: [Term; 3],
    /// Position (0..3) of the masked constituent in the conclusion.
    pub masked: usize,
    pub masked_kind: MaskedKind,
}

pub static RULES: &[RuleDef] = &[
    RuleDef {
        rule: RdfsRule::Rdfs2,
        p1: [Var("a"), Const(DOMAIN), Var("x")],
        p2: [Var("u"), Var("a"), Var("v")],
        conclusion: [Var("u"), Const(TYPE), Var("x")],
        masked: 2,
        masked_kind: MaskedKind::Class,
    },
    RuleDef {
        rule: RdfsRule::Rdfs3,
        p1: [Var("a"), Const(RANGE), Var("x")],
        p2: [Var("u"), Var("a"), Var("v")],
        conclusion: [Var("v"), Const(TYPE), Var("x")],
        masked: 2,
        masked_kind: MaskedKind::Class,
    },
    RuleDef {
        rule: RdfsRule::Rdfs5,
        p1: [Var("b"), Const(SUBPROPERTY_OF), Var("c")],
        p2: [Var("a"), Const(SUBPROPERTY_OF), Var("b")],
        conclusion: [Var("a"), Const(SUBPROPERTY_OF), Var("c")],
        masked: 2,
        masked_kind: MaskedKind::Property,
    },
    RuleDef {
        rule: RdfsRule::Rdfs7,
        p1: [Var("a"), Const(SUBPROPERTY_OF), Var("b")],
        p2: [Var("u"), Var("a"), Var("v")],
        conclusion: [Var("u"), Var("b"), Var("v")],
        masked: 1,
        masked_kind: MaskedKind::PropertyPattern,
    },
    RuleDef {
        rule: RdfsRule::Rdfs9,
        p1: [Var("x"), Const(SUBCLASS_OF), Var("y")],
        p2: [Var("u"), Const(TYPE), Var("x")],
        conclusion: [Var("u"), Const(TYPE), Var("y")],
        masked: 2,
        masked_kind: MaskedKind::Class,
    },
    RuleDef {
        rule: RdfsRule::Rdfs11,
        p1: [Var("y"), Const(SUBCLASS_OF), Var("z")],
        p2: [Var("x"), Const(SUBCLASS_OF), Var("y")],
        conclusion: [Var("x"), Const(SUBCLASS_OF), Var("z")],
        masked: 2,
        masked_kind: MaskedKind::Class,
    },
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("{rule}: premise {premise} `{triple}` does not match the rule's shape")]
    ShapeMismatch {
        rule: RdfsRule,
        premise: u8,
        triple: Triple,
    },
    #[error("{rule}: premises disagree on `{var}` (`{left}` vs `{right}`)")]
    JoinMismatch {
        rule: RdfsRule,
        var: &'static str,
        left: String,
        right: String,
    },
}

type Bindings<'t> = Vec<(&'static str, &'t str)>;

fn lookup<'t>(b: &Bindings<'t>, var: &str) -> Option<&'t str> {
    b.iter().find(|(v, _)| *v == var).map(|(_, x)| *x)
}

enum MatchFail {
    Shape,
    Join(&'static str, String, String),
}

fn match_pattern<'t>(pattern: &[Term; 3], triple: &'t Triple, bindings: &mut Bindings<'t>) -> Result<(), MatchFail> {
    for (pos, term) in pattern.iter().enumerate() {
        let value = triple.get(pos);
        match term {
            Const(c) => {
                if *c != value {
                    return Err(MatchFail::Shape);
                }
            }
            Var(v) => match lookup(bindings, v) {
                Some(bound) if bound != value => return Err(MatchFail::Join(v, bound.to_string(), value.to_string())),
                Some(_) => {}
                None => bindings.push((v, value)),
            },
        }
    }
    Ok(())
}

fn instantiate(pattern: &[Term; 3], b: &Bindings<'_>) -> Triple {
    let v = |t: &Term| match t {
        Const(c) => c.to_string(),
        Var(v) => lookup(b, v)
            .expect("conclusion variables are bound by premises")
            .to_string(),
    };
    Triple::new(v(&pattern[0]), v(&pattern[1]), v(&pattern[2]))
}

/// Applies one rule to a premise pair.
pub fn apply_rule(rule: RdfsRule, p1: &Triple, p2: &Triple) -> Result<Triple, RuleError> {
    let def = rule.def();
    for (n, pat, t) in [(1u8, &def.p1, p1), (2, &def.p2, p2)] {
        if match_pattern(pat, t, &mut Vec::new()).is_err() {
            return Err(RuleError::ShapeMismatch {
                rule,
                premise: n,
                triple: t.clone(),
            });
        }
    }
    let mut b = Vec::new();
    let _ = match_pattern(&def.p1, p1, &mut b);
    match match_pattern(&def.p2, p2, &mut b) {
        Ok(()) => Ok(instantiate(&def.conclusion, &b)),
        Err(MatchFail::Join(var, left, right)) => Err(RuleError::JoinMismatch { rule, var, left, right }),
        Err(MatchFail::Shape) => unreachable!("shape checked above"),
    }
}

/// Asserted triples of a graph: type, subclass, subproperty, domain, range
/// edges and instance facts.
pub fn graph_triples(graph: &OntologyGraph) -> Vec<Triple> {
    let mut out = Vec::new();
    for c in graph.classes() {
        for s in &c.superclasses {
            out.push(Triple::new(c.id.as_str(), SUBCLASS_OF, s.as_str()));
        }
    }
    for p in graph.properties() {
        for s in &p.superproperties {
            out.push(Triple::new(p.id.as_str(), SUBPROPERTY_OF, s.as_str()));
        }
        if let Some(d) = &p.domain {
            out.push(Triple::new(p.id.as_str(), DOMAIN, d.as_str()));
        }
        if let Some(r) = &p.range {
            out.push(Triple::new(p.id.as_str(), RANGE, r.as_str()));
        }
    }
    for i in graph.instances() {
        for t in &i.types {
            out.push(Triple::new(i.id.as_str(), TYPE, t.as_str()));
        }
    }
    for f in graph.facts() {
        out.push(Triple::new(f.subject.as_str(), f.property.as_str(), f.object.as_str()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Derivation {
    pub rule: RdfsRule,
    /// Indices into [`Closure::triples`].
    pub premises: [usize; 2],
}

/// Asserted triples followed by derived ones; `derivations[k]` explains
/// `triples[asserted + k]`.
#[derive(Debug, Clone, Default)]
pub struct Closure {
    pub triples: Vec<Triple>,
    pub asserted: usize,
    pub derivations: Vec<Derivation>,
}

impl Closure {
    pub fn derived(&self) -> impl Iterator<Item = (&Triple, &Derivation)> {
        self.triples[self.asserted..].iter().zip(&self.derivations)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn triple_set(&self) -> HashSet<Triple> {
        self.triples.iter().cloned().collect()
    }

    /// Provenance TSV: derived triple, rule, both premises.
    pub fn write_provenance(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "subject\tpredicate\tobject\trule\tpremise1\tpremise2")?;
        for (t, d) in self.derived() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                t.subject, t.predicate, t.object, d.rule, self.triples[d.premises[0]], self.triples[d.premises[1]]
            )?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct TripleIndex {
    by_p: HashMap<String, Vec<usize>>,
    by_ps: HashMap<(String, String), Vec<usize>>,
    by_po: HashMap<(String, String), Vec<usize>>,
    by_s: HashMap<String, Vec<usize>>,
    by_o: HashMap<String, Vec<usize>>,
    len: usize,
}

impl TripleIndex {
    fn insert(&mut self, id: usize, t: &Triple) {
        self.by_p.entry(t.predicate.clone()).or_default().push(id);
        self.by_ps
            .entry((t.predicate.clone(), t.subject.clone()))
            .or_default()
            .push(id);
        self.by_po
            .entry((t.predicate.clone(), t.object.clone()))
            .or_default()
            .push(id);
        self.by_s.entry(t.subject.clone()).or_default().push(id);
        self.by_o.entry(t.object.clone()).or_default().push(id);
        self.len = self.len.max(id + 1);
    }

    /// Candidate ids for a pattern under partial bindings, ascending.
    fn candidates(&self, pattern: &[Term; 3], b: &Bindings<'_>) -> Vec<usize> {
        let resolve = |t: &Term| match t {
            Const(c) => Some(c.to_string()),
            Var(v) => lookup(b, v).map(str::to_string),
        };
        let (s, p, o) = (resolve(&pattern[0]), resolve(&pattern[1]), resolve(&pattern[2]));
        let hit = |v: Option<&Vec<usize>>| v.cloned().unwrap_or_default();
        match (s, p, o) {
            (Some(s), Some(p), _) => hit(self.by_ps.get(&(p, s))),
            (_, Some(p), Some(o)) => hit(self.by_po.get(&(p, o))),
            (_, Some(p), None) => hit(self.by_p.get(&p)),
            (Some(s), None, _) => hit(self.by_s.get(&s)),
            (None, None, Some(o)) => hit(self.by_o.get(&o)),
            (None, None, None) => (0..self.len).collect(),
        }
    }
}

/// Least fixpoint of the given rules over `base`, semi-naive.
pub fn materialize(base: Vec<Triple>, rules: &[RdfsRule]) -> Closure {
    let mut triples: Vec<Triple> = Vec::new();
    let mut known: HashSet<Triple> = HashSet::new();
    let mut index = TripleIndex::default();
    for t in base {
        if known.insert(t.clone()) {
            index.insert(triples.len(), &t);
            triples.push(t);
        }
    }
    let asserted = triples.len();
    let mut derivations = Vec::new();
    let mut delta: std::ops::Range<usize> = 0..asserted;

    while !delta.is_empty() {
        let mut fresh: Vec<(Triple, Derivation)> = Vec::new();
        let mut fresh_set: HashSet<Triple> = HashSet::new();
        let mut emit = |t: Triple, d: Derivation| {
            if !known.contains(&t) && fresh_set.insert(t.clone()) {
                fresh.push((t, d));
            }
        };
        for &rule in rules {
            let def = rule.def();
            for f in delta.clone() {
                let mut b = Vec::new();
                if match_pattern(&def.p1, &triples[f], &mut b).is_ok() {
                    for g in index.candidates(&def.p2, &b) {
                        let mut b2 = b.clone();
                        if match_pattern(&def.p2, &triples[g], &mut b2).is_ok() {
                            emit(instantiate(&def.conclusion, &b2), Derivation { rule, premises: [f, g] });
                        }
                    }
                }
                let mut b = Vec::new();
                if match_pattern(&def.p2, &triples[f], &mut b).is_ok() {
                    for g in index.candidates(&def.p1, &b) {
                        let mut b2 = b.clone();
                        if match_pattern(&def.p1, &triples[g], &mut b2).is_ok() {
                            emit(instantiate(&def.conclusion, &b2), Derivation { rule, premises: [g, f] });
                        }
                    }
                }
            }
        }
        let start = triples.len();
        for (t, d) in fresh {
            known.insert(t.clone());
            index.insert(triples.len(), &t);
            triples.push(t);
            derivations.push(d);
        }
        delta = start..triples.len();
    }

    Closure {
        triples,
        asserted,
        derivations,
    }
}

pub fn materialize_closure(graph: &OntologyGraph) -> Closure {
    materialize(graph_triples(graph), &RdfsRule::ALL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PremiseMode {
    #[serde(rename = "EX")]
    Ex,
    #[serde(rename = "IM")]
    Im,
    #[serde(rename = "NO")]
    No,
}

impl PremiseMode {
    pub const ALL: [PremiseMode; 3] = [PremiseMode::Ex, PremiseMode::Im, PremiseMode::No];

    pub fn as_str(self) -> &'static str {
        match self {
            PremiseMode::Ex => "EX",
            PremiseMode::Im => "IM",
            PremiseMode::No => "NO",
        }
    }
}

impl fmt::Display for PremiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PremiseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PremiseMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown premise mode `{s}`"))
    }
}

pub type GridCell = (PremiseMode, PremiseMode);

/// The full 3x3 grid, P1 mode major.
pub fn full_grid() -> Vec<GridCell> {
    PremiseMode::ALL
        .into_iter()
        .flat_map(|a| PremiseMode::ALL.into_iter().map(move |b| (a, b)))
        .collect()
}

/// Parses `all` or a comma list like `EX-EX,IM-NO`.
pub fn parse_grid(s: &str) -> Result<Vec<GridCell>, String> {
    if s.trim() == "all" {
        return Ok(full_grid());
    }
    let mut out = Vec::new();
    for cell in s.split(',') {
        let (a, b) = cell
            .trim()
            .split_once(['-', '/'])
            .ok_or_else(|| format!("grid cell `{cell}` must look like EX-IM"))?;
        let c = (a.parse()?, b.parse()?);
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

/// A premise of a reasoning instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Premise {
    /// Shared by every grid cell built from the same premise.
    pub id: String,
    /// Node ids; pseudowords are written `?X`.
    pub shape: Triple,
    pub mode: PremiseMode,
    /// Present iff `mode` is EX.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered: Option<Vec<Segment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningInstance {
    pub id: String,
    /// Identifies the premise pair across grid cells.
    pub pair_id: String,
    pub rule: RdfsRule,
    pub p1: Premise,
    pub p2: Premise,
    pub conclusion: Triple,
    /// Hypothesis cloze with a single mask slot.
    pub hypothesis: Vec<Segment>,
    pub hypothesis_template: String,
    pub golds: Vec<String>,
    pub candidates: Vec<String>,
    pub masked_kind: MaskedKind,
    pub pseudoword_slots: Vec<String>,
}

impl ReasoningInstance {
    pub fn cell(&self) -> GridCell {
        (self.p1.mode, self.p2.mode)
    }
}

/// How reasoning candidates are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePolicy {
    FullVocabulary,
    /// Gold plus this many uniformly drawn non-gold candidates.
    Sampled(usize),
}

#[derive(Debug, Clone)]
pub struct ReasoningOptions {
    pub seed: u64,
    pub grid: Vec<GridCell>,
    pub rules: Vec<RdfsRule>,
    /// Maximum premise pairs per rule; `None` keeps all.
    pub budget: Option<usize>,
    /// Template variant for the hypothesis.
    pub hypothesis_variant: String,
    /// Template kind used to verbalize explicit premises.
    pub statement_kind: TemplateKind,
    pub candidate_policy: CandidatePolicy,
}

impl ReasoningOptions {
    pub fn new(seed: u64) -> Self {
        ReasoningOptions {
            seed,
            grid: full_grid(),
            rules: RdfsRule::ALL.to_vec(),
            budget: None,
            hypothesis_variant: "manual3".into(),
            statement_kind: TemplateKind::Manual,
            candidate_policy: CandidatePolicy::FullVocabulary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningHeader {
    pub graph_hash: String,
    pub seed: u64,
    pub grid: Vec<GridCell>,
    pub rules: Vec<RdfsRule>,
    pub budget: Option<usize>,
    pub hypothesis_variant: String,
    pub statement_kind: TemplateKind,
    pub candidate_policy: CandidatePolicy,
    /// Premise pairs kept per rule.
    pub pairs: Vec<(RdfsRule, usize)>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReasoningError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("unknown node `{0}` in a premise")]
    UnknownNode(String),
}

pub fn is_pseudo(id: &str) -> bool {
    id.starts_with(PSEUDO_PREFIX)
}

fn pseudo(slot: &str) -> String {
    format!("{PSEUDO_PREFIX}{slot}")
}

/// Sentence pattern of a property, without a closing period. Properties
/// without a pattern get `[X] <label> [Y]`.
pub fn property_pattern(graph: &OntologyGraph, prop: &str) -> Option<String> {
    let p = graph.property(prop)?;
    let raw = p.pattern.clone().unwrap_or_else(|| format!("[X] {} [Y]", p.label));
    Some(raw.trim().trim_end_matches('.').trim_end().to_string())
}

fn pattern_vocabulary(graph: &OntologyGraph) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in graph.properties() {
        let pat = property_pattern(graph, p.id.as_str()).expect("property exists");
        if !out.contains(&pat) {
            out.push(pat);
        }
    }
    out
}

struct Renderer<'a> {
    graph: &'a OntologyGraph,
    templates: &'a TemplateSet,
    kind: TemplateKind,
}

impl Renderer<'_> {
    fn surface(&self, id: &str) -> Result<Surface, ReasoningError> {
        if let Some(slot) = id.strip_prefix(PSEUDO_PREFIX) {
            return Ok(Surface::Pseudo(slot.to_string()));
        }
        self.graph
            .label(id)
            .map(|l| Surface::Label(l.to_string()))
            .ok_or_else(|| ReasoningError::UnknownNode(id.to_string()))
    }

    fn variant(&self) -> &'static str {
        match self.kind {
            TemplateKind::Manual => "manual1",
            TemplateKind::Soft => "soft",
        }
    }

    /// Verbalizes a true triple.
    fn statement(&self, t: &Triple) -> Result<Vec<Segment>, ReasoningError> {
        let relation = match t.predicate.as_str() {
            TYPE => Relation::Type,
            SUBCLASS_OF => Relation::SubclassOf,
            SUBPROPERTY_OF => Relation::SubpropertyOf,
            DOMAIN => Relation::Domain,
            RANGE => Relation::Range,
            prop => {
                let pattern =
                    property_pattern(self.graph, prop).ok_or_else(|| ReasoningError::UnknownNode(prop.to_string()))?;
                return Ok(render_pattern_statement(
                    &pattern,
                    &self.surface(&t.subject)?,
                    &self.surface(&t.object)?,
                ));
            }
        };
        let template = self.templates.select(relation, self.variant())?;
        let subject = self.surface(&t.subject)?;
        let phrase = match relation {
            Relation::Domain | Relation::Range => {
                let id = crate::ontology::NodeId::new(t.subject.clone())
                    .map_err(|_| ReasoningError::UnknownNode(t.subject.clone()))?;
                if relation == Relation::Domain {
                    domain_phrase(self.graph, &id)
                } else {
                    range_phrase(self.graph, &id)
                }
            }
            _ => None,
        };
        let object = self.surface(&t.object)?;
        Ok(render_statement(template, &subject, &object, phrase.as_deref()))
    }
}

/// Premise pairs for one rule, in closure order. P2 replaces the instance
/// (or the subject class/property) with pseudowords.
fn premise_pairs(rule: RdfsRule, closure: &Closure) -> Vec<(Triple, Triple)> {
    let (x, y) = (pseudo("X"), pseudo("Y"));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in &closure.triples {
        if is_pseudo(&t.subject) {
            continue;
        }
        let p2 = match (rule, t.predicate.as_str()) {
            (RdfsRule::Rdfs2, DOMAIN) | (RdfsRule::Rdfs3, RANGE) | (RdfsRule::Rdfs7, SUBPROPERTY_OF) => {
                Triple::new(&x, &t.subject, &y)
            }
            (RdfsRule::Rdfs5, SUBPROPERTY_OF) => Triple::new(&x, SUBPROPERTY_OF, &t.subject),
            (RdfsRule::Rdfs9, SUBCLASS_OF) => Triple::new(&x, TYPE, &t.subject),
            (RdfsRule::Rdfs11, SUBCLASS_OF) => Triple::new(&x, SUBCLASS_OF, &t.subject),
            _ => continue,
        };
        if seen.insert(t.clone()) {
            out.push((t.clone(), p2));
        }
    }
    out
}

fn premise_id(t: &Triple) -> String {
    format!("{}|{}|{}", t.subject, t.predicate, t.object)
}

fn slots_of(triples: &[&Triple]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in triples {
        for v in [&t.subject, &t.predicate, &t.object] {
            if let Some(s) = v.strip_prefix(PSEUDO_PREFIX) {
                if !out.iter().any(|o| o == s) {
                    out.push(s.to_string());
                }
            }
        }
    }
    out
}

/// Reasoning instances for every rule, premise pair and grid cell.
///
/// Output order: rule, then premise pair, then grid cell in the order given.
pub fn generate_reasoning(
    graph: &OntologyGraph,
    templates: &TemplateSet,
    opts: &ReasoningOptions,
) -> Result<(ReasoningHeader, Vec<ReasoningInstance>), ReasoningError> {
    let closure = materialize_closure(graph);
    let renderer = Renderer {
        graph,
        templates,
        kind: opts.statement_kind,
    };
    let classes = class_vocabulary(graph);
    let properties = property_vocabulary(graph);
    let patterns = pattern_vocabulary(graph);

    let mut warnings = Vec::new();
    let mut pair_counts = Vec::new();
    let mut out = Vec::new();
    for &rule in &opts.rules {
        let def = rule.def();
        let mut pairs = premise_pairs(rule, &closure);
        if pairs.is_empty() {
            let msg = format!("{rule}: no valid premise pairs in the graph");
            warn!("{msg}");
            warnings.push(msg);
        }
        if let Some(budget) = opts.budget {
            if pairs.len() > budget {
                let mut rng = seeded_rng(opts.seed, &format!("budget/{rule}"));
                let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, pairs.len(), budget).into_vec();
                keep.sort_unstable();
                pairs = keep.into_iter().map(|i| pairs[i].clone()).collect();
            }
        }
        pair_counts.push((rule, pairs.len()));

        for (n, (p1, p2)) in pairs.iter().enumerate() {
            let conclusion = apply_rule(rule, p1, p2)?;
            let masked = conclusion.get(def.masked).to_string();
            debug_assert_eq!(masked, p1.object);
            let slots = slots_of(&[p1, p2]);

            let (hypothesis, golds, vocab) = match def.masked_kind {
                MaskedKind::PropertyPattern => {
                    let gold =
                        property_pattern(graph, &masked).ok_or_else(|| ReasoningError::UnknownNode(masked.clone()))?;
                    (vec![Segment::Mask, Segment::text(".")], vec![gold], &patterns)
                }
                kind => {
                    let relation = match (kind, conclusion.predicate.as_str()) {
                        (_, TYPE) => Relation::Type,
                        (_, SUBCLASS_OF) => Relation::SubclassOf,
                        _ => Relation::SubpropertyOf,
                    };
                    let template = templates.select(relation, &opts.hypothesis_variant)?;
                    let subject = renderer.surface(&conclusion.subject)?;
                    let prompt =
                        crate::prompt::render_template(template, &subject, None, 1, crate::prompt::Casing::Cased)?;
                    let gold = graph
                        .label(&masked)
                        .ok_or_else(|| ReasoningError::UnknownNode(masked.clone()))?
                        .to_string();
                    let vocab = if kind == MaskedKind::Class {
                        &classes
                    } else {
                        &properties
                    };
                    (prompt.segments, vec![gold], vocab)
                }
            };
            let candidates = match opts.candidate_policy {
                CandidatePolicy::FullVocabulary => vocab.clone(),
                CandidatePolicy::Sampled(k) => {
                    let mut rng = seeded_rng(opts.seed, &format!("candidates/{rule}/{n}"));
                    let negatives: Vec<&String> = vocab.iter().filter(|c| !golds.contains(c)).collect();
                    let mut c: Vec<String> = negatives
                        .choose_multiple(&mut rng, k.min(negatives.len()))
                        .map(|s| (*s).clone())
                        .collect();
                    c.extend(golds.iter().cloned());
                    c.sort_by_key(|s| vocab.iter().position(|v| v == s));
                    c
                }
            };
            let hypothesis_template = ClozePrompt::new(hypothesis.clone()).text();
            let s1 = renderer.statement(p1)?;
            let s2 = renderer.statement(p2)?;
            let pair_id = format!("{rule}-{n:05}");
            for &(m1, m2) in &opts.grid {
                let premise = |t: &Triple, mode: PremiseMode, rendered: &Vec<Segment>| Premise {
                    id: premise_id(t),
                    shape: t.clone(),
                    mode,
                    rendered: (mode == PremiseMode::Ex).then(|| rendered.clone()),
                    rendered_text: (mode == PremiseMode::Ex).then(|| ClozePrompt::new(rendered.clone()).text()),
                };
                out.push(ReasoningInstance {
                    id: format!("{pair_id}-{m1}{m2}"),
                    pair_id: pair_id.clone(),
                    rule,
                    p1: premise(p1, m1, &s1),
                    p2: premise(p2, m2, &s2),
                    conclusion: conclusion.clone(),
                    hypothesis: hypothesis.clone(),
                    hypothesis_template: hypothesis_template.clone(),
                    golds: golds.clone(),
                    candidates: candidates.clone(),
                    masked_kind: def.masked_kind,
                    pseudoword_slots: slots.clone(),
                });
            }
        }
    }

    let header = ReasoningHeader {
        graph_hash: graph.content_hash(),
        seed: opts.seed,
        grid: opts.grid.clone(),
        rules: opts.rules.clone(),
        budget: opts.budget,
        hypothesis_variant: opts.hypothesis_variant.clone(),
        statement_kind: opts.statement_kind,
        candidate_policy: opts.candidate_policy,
        pairs: pair_counts,
        warnings,
    };
    Ok((header, out))
}

/// A memorizing-style probe of one premise, used to decide whether the
/// model has memorized it: the object of the premise is masked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseProbe {
    pub id: String,
    pub premise: Triple,
    /// Cloze with one mask slot.
    pub prompt: Vec<Segment>,
    pub golds: Vec<String>,
    pub candidates: Vec<String>,
    pub pseudoword_slots: Vec<String>,
}

/// One probe per distinct premise among `instances`.
pub fn premise_probes(
    graph: &OntologyGraph,
    templates: &TemplateSet,
    variant: &str,
    instances: &[ReasoningInstance],
) -> Result<Vec<PremiseProbe>, ReasoningError> {
    let renderer = Renderer {
        graph,
        templates,
        kind: TemplateKind::Manual,
    };
    let classes = class_vocabulary(graph);
    let properties = property_vocabulary(graph);
    let patterns = pattern_vocabulary(graph);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for inst in instances {
        for p in [&inst.p1, &inst.p2] {
            if !seen.insert(p.id.clone()) {
                continue;
            }
            let t = &p.shape;
            let subject = renderer.surface(&t.subject)?;
            let (prompt, gold, vocab) = match t.predicate.as_str() {
                TYPE | SUBCLASS_OF | SUBPROPERTY_OF | DOMAIN | RANGE => {
                    let relation = match t.predicate.as_str() {
                        TYPE => Relation::Type,
                        SUBCLASS_OF => Relation::SubclassOf,
                        SUBPROPERTY_OF => Relation::SubpropertyOf,
                        DOMAIN => Relation::Domain,
                        _ => Relation::Range,
                    };
                    let template = templates.select(relation, variant)?;
                    let phrase = match relation {
                        Relation::Domain | Relation::Range => {
                            let id = crate::ontology::NodeId::new(t.subject.clone())
                                .map_err(|_| ReasoningError::UnknownNode(t.subject.clone()))?;
                            if relation == Relation::Domain {
                                domain_phrase(graph, &id)
                            } else {
                                range_phrase(graph, &id)
                            }
                        }
                        _ => None,
                    };
                    let prompt = crate::prompt::render_template(
                        template,
                        &subject,
                        phrase.as_deref(),
                        1,
                        crate::prompt::Casing::Cased,
                    )?;
                    let gold = graph
                        .label(&t.object)
                        .ok_or_else(|| ReasoningError::UnknownNode(t.object.clone()))?
                        .to_string();
                    let vocab = if relation == Relation::SubpropertyOf {
                        &properties
                    } else {
                        &classes
                    };
                    (prompt.segments, gold, vocab)
                }
                prop => {
                    // Fact premise: the whole pattern is the masked span.
                    let gold =
                        property_pattern(graph, prop).ok_or_else(|| ReasoningError::UnknownNode(prop.to_string()))?;
                    (vec![Segment::Mask, Segment::text(".")], gold, &patterns)
                }
            };
            out.push(PremiseProbe {
                id: p.id.clone(),
                premise: t.clone(),
                prompt,
                golds: vec![gold],
                candidates: vocab.clone(),
                pseudoword_slots: slots_of(&[t]),
            });
        }
    }
    Ok(out)
}

/// Splits a candidate surface on `[X]`-style pseudoword markers.
pub fn candidate_parts(surface: &str, slots: &[String]) -> Vec<Surface> {
    if slots.is_empty() {
        return vec![Surface::Label(surface.to_string())];
    }
    let x = Surface::Pseudo("X".into());
    let y = Surface::Pseudo("Y".into());
    render_pattern(surface, &x, &y)
        .into_iter()
        .map(|s| match s {
            Segment::Pseudo(p) => Surface::Pseudo(p),
            Segment::Text(t) => Surface::Label(t),
            other => Surface::Label(format!("{other:?}")),
        })
        .collect()
}
