//! In-memory ontology graph: classes, properties, instances and the
//! subclass/subproperty/type/domain/range edges between them.
//!
//! The graph is loaded from a triple TSV file (`subject<TAB>predicate<TAB>object`)
//! and validated on load. It is immutable afterwards.
//!
//! Node kinds are inferred from the predicates an id takes part in:
//!
//! | line                      | subject  | object   |
//! |---------------------------|----------|----------|
//! | `x type Class`            | class    | -        |
//! | `x type Property`         | property | -        |
//! | `x type c`                | instance | class    |
//! | `x subclass_of y`         | class    | class    |
//! | `x subproperty_of y`      | property | property |
//! | `p domain c`, `p range c` | property | class    |
//! | `p pattern text`          | property | literal  |
//! | `x label text`            | any      | literal  |
//! | `u p v` (p a property)    | instance | instance |

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Reserved object of a `type` line declaring the subject as a class.
pub const CLASS_DECL: &str = "Class";
/// Reserved object of a `type` line declaring the subject as a property.
pub const PROPERTY_DECL: &str = "Property";

/// Opaque node identifier (IRI suffix or curated id).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(value: impl Into<String>) -> Result<Self, GraphError> {
        let value = value.into();
        if value.is_empty() {
            return Err(GraphError::EmptyId);
        }
        Ok(NodeId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Class,
    Property,
    Instance,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Class => "class",
            NodeKind::Property => "property",
            NodeKind::Instance => "instance",
        })
    }
}

/// Kinds that carry a hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HierarchyKind {
    Class,
    Property,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassNode {
    pub id: NodeId,
    pub label: String,
    pub superclasses: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyNode {
    pub id: NodeId,
    pub label: String,
    pub superproperties: Vec<NodeId>,
    pub domain: Option<NodeId>,
    pub range: Option<NodeId>,
    /// Sentence pattern with one `[X]` (subject) and one `[Y]` (object) slot.
    pub pattern: Option<String>,
    /// Verb phrase completing "One has to be a particular ... to <phrase>" for the domain.
    pub domain_phrase: Option<String>,
    /// Same for the range.
    pub range_phrase: Option<String>,
}

impl PropertyNode {
    pub fn new(id: NodeId, label: impl Into<String>) -> Self {
        PropertyNode {
            id,
            label: label.into(),
            superproperties: Vec::new(),
            domain: None,
            range: None,
            pattern: None,
            domain_phrase: None,
            range_phrase: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceNode {
    pub id: NodeId,
    pub label: String,
    pub types: Vec<NodeId>,
}

/// An assertion `subject property object` between two instances.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub subject: NodeId,
    pub property: NodeId,
    pub object: NodeId,
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: `{id}` is used as a {first} and as a {second}")]
    KindConflict {
        line: usize,
        id: String,
        first: NodeKind,
        second: NodeKind,
    },
    #[error("line {line}: dangling reference to `{id}`")]
    Dangling { line: usize, id: String },
    #[error("{kind} cycle detected: {}", format_cycle(.cycle))]
    Cycle { kind: &'static str, cycle: Vec<NodeId> },
    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: NodeKind, id: String },
    #[error("node id must be non-empty")]
    EmptyId,
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_cycle(cycle: &[NodeId]) -> String {
    cycle.iter().map(NodeId::as_str).collect::<Vec<_>>().join(" -> ")
}

/// Validated ontology graph. Collections keep declaration order.
#[derive(Debug, Clone, Default)]
pub struct OntologyGraph {
    classes: IndexMap<NodeId, ClassNode>,
    properties: IndexMap<NodeId, PropertyNode>,
    instances: IndexMap<NodeId, InstanceNode>,
    facts: Vec<Fact>,
}

impl PartialEq for OntologyGraph {
    fn eq(&self, other: &Self) -> bool {
        // IndexMap equality ignores order; declaration order matters here.
        self.classes.iter().eq(other.classes.iter())
            && self.properties.iter().eq(other.properties.iter())
            && self.instances.iter().eq(other.instances.iter())
            && self.facts == other.facts
    }
}

impl Eq for OntologyGraph {}

impl OntologyGraph {
    /// Builds and validates a graph from node collections.
    pub fn from_parts(
        classes: Vec<ClassNode>,
        properties: Vec<PropertyNode>,
        instances: Vec<InstanceNode>,
        facts: Vec<Fact>,
    ) -> Result<Self, GraphError> {
        let graph = OntologyGraph {
            classes: classes.into_iter().map(|c| (c.id.clone(), c)).collect(),
            properties: properties.into_iter().map(|p| (p.id.clone(), p)).collect(),
            instances: instances.into_iter().map(|i| (i.id.clone(), i)).collect(),
            facts,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn classes(&self) -> impl ExactSizeIterator<Item = &ClassNode> {
        self.classes.values()
    }

    pub fn properties(&self) -> impl ExactSizeIterator<Item = &PropertyNode> {
        self.properties.values()
    }

    pub fn instances(&self) -> impl ExactSizeIterator<Item = &InstanceNode> {
        self.instances.values()
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn class(&self, id: &str) -> Option<&ClassNode> {
        self.classes.get(id)
    }

    pub fn property(&self, id: &str) -> Option<&PropertyNode> {
        self.properties.get(id)
    }

    pub fn instance(&self, id: &str) -> Option<&InstanceNode> {
        self.instances.get(id)
    }

    pub fn kind_of(&self, id: &str) -> Option<NodeKind> {
        if self.classes.contains_key(id) {
            Some(NodeKind::Class)
        } else if self.properties.contains_key(id) {
            Some(NodeKind::Property)
        } else if self.instances.contains_key(id) {
            Some(NodeKind::Instance)
        } else {
            None
        }
    }

    /// Label of any node.
    pub fn label(&self, id: &str) -> Option<&str> {
        self.classes
            .get(id)
            .map(|c| c.label.as_str())
            .or_else(|| self.properties.get(id).map(|p| p.label.as_str()))
            .or_else(|| self.instances.get(id).map(|i| i.label.as_str()))
    }

    /// Transitive superclasses or superproperties of `id`, nearest first.
    ///
    /// Breadth-first over the parent lists; within a layer, nodes come in the
    /// order their parents were visited and then in edge declaration order.
    pub fn ancestors(&self, id: &str, kind: HierarchyKind) -> Result<Vec<NodeId>, GraphError> {
        let direct = self.parents(id, kind).ok_or_else(|| GraphError::UnknownId {
            kind: match kind {
                HierarchyKind::Class => NodeKind::Class,
                HierarchyKind::Property => NodeKind::Property,
            },
            id: id.to_string(),
        })?;
        Ok(self.bfs(direct.iter().cloned(), kind, Some(id)))
    }

    /// All types of an instance: asserted types followed by their ancestors.
    pub fn types_closure(&self, instance: &str) -> Result<Vec<NodeId>, GraphError> {
        let node = self.instances.get(instance).ok_or_else(|| GraphError::UnknownId {
            kind: NodeKind::Instance,
            id: instance.to_string(),
        })?;
        Ok(self.bfs(node.types.iter().cloned(), HierarchyKind::Class, None))
    }

    fn parents(&self, id: &str, kind: HierarchyKind) -> Option<&[NodeId]> {
        match kind {
            HierarchyKind::Class => self.classes.get(id).map(|c| c.superclasses.as_slice()),
            HierarchyKind::Property => self.properties.get(id).map(|p| p.superproperties.as_slice()),
        }
    }

    fn bfs(&self, start: impl Iterator<Item = NodeId>, kind: HierarchyKind, exclude: Option<&str>) -> Vec<NodeId> {
        let mut seen: HashSet<NodeId> = HashSet::new();
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for s in start {
            if seen.insert(s.clone()) {
                queue.push_back(s);
            }
        }
        while let Some(node) = queue.pop_front() {
            if let Some(parents) = self.parents(node.as_str(), kind) {
                for p in parents {
                    if seen.insert(p.clone()) {
                        queue.push_back(p.clone());
                    }
                }
            }
            if exclude != Some(node.as_str()) {
                out.push(node);
            }
        }
        out
    }

    pub fn domain_of(&self, prop: &str) -> Result<Option<&NodeId>, GraphError> {
        self.require_property(prop).map(|p| p.domain.as_ref())
    }

    pub fn range_of(&self, prop: &str) -> Result<Option<&NodeId>, GraphError> {
        self.require_property(prop).map(|p| p.range.as_ref())
    }

    fn require_property(&self, prop: &str) -> Result<&PropertyNode, GraphError> {
        self.properties.get(prop).ok_or_else(|| GraphError::UnknownId {
            kind: NodeKind::Property,
            id: prop.to_string(),
        })
    }

    /// Length of the longest superclass chain above `class` (roots have depth 0).
    pub fn class_depth(&self, class: &str) -> Option<usize> {
        fn depth(g: &OntologyGraph, id: &str, memo: &mut HashMap<String, usize>) -> usize {
            if let Some(&d) = memo.get(id) {
                return d;
            }
            let d = g
                .classes
                .get(id)
                .map(|c| {
                    c.superclasses
                        .iter()
                        .map(|p| depth(g, p.as_str(), memo) + 1)
                        .max()
                        .unwrap_or(0)
                })
                .unwrap_or(0);
            memo.insert(id.to_string(), d);
            d
        }
        self.classes.get(class)?;
        Some(depth(self, class, &mut HashMap::new()))
    }

    fn validate(&self) -> Result<(), GraphError> {
        for c in self.classes.values() {
            if c.label.is_empty() {
                return Err(GraphError::Invalid(format!("class `{}` has an empty label", c.id)));
            }
            let mut seen = HashSet::new();
            for s in &c.superclasses {
                if !seen.insert(s) {
                    return Err(GraphError::Invalid(format!(
                        "class `{}` lists superclass `{s}` twice",
                        c.id
                    )));
                }
                if !self.classes.contains_key(s) {
                    return Err(GraphError::Invalid(format!(
                        "class `{}` has unknown superclass `{s}`",
                        c.id
                    )));
                }
            }
        }
        for p in self.properties.values() {
            if p.label.is_empty() {
                return Err(GraphError::Invalid(format!("property `{}` has an empty label", p.id)));
            }
            let mut seen = HashSet::new();
            for s in &p.superproperties {
                if !seen.insert(s) {
                    return Err(GraphError::Invalid(format!(
                        "property `{}` lists superproperty `{s}` twice",
                        p.id
                    )));
                }
                if !self.properties.contains_key(s) {
                    return Err(GraphError::Invalid(format!(
                        "property `{}` has unknown superproperty `{s}`",
                        p.id
                    )));
                }
            }
            for c in p.domain.iter().chain(p.range.iter()) {
                if !self.classes.contains_key(c) {
                    return Err(GraphError::Invalid(format!(
                        "property `{}` is constrained by unknown class `{c}`",
                        p.id
                    )));
                }
            }
            if let Some(pattern) = &p.pattern {
                check_pattern(pattern).map_err(|m| GraphError::Invalid(format!("property `{}`: {m}", p.id)))?;
            }
        }
        for i in self.instances.values() {
            if i.label.is_empty() {
                return Err(GraphError::Invalid(format!("instance `{}` has an empty label", i.id)));
            }
            if i.types.is_empty() {
                return Err(GraphError::Invalid(format!("instance `{}` has no type", i.id)));
            }
            for t in &i.types {
                if !self.classes.contains_key(t) {
                    return Err(GraphError::Invalid(format!(
                        "instance `{}` has unknown type `{t}`",
                        i.id
                    )));
                }
            }
        }
        for f in &self.facts {
            if !self.properties.contains_key(&f.property) {
                return Err(GraphError::Invalid(format!(
                    "fact uses unknown property `{}`",
                    f.property
                )));
            }
            for end in [&f.subject, &f.object] {
                if !self.instances.contains_key(end) {
                    return Err(GraphError::Invalid(format!("fact references unknown instance `{end}`")));
                }
            }
        }
        if let Some(cycle) = find_cycle(self.classes.values().map(|c| (&c.id, &c.superclasses))) {
            return Err(GraphError::Cycle {
                kind: "subclass",
                cycle,
            });
        }
        if let Some(cycle) = find_cycle(self.properties.values().map(|p| (&p.id, &p.superproperties))) {
            return Err(GraphError::Cycle {
                kind: "subproperty",
                cycle,
            });
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        save_graph_to(self, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

/// A pattern must carry exactly one `[X]` and one `[Y]`.
pub fn check_pattern(pattern: &str) -> Result<(), String> {
    let xs = pattern.matches("[X]").count();
    let ys = pattern.matches("[Y]").count();
    if xs != 1 || ys != 1 {
        return Err(format!(
            "pattern `{pattern}` must contain exactly one [X] and one [Y] (found {xs} and {ys})"
        ));
    }
    Ok(())
}

fn find_cycle<'a>(nodes: impl Iterator<Item = (&'a NodeId, &'a Vec<NodeId>)>) -> Option<Vec<NodeId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let adj: IndexMap<&NodeId, &Vec<NodeId>> = nodes.collect();
    let mut marks: HashMap<&NodeId, Mark> = HashMap::new();

    for &root in adj.keys() {
        if marks.contains_key(root) {
            continue;
        }
        // Iterative DFS: (node, next child index).
        let mut stack: Vec<(&NodeId, usize)> = vec![(root, 0)];
        marks.insert(root, Mark::Open);
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            let children = adj.get(node).map(|v| v.as_slice()).unwrap_or(&[]);
            if *next < children.len() {
                let child = &children[*next];
                *next += 1;
                match marks.get(child) {
                    Some(Mark::Open) => {
                        let start = stack.iter().position(|(n, _)| *n == child).unwrap();
                        let mut cycle: Vec<NodeId> = stack[start..].iter().map(|(n, _)| (*n).clone()).collect();
                        cycle.push(child.clone());
                        return Some(cycle);
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(child, Mark::Open);
                        stack.push((child, 0));
                    }
                }
            } else {
                marks.insert(node, Mark::Done);
                stack.pop();
            }
        }
    }
    None
}

/// One parsed TSV line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleLine {
    pub line: usize,
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

/// Splits triple TSV into lines, skipping blanks and `#` comments.
pub fn parse_triples(reader: impl Read) -> Result<Vec<TripleLine>, GraphError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(GraphError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.trim().is_empty()) {
            return Err(GraphError::Parse {
                line: line_no,
                message: "empty field".into(),
            });
        }
        out.push(TripleLine {
            line: line_no,
            subject: fields[0].trim().to_string(),
            predicate: fields[1].trim().to_string(),
            object: fields[2].trim().to_string(),
        });
    }
    Ok(out)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<OntologyGraph, GraphError> {
    let file = std::fs::File::open(path)?;
    read_graph(file)
}

/// Parses and validates a graph from triple TSV.
pub fn read_graph(reader: impl Read) -> Result<OntologyGraph, GraphError> {
    let lines = parse_triples(reader)?;
    GraphBuilder::default().build(&lines)
}

#[derive(Default)]
struct GraphBuilder {
    kinds: IndexMap<String, (NodeKind, usize)>,
}

impl GraphBuilder {
    fn assign(&mut self, id: &str, kind: NodeKind, line: usize) -> Result<(), GraphError> {
        match self.kinds.get(id) {
            Some(&(existing, _)) if existing != kind => Err(GraphError::KindConflict {
                line,
                id: id.to_string(),
                first: existing,
                second: kind,
            }),
            Some(_) => Ok(()),
            None => {
                self.kinds.insert(id.to_string(), (kind, line));
                Ok(())
            }
        }
    }

    fn build(mut self, lines: &[TripleLine]) -> Result<OntologyGraph, GraphError> {
        use NodeKind::*;
        let mut fact_lines = Vec::new();
        for t in lines {
            match t.predicate.as_str() {
                "type" => match t.object.as_str() {
                    CLASS_DECL => self.assign(&t.subject, Class, t.line)?,
                    PROPERTY_DECL => self.assign(&t.subject, Property, t.line)?,
                    _ => {
                        self.assign(&t.subject, Instance, t.line)?;
                        self.assign(&t.object, Class, t.line)?;
                    }
                },
                "subclass_of" => {
                    self.assign(&t.subject, Class, t.line)?;
                    self.assign(&t.object, Class, t.line)?;
                }
                "subproperty_of" => {
                    self.assign(&t.subject, Property, t.line)?;
                    self.assign(&t.object, Property, t.line)?;
                }
                "domain" | "range" => {
                    self.assign(&t.subject, Property, t.line)?;
                    self.assign(&t.object, Class, t.line)?;
                }
                "pattern" | "domain_phrase" | "range_phrase" => self.assign(&t.subject, Property, t.line)?,
                "label" => {}
                _ => fact_lines.push(t),
            }
        }
        for t in &fact_lines {
            match self.kinds.get(t.predicate.as_str()) {
                Some((Property, _)) => {}
                _ => {
                    return Err(GraphError::Parse {
                        line: t.line,
                        message: format!("unknown predicate `{}`", t.predicate),
                    })
                }
            }
            self.assign(&t.subject, Instance, t.line)?;
            self.assign(&t.object, Instance, t.line)?;
        }

        let mut classes: IndexMap<NodeId, ClassNode> = IndexMap::new();
        let mut properties: IndexMap<NodeId, PropertyNode> = IndexMap::new();
        let mut instances: IndexMap<NodeId, InstanceNode> = IndexMap::new();
        for (id, &(kind, _)) in &self.kinds {
            let nid = NodeId(id.clone());
            match kind {
                Class => {
                    classes.insert(
                        nid.clone(),
                        ClassNode {
                            id: nid,
                            label: String::new(),
                            superclasses: Vec::new(),
                        },
                    );
                }
                Property => {
                    properties.insert(nid.clone(), PropertyNode::new(nid, String::new()));
                }
                Instance => {
                    instances.insert(
                        nid.clone(),
                        InstanceNode {
                            id: nid,
                            label: String::new(),
                            types: Vec::new(),
                        },
                    );
                }
            }
        }

        let dup = |line: usize, what: &str, id: &str| GraphError::Parse {
            line,
            message: format!("duplicate {what} for `{id}`"),
        };
        let mut facts = Vec::new();
        let mut fact_set = HashSet::new();
        for t in lines {
            let s = t.subject.as_str();
            let o = NodeId(t.object.clone());
            match t.predicate.as_str() {
                "type" if t.object == CLASS_DECL || t.object == PROPERTY_DECL => {}
                "type" => {
                    let inst = instances.get_mut(s).expect("assigned above");
                    if inst.types.contains(&o) {
                        return Err(dup(t.line, "type edge", s));
                    }
                    inst.types.push(o);
                }
                "subclass_of" => {
                    let c = classes.get_mut(s).expect("assigned above");
                    if c.superclasses.contains(&o) {
                        return Err(dup(t.line, "subclass_of edge", s));
                    }
                    c.superclasses.push(o);
                }
                "subproperty_of" => {
                    let p = properties.get_mut(s).expect("assigned above");
                    if p.superproperties.contains(&o) {
                        return Err(dup(t.line, "subproperty_of edge", s));
                    }
                    p.superproperties.push(o);
                }
                "domain" | "range" => {
                    let p = properties.get_mut(s).expect("assigned above");
                    let slot = if t.predicate == "domain" {
                        &mut p.domain
                    } else {
                        &mut p.range
                    };
                    if slot.is_some() {
                        return Err(dup(t.line, &t.predicate, s));
                    }
                    *slot = Some(o);
                }
                "pattern" | "domain_phrase" | "range_phrase" => {
                    let p = properties.get_mut(s).expect("assigned above");
                    let slot = match t.predicate.as_str() {
                        "pattern" => &mut p.pattern,
                        "domain_phrase" => &mut p.domain_phrase,
                        _ => &mut p.range_phrase,
                    };
                    if slot.is_some() {
                        return Err(dup(t.line, &t.predicate, s));
                    }
                    if t.predicate == "pattern" {
                        check_pattern(&t.object).map_err(|message| GraphError::Parse { line: t.line, message })?;
                    }
                    *slot = Some(t.object.clone());
                }
                "label" => {
                    let label = if let Some(c) = classes.get_mut(s) {
                        &mut c.label
                    } else if let Some(p) = properties.get_mut(s) {
                        &mut p.label
                    } else if let Some(i) = instances.get_mut(s) {
                        &mut i.label
                    } else {
                        return Err(GraphError::Dangling {
                            line: t.line,
                            id: s.to_string(),
                        });
                    };
                    if !label.is_empty() {
                        return Err(dup(t.line, "label", s));
                    }
                    *label = t.object.clone();
                }
                _ => {
                    let fact = Fact {
                        subject: NodeId(t.subject.clone()),
                        property: NodeId(t.predicate.clone()),
                        object: o,
                    };
                    if !fact_set.insert(fact.clone()) {
                        return Err(dup(t.line, "fact", s));
                    }
                    facts.push(fact);
                }
            }
        }

        // Unlabelled nodes fall back to their id.
        for c in classes.values_mut() {
            if c.label.is_empty() {
                c.label = c.id.0.clone();
            }
        }
        for p in properties.values_mut() {
            if p.label.is_empty() {
                p.label = p.id.0.clone();
            }
        }
        for i in instances.values_mut() {
            if i.label.is_empty() {
                i.label = i.id.0.clone();
            }
            if i.types.is_empty() {
                let line = self.kinds.get(i.id.as_str()).map(|k| k.1).unwrap_or(0);
                return Err(GraphError::Dangling {
                    line,
                    id: format!("{} (instance without a type)", i.id),
                });
            }
        }

        let graph = OntologyGraph {
            classes,
            properties,
            instances,
            facts,
        };
        graph.validate()?;
        Ok(graph)
    }
}

pub fn save_graph(graph: &OntologyGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_graph_to(graph, &mut file)?;
    file.flush()?;
    Ok(())
}

/// Canonical serialization. Kind declarations come first so that reloading
/// reproduces declaration order.
pub fn save_graph_to(graph: &OntologyGraph, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "# ontology graph: {} classes, {} properties, {} instances, {} facts",
        graph.classes.len(),
        graph.properties.len(),
        graph.instances.len(),
        graph.facts.len()
    )?;
    for c in graph.classes.values() {
        writeln!(out, "{}\ttype\t{CLASS_DECL}", c.id)?;
    }
    for p in graph.properties.values() {
        writeln!(out, "{}\ttype\t{PROPERTY_DECL}", p.id)?;
    }
    for i in graph.instances.values() {
        for t in &i.types {
            writeln!(out, "{}\ttype\t{}", i.id, t)?;
        }
    }
    for c in graph.classes.values() {
        writeln!(out, "{}\tlabel\t{}", c.id, c.label)?;
        for s in &c.superclasses {
            writeln!(out, "{}\tsubclass_of\t{}", c.id, s)?;
        }
    }
    for p in graph.properties.values() {
        writeln!(out, "{}\tlabel\t{}", p.id, p.label)?;
        for s in &p.superproperties {
            writeln!(out, "{}\tsubproperty_of\t{}", p.id, s)?;
        }
        if let Some(d) = &p.domain {
            writeln!(out, "{}\tdomain\t{}", p.id, d)?;
        }
        if let Some(r) = &p.range {
            writeln!(out, "{}\trange\t{}", p.id, r)?;
        }
        if let Some(x) = &p.pattern {
            writeln!(out, "{}\tpattern\t{}", p.id, x)?;
        }
        if let Some(x) = &p.domain_phrase {
            writeln!(out, "{}\tdomain_phrase\t{}", p.id, x)?;
        }
        if let Some(x) = &p.range_phrase {
            writeln!(out, "{}\trange_phrase\t{}", p.id, x)?;
        }
    }
    for i in graph.instances.values() {
        writeln!(out, "{}\tlabel\t{}", i.id, i.label)?;
    }
    for f in &graph.facts {
        writeln!(out, "{}\t{}\t{}", f.subject, f.property, f.object)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(src: &str) -> Result<OntologyGraph, GraphError> {
        read_graph(src.as_bytes())
    }

    fn ids(v: &[NodeId]) -> Vec<&str> {
        v.iter().map(NodeId::as_str).collect()
    }

    const FIG1: &str = "\
person\tsubclass_of\tanimal
animal\tsubclass_of\teukaryote
sports_team\tsubclass_of\torganisation
member_of_sports_team\tdomain\tperson
member_of_sports_team\trange\tsports_team
member_of_sports_team\tsubproperty_of\tmember_of
messi\ttype\tperson
arg_team\ttype\tsports_team
messi\tmember_of_sports_team\targ_team
messi\tlabel\tLionel Messi
";

    #[test]
    fn ancestors_are_nearest_first() {
        let g = graph(FIG1).unwrap();
        assert_eq!(
            ids(&g.ancestors("person", HierarchyKind::Class).unwrap()),
            ["animal", "eukaryote"]
        );
        assert!(g.ancestors("eukaryote", HierarchyKind::Class).unwrap().is_empty());
        assert_eq!(
            ids(&g.types_closure("messi").unwrap()),
            ["person", "animal", "eukaryote"]
        );
    }

    #[test]
    fn diamond_is_deduplicated() {
        let g = graph("a\tsubclass_of\tb\na\tsubclass_of\tc\nb\tsubclass_of\td\nc\tsubclass_of\td\n").unwrap();
        assert_eq!(ids(&g.ancestors("a", HierarchyKind::Class).unwrap()), ["b", "c", "d"]);
    }

    #[test]
    fn domain_and_range_are_stored_constraints() {
        let g = graph(FIG1).unwrap();
        assert_eq!(
            g.domain_of("member_of_sports_team").unwrap().unwrap().as_str(),
            "person"
        );
        assert_eq!(
            g.range_of("member_of_sports_team").unwrap().unwrap().as_str(),
            "sports_team"
        );
        assert!(g.domain_of("member_of").unwrap().is_none());
        assert!(matches!(g.domain_of("nope"), Err(GraphError::UnknownId { .. })));
    }

    #[test]
    fn unknown_id_is_an_error() {
        let g = graph(FIG1).unwrap();
        assert!(matches!(
            g.ancestors("messi", HierarchyKind::Class),
            Err(GraphError::UnknownId { .. })
        ));
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let err = graph("Person\tsubclass_of\tPerson\n").unwrap_err();
        match err {
            GraphError::Cycle { cycle, .. } => assert_eq!(ids(&cycle), ["Person", "Person"]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn longer_cycle_is_reported() {
        let err = graph("a\tsubproperty_of\tb\nb\tsubproperty_of\tc\nc\tsubproperty_of\ta\n").unwrap_err();
        match err {
            GraphError::Cycle { kind, cycle } => {
                assert_eq!(kind, "subproperty");
                assert_eq!(ids(&cycle), ["a", "b", "c", "a"]);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = graph("# header\na\tsubclass_of\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }), "{err}");
        let err = graph("a\tsubclass_of\tb\nx\tfrobnicates\ty\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn dangling_label_is_rejected() {
        let err = graph("a\tsubclass_of\tb\nghost\tlabel\tGhost\n").unwrap_err();
        assert!(matches!(err, GraphError::Dangling { line: 2, .. }), "{err}");
    }

    #[test]
    fn kind_conflicts_are_rejected() {
        let err = graph("a\tsubclass_of\tb\na\tsubproperty_of\tc\n").unwrap_err();
        assert!(matches!(err, GraphError::KindConflict { line: 2, .. }), "{err}");
    }

    #[test]
    fn bad_pattern_is_rejected() {
        let err = graph("p\ttype\tProperty\np\tpattern\t[X] likes [X]\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn untyped_fact_endpoint_is_rejected() {
        let err = graph("p\ttype\tProperty\nc\ttype\tClass\nu\ttype\tc\nu\tp\tv\n").unwrap_err();
        assert!(matches!(err, GraphError::Dangling { .. }), "{err}");
    }

    #[test]
    fn labels_default_to_ids() {
        let g = graph(FIG1).unwrap();
        assert_eq!(g.label("messi"), Some("Lionel Messi"));
        assert_eq!(g.label("person"), Some("person"));
    }

    #[test]
    fn save_then_load_is_identity() {
        let g = graph(FIG1).unwrap();
        let mut buf = Vec::new();
        save_graph_to(&g, &mut buf).unwrap();
        let back = read_graph(buf.as_slice()).unwrap();
        assert_eq!(g, back);
        assert_eq!(g.content_hash(), back.content_hash());
    }

    #[test]
    fn depth_is_longest_chain() {
        let g = graph("a\tsubclass_of\tb\na\tsubclass_of\tc\nc\tsubclass_of\td\n").unwrap();
        assert_eq!(g.class_depth("a"), Some(2));
        assert_eq!(g.class_depth("d"), Some(0));
        assert_eq!(g.class_depth("zz"), None);
    }
}
