//! Graph construction from offline dumps: per-class instance sampling,
//! property alignment across two vocabularies and constraint cleansing.
//!
//! Dumps use the triple TSV format. Property dumps add an `equivalent`
//! predicate linking a property to its counterpart in the other vocabulary;
//! their `domain`/`range` objects are raw class ids or labels.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Read;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::ontology::{parse_triples, ClassNode, Fact, GraphError, InstanceNode, NodeId, OntologyGraph, PropertyNode};
use crate::util::seeded_rng;

pub const DEFAULT_SAMPLE: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("line {line}: {message}")]
    Dump { line: usize, message: String },
    #[error("patch line {line}: {message}")]
    Patch { line: usize, message: String },
    #[error("class vocabulary is empty")]
    EmptyVocabulary,
    #[error("sample size must be at least 1")]
    ZeroSample,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPropertyRecord {
    pub source_id: String,
    pub label: Option<String>,
    pub superproperties: Vec<String>,
    /// Raw class ids or labels, in declaration order.
    pub domain_candidates: Vec<String>,
    pub range_candidates: Vec<String>,
    /// Ids in the other vocabulary.
    pub equivalents: Vec<String>,
    pub pattern: Option<String>,
    pub domain_phrase: Option<String>,
    pub range_phrase: Option<String>,
}

fn set_once(slot: &mut Option<String>, value: &str, line: usize, what: &str) -> Result<(), IngestError> {
    if slot.is_some() {
        return Err(IngestError::Dump {
            line,
            message: format!("duplicate {what}"),
        });
    }
    *slot = Some(value.to_string());
    Ok(())
}

/// Property records in order of first appearance.
pub fn parse_property_dump(reader: impl Read) -> Result<Vec<RawPropertyRecord>, IngestError> {
    let mut records: Vec<RawPropertyRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for t in parse_triples(reader)? {
        let i = *index.entry(t.subject.clone()).or_insert_with(|| {
            records.push(RawPropertyRecord {
                source_id: t.subject.clone(),
                ..Default::default()
            });
            records.len() - 1
        });
        let r = &mut records[i];
        let push = |v: &mut Vec<String>, o: &str| {
            if !v.iter().any(|x| x == o) {
                v.push(o.to_string());
            }
        };
        match t.predicate.as_str() {
            "label" => set_once(&mut r.label, &t.object, t.line, "label")?,
            "pattern" => set_once(&mut r.pattern, &t.object, t.line, "pattern")?,
            "domain_phrase" => set_once(&mut r.domain_phrase, &t.object, t.line, "domain_phrase")?,
            "range_phrase" => set_once(&mut r.range_phrase, &t.object, t.line, "range_phrase")?,
            "subproperty_of" => push(&mut r.superproperties, &t.object),
            "domain" => push(&mut r.domain_candidates, &t.object),
            "range" => push(&mut r.range_candidates, &t.object),
            "equivalent" => push(&mut r.equivalents, &t.object),
            "type" if t.object == "Property" => {}
            other => {
                return Err(IngestError::Dump {
                    line: t.line,
                    message: format!("unexpected predicate `{other}` in a property dump"),
                })
            }
        }
    }
    Ok(records)
}

/// Instance dump: `type` lines give class membership, `label` lines labels,
/// and any other predicate is a fact between instances.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstanceDump {
    /// Class id to members in order of appearance.
    pub members: BTreeMap<String, Vec<String>>,
    pub labels: HashMap<String, String>,
    pub facts: Vec<(String, String, String)>,
}

pub fn parse_instance_dump(reader: impl Read) -> Result<InstanceDump, IngestError> {
    let mut dump = InstanceDump::default();
    for t in parse_triples(reader)? {
        match t.predicate.as_str() {
            "type" => {
                let m = dump.members.entry(t.object).or_default();
                if !m.contains(&t.subject) {
                    m.push(t.subject);
                }
            }
            "label" => {
                if dump.labels.insert(t.subject, t.object).is_some() {
                    return Err(IngestError::Dump {
                        line: t.line,
                        message: "duplicate label".into(),
                    });
                }
            }
            _ => dump.facts.push((t.subject, t.predicate, t.object)),
        }
    }
    Ok(dump)
}

/// Up to `k` members per class, uniformly without replacement, kept in
/// their input order.
pub fn sample_instances(
    members: &BTreeMap<String, Vec<String>>,
    k: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<String>>, IngestError> {
    if k == 0 {
        return Err(IngestError::ZeroSample);
    }
    Ok(members
        .iter()
        .map(|(class, list)| {
            let chosen = if list.len() <= k {
                list.clone()
            } else {
                let mut idx = sample(&mut seeded_rng(seed, &format!("sample/{class}")), list.len(), k).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| list[i].clone()).collect()
            };
            (class.clone(), chosen)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CleanseOptions {
    /// Drop properties left without a domain or a range.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyReportRow {
    pub property: String,
    pub kept: bool,
    pub reason: Option<String>,
    pub domain: Option<String>,
    pub range: Option<String>,
    /// `no-domain`, `no-range`, `no-superproperty`.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub classes: usize,
    pub properties_total: usize,
    pub properties_kept: usize,
    pub properties_dropped: usize,
    /// Domain/range candidates removed as out of vocabulary or less specific.
    pub constraints_cleansed: usize,
    pub instances_sampled: usize,
    pub facts_kept: usize,
    pub patched: usize,
    pub rows: Vec<PropertyReportRow>,
}

impl IngestReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("classes", self.classes),
            ("properties_total", self.properties_total),
            ("properties_kept", self.properties_kept),
            ("properties_dropped", self.properties_dropped),
            ("constraints_cleansed", self.constraints_cleansed),
            ("instances_sampled", self.instances_sampled),
            ("facts_kept", self.facts_kept),
            ("patched", self.patched),
        ] {
            let _ = writeln!(out, "# {k}\t{v}");
        }
        out.push_str("property\tstatus\treason\tdomain\trange\tflags\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.property,
                if r.kept { "kept" } else { "dropped" },
                r.reason.as_deref().unwrap_or(""),
                r.domain.as_deref().unwrap_or(""),
                r.range.as_deref().unwrap_or(""),
                r.flags.join(",")
            );
        }
        out
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Output of [`align_and_cleanse`].
#[derive(Debug, Clone)]
pub struct Aligned {
    pub properties: Vec<PropertyNode>,
    /// Every source id (including merged ones) to its kept property id.
    pub aliases: BTreeMap<String, String>,
    pub report: IngestReport,
}

/// Resolves a raw class reference by id, then by label.
fn resolve_class(classes: &OntologyGraph, raw: &str) -> Option<NodeId> {
    if let Some(c) = classes.class(raw) {
        return Some(c.id.clone());
    }
    classes.classes().find(|c| c.label == raw).map(|c| c.id.clone())
}

/// Deepest surviving candidate; ties keep the earlier declaration.
fn most_specific(classes: &OntologyGraph, raw: &[String], cleansed: &mut usize) -> Option<NodeId> {
    let mut best: Option<(NodeId, usize)> = None;
    let mut survivors = 0;
    for r in raw {
        let Some(id) = resolve_class(classes, r) else {
            *cleansed += 1;
            continue;
        };
        survivors += 1;
        let depth = classes.class_depth(id.as_str()).unwrap_or(0);
        if best.as_ref().is_none_or(|(_, d)| depth > *d) {
            best = Some((id, depth));
        }
    }
    if survivors > 1 {
        *cleansed += survivors - 1;
    }
    best.map(|(id, _)| id)
}

/// Merges records linked by `equivalent` edges and reduces their
/// domain/range candidates to one in-vocabulary class each.
///
/// A merged group takes the smallest source id of its members; its label,
/// pattern and phrases come from the first member (by source id) that has
/// them.
pub fn align_and_cleanse(
    records: &[RawPropertyRecord],
    classes: &OntologyGraph,
    opts: CleanseOptions,
) -> Result<Aligned, IngestError> {
    if classes.classes().len() == 0 {
        return Err(IngestError::EmptyVocabulary);
    }
    let mut sorted: Vec<&RawPropertyRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    let pos: HashMap<&str, usize> = sorted
        .iter()
        .enumerate()
        .map(|(i, r)| (r.source_id.as_str(), i))
        .collect();
    let mut parent: Vec<usize> = (0..sorted.len()).collect();
    for (i, r) in sorted.iter().enumerate() {
        for e in &r.equivalents {
            if let Some(&j) = pos.get(e.as_str()) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                // Smaller index (smaller source id) becomes the root.
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..sorted.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut aliases = BTreeMap::new();
    for (root, members) in &groups {
        for m in members {
            aliases.insert(sorted[*m].source_id.clone(), sorted[*root].source_id.clone());
        }
    }

    let mut report = IngestReport {
        classes: classes.classes().len(),
        properties_total: records.len(),
        ..Default::default()
    };
    let mut rows: BTreeMap<String, PropertyReportRow> = BTreeMap::new();
    let mut props: Vec<PropertyNode> = Vec::new();
    for (root, members) in &groups {
        let canonical = &sorted[*root].source_id;
        for m in members.iter().filter(|m| *m != root) {
            rows.insert(
                sorted[*m].source_id.clone(),
                PropertyReportRow {
                    property: sorted[*m].source_id.clone(),
                    kept: false,
                    reason: Some(format!("aligned into {canonical}")),
                    domain: None,
                    range: None,
                    flags: vec![],
                },
            );
        }
        let recs: Vec<&RawPropertyRecord> = members.iter().map(|m| sorted[*m]).collect();
        let first = |f: &dyn Fn(&RawPropertyRecord) -> Option<String>| recs.iter().find_map(|r| f(r));
        let union = |f: &dyn Fn(&RawPropertyRecord) -> &Vec<String>| {
            let mut out: Vec<String> = Vec::new();
            for r in &recs {
                for x in f(r) {
                    if !out.contains(x) {
                        out.push(x.clone());
                    }
                }
            }
            out
        };
        let id = NodeId::new(canonical.clone())?;
        let mut node = PropertyNode::new(id, first(&|r| r.label.clone()).unwrap_or_else(|| canonical.clone()));
        node.pattern = first(&|r| r.pattern.clone());
        node.domain_phrase = first(&|r| r.domain_phrase.clone());
        node.range_phrase = first(&|r| r.range_phrase.clone());
        node.domain = most_specific(
            classes,
            &union(&|r| &r.domain_candidates),
            &mut report.constraints_cleansed,
        );
        node.range = most_specific(
            classes,
            &union(&|r| &r.range_candidates),
            &mut report.constraints_cleansed,
        );
        // Superproperties resolved after all groups are known.
        node.superproperties = union(&|r| &r.superproperties)
            .into_iter()
            .filter_map(|s| NodeId::new(s).ok())
            .collect();
        props.push(node);
    }

    // Strict mode drops incomplete properties before superproperty links
    // are resolved, so links never point at a dropped property.
    let mut dropped: BTreeSet<String> = BTreeSet::new();
    if opts.strict {
        for p in &props {
            if p.domain.is_none() || p.range.is_none() {
                dropped.insert(p.id.as_str().to_string());
            }
        }
    }
    props.retain(|p| !dropped.contains(p.id.as_str()));
    let kept_ids: BTreeSet<String> = props.iter().map(|p| p.id.as_str().to_string()).collect();
    for p in &mut props {
        let own = p.id.clone();
        let mut supers: Vec<NodeId> = Vec::new();
        for s in &p.superproperties {
            let Some(target) = aliases.get(s.as_str()) else {
                continue;
            };
            if target == own.as_str() || !kept_ids.contains(target) {
                continue;
            }
            let target = NodeId::new(target.clone())?;
            if !supers.contains(&target) {
                supers.push(target);
            }
        }
        p.superproperties = supers;
    }
    for d in &dropped {
        let flags = vec!["incomplete".to_string()];
        rows.insert(
            d.clone(),
            PropertyReportRow {
                property: d.clone(),
                kept: false,
                reason: Some("missing domain or range".into()),
                domain: None,
                range: None,
                flags,
            },
        );
    }
    for p in &props {
        let mut flags = Vec::new();
        if p.domain.is_none() {
            flags.push("no-domain".to_string());
        }
        if p.range.is_none() {
            flags.push("no-range".to_string());
        }
        if p.superproperties.is_empty() {
            flags.push("no-superproperty".to_string());
        }
        rows.insert(
            p.id.as_str().to_string(),
            PropertyReportRow {
                property: p.id.as_str().to_string(),
                kept: true,
                reason: None,
                domain: p.domain.as_ref().map(|d| d.as_str().to_string()),
                range: p.range.as_ref().map(|d| d.as_str().to_string()),
                flags,
            },
        );
    }
    aliases.retain(|_, v| kept_ids.contains(v));
    report.properties_kept = props.len();
    report.properties_dropped = records.len() - props.len();
    report.rows = rows.into_values().collect();
    Ok(Aligned {
        properties: props,
        aliases,
        report,
    })
}

/// Applies `property<TAB>domain|range<TAB>class` overrides. Returns the
/// number of lines applied.
pub fn apply_patch(aligned: &mut Aligned, classes: &OntologyGraph, patch: impl Read) -> Result<usize, IngestError> {
    let lines = parse_triples(patch).map_err(|e| match e {
        GraphError::Parse { line, message } => IngestError::Patch { line, message },
        other => other.into(),
    })?;
    for t in &lines {
        let err = |message: String| IngestError::Patch { line: t.line, message };
        let pid = aligned
            .aliases
            .get(&t.subject)
            .cloned()
            .ok_or_else(|| err(format!("unknown property `{}`", t.subject)))?;
        let class = resolve_class(classes, &t.object).ok_or_else(|| err(format!("unknown class `{}`", t.object)))?;
        let prop = aligned
            .properties
            .iter_mut()
            .find(|p| p.id.as_str() == pid)
            .expect("aliases only name kept properties");
        match t.predicate.as_str() {
            "domain" => prop.domain = Some(class.clone()),
            "range" => prop.range = Some(class.clone()),
            other => return Err(err(format!("patch predicate must be domain or range, not `{other}`"))),
        }
        if let Some(row) = aligned.report.rows.iter_mut().find(|r| r.property == pid) {
            row.domain = prop.domain.as_ref().map(|d| d.as_str().to_string());
            row.range = prop.range.as_ref().map(|d| d.as_str().to_string());
            row.flags.retain(|f| match t.predicate.as_str() {
                "domain" => f != "no-domain",
                _ => f != "no-range",
            });
        }
    }
    aligned.report.patched += lines.len();
    Ok(lines.len())
}

/// Builds the final graph from the class hierarchy, cleansed properties and
/// sampled instances. Facts survive when both ends were sampled and the
/// property was kept.
pub fn assemble_graph(
    classes: &OntologyGraph,
    aligned: &mut Aligned,
    sampled: &BTreeMap<String, Vec<String>>,
    dump: &InstanceDump,
) -> Result<OntologyGraph, IngestError> {
    let class_nodes: Vec<ClassNode> = classes.classes().cloned().collect();
    let mut instances: Vec<InstanceNode> = Vec::new();
    let mut at: HashMap<String, usize> = HashMap::new();
    // Walk classes in declaration order for a stable instance order.
    for c in classes.classes() {
        let Some(members) = sampled.get(c.id.as_str()) else {
            continue;
        };
        for m in members {
            if classes.class(m).is_some() || aligned.aliases.contains_key(m) {
                log::warn!("skipping instance `{m}`: id already names a class or property");
                continue;
            }
            match at.get(m) {
                Some(&i) => instances[i].types.push(c.id.clone()),
                None => {
                    at.insert(m.clone(), instances.len());
                    instances.push(InstanceNode {
                        id: NodeId::new(m.clone())?,
                        label: dump.labels.get(m).cloned().unwrap_or_else(|| m.clone()),
                        types: vec![c.id.clone()],
                    });
                }
            }
        }
    }
    let mut facts = Vec::new();
    for (s, p, o) in &dump.facts {
        let (Some(prop), true, true) = (aligned.aliases.get(p), at.contains_key(s), at.contains_key(o)) else {
            continue;
        };
        let f = Fact {
            subject: NodeId::new(s.clone())?,
            property: NodeId::new(prop.clone())?,
            object: NodeId::new(o.clone())?,
        };
        if !facts.contains(&f) {
            facts.push(f);
        }
    }
    aligned.report.instances_sampled = instances.len();
    aligned.report.facts_kept = facts.len();
    Ok(OntologyGraph::from_parts(
        class_nodes,
        aligned.properties.clone(),
        instances,
        facts,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::read_graph;

    const CLASSES: &str = "\
agent\ttype\tClass
agent\tlabel\tAgent
person\tsubclass_of\tagent
person\tlabel\tPerson
organisation\tsubclass_of\tagent
organisation\tlabel\tOrganisation
team\tsubclass_of\torganisation
team\tlabel\tsports team
place\ttype\tClass
";

    fn classes() -> OntologyGraph {
        read_graph(CLASSES.as_bytes()).unwrap()
    }

    fn rec(id: &str) -> RawPropertyRecord {
        RawPropertyRecord {
            source_id: id.into(),
            ..Default::default()
        }
    }

    #[test]
    fn sampling_caps_and_is_deterministic() {
        let mut m = BTreeMap::new();
        m.insert(
            "big".to_string(),
            (0..100).map(|i| format!("i{i:03}")).collect::<Vec<_>>(),
        );
        m.insert("small".to_string(), (0..5).map(|i| format!("s{i}")).collect());
        let a = sample_instances(&m, 20, 4).unwrap();
        assert_eq!(a["big"].len(), 20);
        assert_eq!(a["small"].len(), 5);
        assert_eq!(a, sample_instances(&m, 20, 4).unwrap());
        assert_ne!(a, sample_instances(&m, 20, 5).unwrap());
        let mut sorted = a["big"].clone();
        sorted.sort();
        assert_eq!(sorted, a["big"]);
        assert!(matches!(sample_instances(&m, 0, 1), Err(IngestError::ZeroSample)));
    }

    #[test]
    fn deepest_domain_wins() {
        let mut r = rec("p1");
        r.domain_candidates = vec!["Agent".into(), "Person".into()];
        r.range_candidates = vec!["Mars".into()];
        let out = align_and_cleanse(&[r], &classes(), CleanseOptions::default()).unwrap();
        let p = &out.properties[0];
        assert_eq!(p.domain.as_ref().unwrap().as_str(), "person");
        assert!(p.range.is_none());
        assert_eq!(out.report.constraints_cleansed, 2);
        assert!(out.report.rows[0].flags.contains(&"no-range".to_string()));
    }

    #[test]
    fn equal_depth_keeps_first() {
        let mut r = rec("p1");
        r.domain_candidates = vec!["organisation".into(), "person".into()];
        let out = align_and_cleanse(&[r], &classes(), CleanseOptions::default()).unwrap();
        assert_eq!(out.properties[0].domain.as_ref().unwrap().as_str(), "organisation");
    }

    #[test]
    fn alignment_merges_equivalents() {
        let mut a = rec("wd:P54");
        a.label = Some("member of sports team".into());
        a.equivalents = vec!["dbo:team".into()];
        a.domain_candidates = vec!["person".into()];
        let mut b = rec("dbo:team");
        b.range_candidates = vec!["sports team".into()];
        b.superproperties = vec!["dbo:member".into()];
        let mut c = rec("dbo:member");
        c.domain_candidates = vec!["agent".into()];
        c.range_candidates = vec!["organisation".into()];
        let out = align_and_cleanse(&[a, b, c], &classes(), CleanseOptions::default()).unwrap();
        assert_eq!(out.properties.len(), 2);
        let team = out.properties.iter().find(|p| p.id.as_str() == "dbo:team").unwrap();
        assert_eq!(team.label, "member of sports team");
        assert_eq!(team.domain.as_ref().unwrap().as_str(), "person");
        assert_eq!(team.range.as_ref().unwrap().as_str(), "team");
        assert_eq!(team.superproperties[0].as_str(), "dbo:member");
        assert_eq!(out.aliases["wd:P54"], "dbo:team");
        let r = &out.report;
        assert_eq!(r.properties_kept + r.properties_dropped, r.properties_total);
        assert!(r.rows.iter().any(|row| row.property == "wd:P54" && !row.kept));
    }

    #[test]
    fn strict_mode_drops_incomplete() {
        let mut a = rec("a");
        a.domain_candidates = vec!["person".into()];
        a.range_candidates = vec!["place".into()];
        let mut b = rec("b");
        b.superproperties = vec!["a".into()];
        let mut c = rec("c");
        c.superproperties = vec!["b".into()];
        c.domain_candidates = vec!["person".into()];
        c.range_candidates = vec!["place".into()];
        let out = align_and_cleanse(&[a, b, c], &classes(), CleanseOptions { strict: true }).unwrap();
        let ids: Vec<&str> = out.properties.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!(out.properties[1].superproperties.is_empty());
        assert_eq!(out.report.properties_dropped, 1);
        for p in &out.properties {
            for c in p.domain.iter().chain(&p.range) {
                assert!(classes().class(c.as_str()).is_some());
            }
        }
    }

    #[test]
    fn patch_overrides_constraints() {
        let mut r = rec("p");
        r.domain_candidates = vec!["agent".into()];
        let c = classes();
        let mut out = align_and_cleanse(&[r], &c, CleanseOptions::default()).unwrap();
        let n = apply_patch(&mut out, &c, "p\tdomain\tperson\np\trange\tplace\n".as_bytes()).unwrap();
        assert_eq!(n, 2);
        assert_eq!(out.properties[0].domain.as_ref().unwrap().as_str(), "person");
        assert_eq!(out.properties[0].range.as_ref().unwrap().as_str(), "place");
        assert!(!out.report.rows[0].flags.contains(&"no-range".to_string()));
        assert!(apply_patch(&mut out, &c, "p\tdomain\tmars\n".as_bytes()).is_err());
        assert!(apply_patch(&mut out, &c, "q\tdomain\tperson\n".as_bytes()).is_err());
        assert!(apply_patch(&mut out, &c, "p\tlabel\tperson\n".as_bytes()).is_err());
    }

    #[test]
    fn dumps_assemble_into_a_graph() {
        let props = parse_property_dump(
            "wd:P1\tlabel\tmember of\nwd:P1\tdomain\tPerson\nwd:P1\trange\tOrganisation\nwd:P1\tequivalent\tdbo:m\ndbo:m\tlabel\tmember\n"
                .as_bytes(),
        )
        .unwrap();
        assert_eq!(props.len(), 2);
        let dump = parse_instance_dump(
            "messi\ttype\tperson\nmessi\tlabel\tLionel Messi\nbarca\ttype\tteam\nmessi\twd:P1\tbarca\nmessi\twd:P1\tnobody\n"
                .as_bytes(),
        )
        .unwrap();
        let c = classes();
        let mut aligned = align_and_cleanse(&props, &c, CleanseOptions::default()).unwrap();
        let sampled = sample_instances(&dump.members, 20, 1).unwrap();
        let g = assemble_graph(&c, &mut aligned, &sampled, &dump).unwrap();
        assert_eq!(g.instances().len(), 2);
        assert_eq!(g.label("messi"), Some("Lionel Messi"));
        assert_eq!(g.facts().len(), 1);
        assert_eq!(g.facts()[0].property.as_str(), "dbo:m");
        assert_eq!(aligned.report.facts_kept, 1);
        let tsv = aligned.report.to_tsv();
        assert!(tsv.contains("# properties_total\t2"));
    }

    #[test]
    fn property_dump_errors() {
        assert!(parse_property_dump("p\tlabel\ta\np\tlabel\tb\n".as_bytes()).is_err());
        assert!(parse_property_dump("p\tweird\ta\n".as_bytes()).is_err());
    }
}
