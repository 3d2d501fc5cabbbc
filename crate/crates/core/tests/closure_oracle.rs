//! The rule engine against a naive all-pairs fixpoint written out by hand.

use std::collections::HashSet;

use ontoprobe::entailment::{apply_rule, materialize, materialize_closure, RdfsRule, Triple};
use ontoprobe::ontology::{ClassNode, Fact, InstanceNode, NodeId, OntologyGraph, PropertyNode};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(s: &str, p: &str, o: &str) -> Triple {
    Triple::new(s, p, o)
}

/// One round: every rule over every ordered pair of known triples.
fn naive_step(known: &HashSet<Triple>) -> HashSet<Triple> {
    let mut out = known.clone();
    for a in known {
        for b in known {
            // rdfs2 / rdfs3
            if a.predicate == "domain" && b.predicate == a.subject {
                out.insert(t(&b.subject, "type", &a.object));
            }
            if a.predicate == "range" && b.predicate == a.subject {
                out.insert(t(&b.object, "type", &a.object));
            }
            // rdfs5
            if a.predicate == "subproperty_of" && b.predicate == "subproperty_of" && b.object == a.subject {
                out.insert(t(&b.subject, "subproperty_of", &a.object));
            }
            // rdfs7
            if a.predicate == "subproperty_of" && b.predicate == a.subject {
                out.insert(t(&b.subject, &a.object, &b.object));
            }
            // rdfs9
            if a.predicate == "subclass_of" && b.predicate == "type" && b.object == a.subject {
                out.insert(t(&b.subject, "type", &a.object));
            }
            // rdfs11
            if a.predicate == "subclass_of" && b.predicate == "subclass_of" && b.object == a.subject {
                out.insert(t(&b.subject, "subclass_of", &a.object));
            }
        }
    }
    out
}

fn naive_fixpoint(base: &[Triple]) -> HashSet<Triple> {
    let mut known: HashSet<Triple> = base.iter().cloned().collect();
    loop {
        let next = naive_step(&known);
        if next.len() == known.len() {
            return known;
        }
        known = next;
    }
}

fn id(s: String) -> NodeId {
    NodeId::new(s).unwrap()
}

/// A valid graph with at most 30 nodes; hierarchies point only to earlier
/// nodes, so they are acyclic.
fn random_graph(rng: &mut ChaCha8Rng) -> (OntologyGraph, Vec<Triple>) {
    let nc = rng.random_range(1..=10);
    let np = rng.random_range(0..=8);
    let ni = rng.random_range(0..=(30 - nc - np).min(12));
    let mut base = Vec::new();
    let classes: Vec<ClassNode> = (0..nc)
        .map(|i| {
            let mut sup: Vec<NodeId> = Vec::new();
            for _ in 0..rng.random_range(0..=2) {
                if i > 0 {
                    let j = rng.random_range(0..i);
                    let s = id(format!("c{j}"));
                    if !sup.contains(&s) {
                        base.push(t(&format!("c{i}"), "subclass_of", s.as_str()));
                        sup.push(s);
                    }
                }
            }
            ClassNode {
                id: id(format!("c{i}")),
                label: format!("class {i}"),
                superclasses: sup,
            }
        })
        .collect();
    let properties: Vec<PropertyNode> = (0..np)
        .map(|i| {
            let mut p = PropertyNode::new(id(format!("p{i}")), format!("prop {i}"));
            if i > 0 && rng.random_bool(0.6) {
                let s = id(format!("p{}", rng.random_range(0..i)));
                base.push(t(&format!("p{i}"), "subproperty_of", s.as_str()));
                p.superproperties.push(s);
            }
            if rng.random_bool(0.6) {
                let c = format!("c{}", rng.random_range(0..nc));
                base.push(t(&format!("p{i}"), "domain", &c));
                p.domain = Some(id(c));
            }
            if rng.random_bool(0.6) {
                let c = format!("c{}", rng.random_range(0..nc));
                base.push(t(&format!("p{i}"), "range", &c));
                p.range = Some(id(c));
            }
            p
        })
        .collect();
    let instances: Vec<InstanceNode> = (0..ni)
        .map(|i| {
            let c = format!("c{}", rng.random_range(0..nc));
            base.push(t(&format!("i{i}"), "type", &c));
            InstanceNode {
                id: id(format!("i{i}")),
                label: format!("inst {i}"),
                types: vec![id(c)],
            }
        })
        .collect();
    let mut facts = Vec::new();
    if ni > 0 && np > 0 {
        for _ in 0..rng.random_range(0..=10) {
            let (s, p, o) = (
                format!("i{}", rng.random_range(0..ni)),
                format!("p{}", rng.random_range(0..np)),
                format!("i{}", rng.random_range(0..ni)),
            );
            base.push(t(&s, &p, &o));
            facts.push(Fact {
                subject: id(s),
                property: id(p),
                object: id(o),
            });
        }
    }
    let graph = OntologyGraph::from_parts(classes, properties, instances, facts).unwrap();
    (graph, base)
}

#[test]
fn closure_matches_naive_fixpoint_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for round in 0..100 {
        let (graph, base) = random_graph(&mut rng);
        let closure = materialize_closure(&graph);
        let expected = naive_fixpoint(&base);
        assert_eq!(closure.triple_set(), expected, "graph {round}");
        assert_eq!(closure.triples.len(), expected.len(), "duplicates in graph {round}");
    }
}

#[test]
fn provenance_replays_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let (graph, _) = random_graph(&mut rng);
        let c = materialize_closure(&graph);
        for (k, (triple, d)) in c.derived().enumerate() {
            let at = c.asserted + k;
            assert!(d.premises.iter().all(|&p| p < at), "premise after conclusion");
            let got = apply_rule(d.rule, &c.triples[d.premises[0]], &c.triples[d.premises[1]]).unwrap();
            assert_eq!(&got, triple);
        }
    }
}

/// Raw triple soups, including hierarchy cycles a validated graph rejects.
#[test]
fn closure_matches_naive_fixpoint_on_cyclic_soups() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let nodes: Vec<String> = (0..8).map(|i| format!("n{i}")).collect();
    let preds = [
        "type",
        "subclass_of",
        "subproperty_of",
        "domain",
        "range",
        "n0",
        "n1",
        "n2",
    ];
    for _ in 0..100 {
        let base: Vec<Triple> = (0..rng.random_range(0..25))
            .map(|_| {
                t(
                    nodes.choose(&mut rng).unwrap(),
                    preds.choose(&mut rng).unwrap(),
                    nodes.choose(&mut rng).unwrap(),
                )
            })
            .collect();
        let closure = materialize(base.clone(), &RdfsRule::ALL);
        assert_eq!(closure.triple_set(), naive_fixpoint(&base));
    }
}

#[test]
fn rule_subset_only_fires_selected_rules() {
    let base = vec![
        t("a", "subclass_of", "b"),
        t("b", "subclass_of", "c"),
        t("x", "type", "a"),
    ];
    let only11 = materialize(base.clone(), &[RdfsRule::Rdfs11]);
    assert!(only11.contains(&t("a", "subclass_of", "c")));
    assert!(!only11.contains(&t("x", "type", "b")));
    let all = materialize(base, &RdfsRule::ALL);
    assert!(all.contains(&t("x", "type", "c")));
}
