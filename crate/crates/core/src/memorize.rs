//! Memorizing probes: one cloze sample per subject for each of the five
//! ontological relations, with train/dev/test splits and an optional
//! multiple-choice rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::ontology::{HierarchyKind, NodeId, OntologyGraph};
use crate::prompt::Relation;
use crate::util::seeded_rng;

pub const TRAIN_SIZE: usize = 10;
pub const DEV_SIZE: usize = 10;
pub const CANDIDATE_POLICY: &str = "full-vocabulary";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtask {
    #[serde(rename = "TP")]
    Tp,
    #[serde(rename = "SCO")]
    Sco,
    #[serde(rename = "SPO")]
    Spo,
    #[serde(rename = "DM")]
    Dm,
    #[serde(rename = "RG")]
    Rg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Class,
    Property,
}

impl Subtask {
    pub const ALL: [Subtask; 5] = [Subtask::Tp, Subtask::Sco, Subtask::Spo, Subtask::Dm, Subtask::Rg];

    pub fn as_str(self) -> &'static str {
        match self {
            Subtask::Tp => "TP",
            Subtask::Sco => "SCO",
            Subtask::Spo => "SPO",
            Subtask::Dm => "DM",
            Subtask::Rg => "RG",
        }
    }

    pub fn relation(self) -> Relation {
        match self {
            Subtask::Tp => Relation::Type,
            Subtask::Sco => Relation::SubclassOf,
            Subtask::Spo => Relation::SubpropertyOf,
            Subtask::Dm => Relation::Domain,
            Subtask::Rg => Relation::Range,
        }
    }

    pub fn candidate_kind(self) -> CandidateKind {
        match self {
            Subtask::Spo => CandidateKind::Property,
            _ => CandidateKind::Class,
        }
    }

    fn question(self, subject: &str) -> String {
        let what = match self {
            Subtask::Tp => "type",
            Subtask::Sco => "superclass",
            Subtask::Spo => "superproperty",
            Subtask::Dm => "domain",
            Subtask::Rg => "range",
        };
        format!("What is the {what} of {subject}?")
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subtask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subtask::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown subtask `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

/// One cloze probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorizingSample {
    pub id: String,
    pub subtask: Subtask,
    pub subject_id: NodeId,
    pub subject_label: String,
    /// Verb phrase for domain/range templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
    /// Nearest first; the first gold is the finest-grained one.
    pub golds: Vec<String>,
    pub candidates: Vec<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Run header written as the first record of every subtask file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorizingHeader {
    pub subtask: Subtask,
    pub graph_hash: String,
    pub seed: u64,
    pub candidate_policy: String,
    pub transitive_types: bool,
    pub splits: SplitSizes,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemorizeOptions {
    pub seed: u64,
    /// TP golds include inherited types, not only asserted ones.
    pub transitive_types: bool,
}

impl MemorizeOptions {
    pub fn new(seed: u64) -> Self {
        MemorizeOptions {
            seed,
            transitive_types: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubtaskData {
    pub header: MemorizingHeader,
    pub samples: Vec<MemorizingSample>,
}

/// Default verb phrases for the domain and range templates.
pub fn domain_phrase(graph: &OntologyGraph, prop: &NodeId) -> Option<String> {
    let p = graph.property(prop.as_str())?;
    Some(p.domain_phrase.clone().unwrap_or_else(|| format!("have {}", p.label)))
}

pub fn range_phrase(graph: &OntologyGraph, prop: &NodeId) -> Option<String> {
    let p = graph.property(prop.as_str())?;
    Some(p.range_phrase.clone().unwrap_or_else(|| format!("be {}", p.label)))
}

fn dedup_labels(labels: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for l in labels {
        if !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

fn label_of(graph: &OntologyGraph, id: &NodeId) -> String {
    graph.label(id.as_str()).unwrap_or(id.as_str()).to_string()
}

/// Class labels in declaration order, deduplicated.
pub fn class_vocabulary(graph: &OntologyGraph) -> Vec<String> {
    dedup_labels(graph.classes().map(|c| c.label.clone()))
}

pub fn property_vocabulary(graph: &OntologyGraph) -> Vec<String> {
    dedup_labels(graph.properties().map(|p| p.label.clone()))
}

/// Train/dev sizes for a subtask with `n` subjects. Undersized subtasks get
/// equal train and dev shares that leave at least one test subject.
pub fn split_sizes(n: usize) -> SplitSizes {
    let (train, dev) = if n > TRAIN_SIZE + DEV_SIZE {
        (TRAIN_SIZE, DEV_SIZE)
    } else {
        let k = n.saturating_sub(1) / 2;
        (k, k)
    };
    SplitSizes {
        train,
        dev,
        test: n - train - dev,
    }
}

/// Subjects and their gold labels for one subtask, in declaration order.
/// Subjects without golds are skipped.
pub fn subjects_with_golds(
    graph: &OntologyGraph,
    subtask: Subtask,
    transitive_types: bool,
) -> Vec<(NodeId, String, Vec<String>)> {
    let labels = |ids: Vec<NodeId>| dedup_labels(ids.iter().map(|i| label_of(graph, i)));
    let mut out = Vec::new();
    match subtask {
        Subtask::Tp => {
            for inst in graph.instances() {
                let types = if transitive_types {
                    graph.types_closure(inst.id.as_str()).expect("instance exists")
                } else {
                    inst.types.clone()
                };
                out.push((inst.id.clone(), inst.label.clone(), labels(types)));
            }
        }
        Subtask::Sco => {
            for c in graph.classes() {
                let anc = graph
                    .ancestors(c.id.as_str(), HierarchyKind::Class)
                    .expect("class exists");
                out.push((c.id.clone(), c.label.clone(), labels(anc)));
            }
        }
        Subtask::Spo => {
            for p in graph.properties() {
                let anc = graph
                    .ancestors(p.id.as_str(), HierarchyKind::Property)
                    .expect("property exists");
                out.push((p.id.clone(), p.label.clone(), labels(anc)));
            }
        }
        Subtask::Dm | Subtask::Rg => {
            for p in graph.properties() {
                let c = if subtask == Subtask::Dm { &p.domain } else { &p.range };
                let golds = c.iter().map(|c| label_of(graph, c)).collect();
                out.push((p.id.clone(), p.label.clone(), golds));
            }
        }
    }
    out.retain(|(_, _, g)| !g.is_empty());
    out
}

pub fn generate_subtask(
    graph: &OntologyGraph,
    subtask: Subtask,
    opts: &MemorizeOptions,
    graph_hash: &str,
) -> SubtaskData {
    let subjects = subjects_with_golds(graph, subtask, opts.transitive_types);
    let candidates = match subtask.candidate_kind() {
        CandidateKind::Class => class_vocabulary(graph),
        CandidateKind::Property => property_vocabulary(graph),
    };
    let n = subjects.len();
    let sizes = split_sizes(n);
    let mut warnings = Vec::new();
    if n <= TRAIN_SIZE + DEV_SIZE {
        let msg = format!(
            "{subtask}: only {n} subjects; using {}/{}/{} train/dev/test",
            sizes.train, sizes.dev, sizes.test
        );
        warn!("{msg}");
        warnings.push(msg);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(opts.seed, &format!("split/{subtask}")));
    let mut split = vec![Split::Test; n];
    for (pos, &i) in order.iter().enumerate() {
        split[i] = if pos < sizes.train {
            Split::Train
        } else if pos < sizes.train + sizes.dev {
            Split::Dev
        } else {
            Split::Test
        };
    }

    let samples = subjects
        .into_iter()
        .enumerate()
        .map(|(i, (id, label, golds))| {
            let phrase = match subtask {
                Subtask::Dm => domain_phrase(graph, &id),
                Subtask::Rg => range_phrase(graph, &id),
                _ => None,
            };
            MemorizingSample {
                id: format!("{subtask}-{i:06}"),
                subtask,
                subject_id: id,
                subject_label: label,
                phrase,
                golds,
                candidates: candidates.clone(),
                split: split[i],
            }
        })
        .collect();

    SubtaskData {
        header: MemorizingHeader {
            subtask,
            graph_hash: graph_hash.to_string(),
            seed: opts.seed,
            candidate_policy: CANDIDATE_POLICY.to_string(),
            transitive_types: opts.transitive_types,
            splits: sizes,
            warnings,
        },
        samples,
    }
}

/// All five subtasks.
pub fn generate_memorizing(graph: &OntologyGraph, opts: &MemorizeOptions) -> BTreeMap<Subtask, SubtaskData> {
    let hash = graph.content_hash();
    Subtask::ALL
        .into_iter()
        .map(|t| (t, generate_subtask(graph, t, opts, &hash)))
        .collect()
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ChoiceError {
    #[error("need between 1 and 26 choices, got {0}")]
    BadCount(usize),
    #[error("sample {id} has {available} non-gold candidates, {needed} distractors needed")]
    TooFewDistractors {
        id: String,
        available: usize,
        needed: usize,
    },
}

/// Multiple-choice question with lettered choices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceQuestion {
    pub id: String,
    pub subtask: Subtask,
    pub question: String,
    pub choices: Vec<String>,
    pub answer_index: usize,
    pub answer_letter: char,
    /// Full text sent to a completion backend.
    pub prompt: String,
}

pub fn choice_letter(i: usize) -> char {
    (b'a' + i as u8) as char
}

/// The finest-grained gold plus `n_choices - 1` uniformly drawn non-gold
/// distractors, shuffled. Deterministic for a seed and sample id.
pub fn to_multiple_choice(
    sample: &MemorizingSample,
    n_choices: usize,
    seed: u64,
) -> Result<ChoiceQuestion, ChoiceError> {
    if n_choices == 0 || n_choices > 26 {
        return Err(ChoiceError::BadCount(n_choices));
    }
    let gold = sample.golds[0].clone();
    let negatives: Vec<&String> = sample.candidates.iter().filter(|c| !sample.golds.contains(c)).collect();
    if negatives.len() < n_choices - 1 {
        return Err(ChoiceError::TooFewDistractors {
            id: sample.id.clone(),
            available: negatives.len(),
            needed: n_choices - 1,
        });
    }
    let mut rng = seeded_rng(seed, &format!("choice/{}", sample.id));
    let mut choices: Vec<String> = negatives
        .choose_multiple(&mut rng, n_choices - 1)
        .map(|s| (*s).clone())
        .collect();
    choices.push(gold.clone());
    choices.shuffle(&mut rng);
    let answer_index = choices.iter().position(|c| *c == gold).expect("gold inserted");
    let question = sample.subtask.question(&sample.subject_label);
    let listed = choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("({}) {c}", choice_letter(i)))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(ChoiceQuestion {
        id: sample.id.clone(),
        subtask: sample.subtask,
        prompt: format!("{question} {listed}"),
        question,
        choices,
        answer_index,
        answer_letter: choice_letter(answer_index),
    })
}

/// Extracts the chosen index from a free-text answer: the first `(x)`
/// label, else a bare letter, else an exact choice text. `None` when the
/// answer cannot be read.
pub fn parse_choice(answer: &str, choices: &[String]) -> Option<usize> {
    use std::sync::OnceLock;
    static LABELLED: OnceLock<regex::Regex> = OnceLock::new();
    static BARE: OnceLock<regex::Regex> = OnceLock::new();
    let labelled = LABELLED.get_or_init(|| regex::Regex::new(r"\(([A-Za-z])\)").unwrap());
    let bare = BARE.get_or_init(|| regex::Regex::new(r"^\s*([A-Za-z])\s*[\).:]?\s*$").unwrap());

    let letter = labelled
        .captures(answer)
        .or_else(|| bare.captures(answer))
        .and_then(|c| c[1].chars().next())
        .map(|c| c.to_ascii_lowercase());
    if let Some(l) = letter {
        let idx = (l as u8 - b'a') as usize;
        return (idx < choices.len()).then_some(idx);
    }
    let norm = answer.trim().trim_end_matches('.').to_lowercase();
    choices.iter().position(|c| c.to_lowercase() == norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::read_graph;

    fn toy() -> OntologyGraph {
        read_graph(include_str!("../fixtures/toy.tsv").as_bytes()).unwrap()
    }

    #[test]
    fn tp_golds_follow_the_type_chain() {
        let g = toy();
        let data = generate_memorizing(&g, &MemorizeOptions::new(1));
        let messi = data[&Subtask::Tp]
            .samples
            .iter()
            .find(|s| s.subject_id.as_str() == "messi")
            .unwrap();
        assert_eq!(messi.golds, ["person", "animal", "eukaryote"]);
        assert_eq!(messi.subject_label, "Lionel Messi");
    }

    #[test]
    fn direct_types_flag() {
        let g = toy();
        let opts = MemorizeOptions {
            seed: 1,
            transitive_types: false,
        };
        let data = generate_subtask(&g, Subtask::Tp, &opts, "h");
        assert_eq!(data.samples[0].golds, ["person"]);
        assert!(!data.header.transitive_types);
    }

    #[test]
    fn roots_are_skipped_for_sco() {
        let g = toy();
        let data = generate_subtask(&g, Subtask::Sco, &MemorizeOptions::new(1), "h");
        let subjects: Vec<&str> = data.samples.iter().map(|s| s.subject_id.as_str()).collect();
        assert_eq!(subjects, ["animal", "person", "sports_team"]);
    }

    #[test]
    fn candidates_are_full_vocabulary() {
        let g = toy();
        let data = generate_memorizing(&g, &MemorizeOptions::new(1));
        assert_eq!(data[&Subtask::Tp].samples[0].candidates.len(), 6);
        assert_eq!(data[&Subtask::Spo].samples[0].candidates.len(), 3);
        for d in data.values() {
            assert_eq!(d.header.candidate_policy, CANDIDATE_POLICY);
            for s in &d.samples {
                for gold in &s.golds {
                    assert_eq!(s.candidates.iter().filter(|c| *c == gold).count(), 1);
                }
            }
        }
        assert_eq!(data[&Subtask::Dm].samples.len(), 3);
        assert_eq!(data[&Subtask::Rg].samples[1].golds, ["sports team"]);
        assert_eq!(
            data[&Subtask::Rg].samples[1].phrase.as_deref(),
            Some("have a player at that")
        );
        assert_eq!(
            data[&Subtask::Dm].samples[2].phrase.as_deref(),
            Some("have birth place")
        );
    }

    #[test]
    fn split_sizes_cover_small_and_large() {
        assert_eq!(
            split_sizes(8809),
            SplitSizes {
                train: 10,
                dev: 10,
                test: 8789
            }
        );
        assert_eq!(
            split_sizes(21),
            SplitSizes {
                train: 10,
                dev: 10,
                test: 1
            }
        );
        assert_eq!(
            split_sizes(20),
            SplitSizes {
                train: 9,
                dev: 9,
                test: 2
            }
        );
        assert_eq!(
            split_sizes(4),
            SplitSizes {
                train: 1,
                dev: 1,
                test: 2
            }
        );
        assert_eq!(
            split_sizes(1),
            SplitSizes {
                train: 0,
                dev: 0,
                test: 1
            }
        );
        assert_eq!(
            split_sizes(0),
            SplitSizes {
                train: 0,
                dev: 0,
                test: 0
            }
        );
    }

    #[test]
    fn small_subtasks_warn_in_header() {
        let g = toy();
        let data = generate_subtask(&g, Subtask::Spo, &MemorizeOptions::new(3), "h");
        assert_eq!(data.header.warnings.len(), 1);
        assert_eq!(data.samples.len(), 1);
        assert_eq!(data.samples[0].split, Split::Test);
    }

    fn big_sample(n: usize) -> MemorizingSample {
        let candidates: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        MemorizingSample {
            id: "TP-000001".into(),
            subtask: Subtask::Tp,
            subject_id: NodeId::new("s").unwrap(),
            subject_label: "Lionel Messi".into(),
            phrase: None,
            golds: vec!["c5".into(), "c9".into()],
            candidates,
            split: Split::Test,
        }
    }

    #[test]
    fn multiple_choice_has_one_gold() {
        let s = big_sample(783);
        let q = to_multiple_choice(&s, 20, 7).unwrap();
        assert_eq!(q.choices.len(), 20);
        assert_eq!(q.choices[q.answer_index], "c5");
        assert!(!q.choices.contains(&"c9".to_string()));
        assert_eq!(q.choices.iter().filter(|c| s.golds.contains(c)).count(), 1);
        assert!(q.prompt.starts_with("What is the type of Lionel Messi? (a) "));
        assert_eq!(q, to_multiple_choice(&s, 20, 7).unwrap());
    }

    #[test]
    fn multiple_choice_edges() {
        let s = big_sample(10);
        let q = to_multiple_choice(&s, 1, 0).unwrap();
        assert_eq!(q.choices, ["c5"]);
        assert_eq!(q.answer_letter, 'a');
        assert!(matches!(
            to_multiple_choice(&s, 10, 0),
            Err(ChoiceError::TooFewDistractors {
                available: 8,
                needed: 9,
                ..
            })
        ));
        assert_eq!(to_multiple_choice(&s, 0, 0), Err(ChoiceError::BadCount(0)));
    }

    #[test]
    fn answers_are_parsed_by_letter() {
        let choices: Vec<String> = ["person", "work", "place"].iter().map(|s| s.to_string()).collect();
        assert_eq!(parse_choice("The answer is (b) work.", &choices), Some(1));
        assert_eq!(parse_choice(" C) ", &choices), Some(2));
        assert_eq!(parse_choice("a", &choices), Some(0));
        assert_eq!(parse_choice("Person.", &choices), Some(0));
        assert_eq!(parse_choice("(z)", &choices), None);
        assert_eq!(parse_choice("no idea", &choices), None);
    }
}
