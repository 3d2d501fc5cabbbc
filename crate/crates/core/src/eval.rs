//! Ranking metrics, the frequency baseline, premise classification and
//! report assembly.
//!
//! A gold's rank is its filtered rank: one plus the number of non-gold
//! candidates ranked above it. Other golds never push a gold down, so a
//! list whose golds fill the top positions scores 1.0 on every metric.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::entailment::{GridCell, PremiseMode, RdfsRule, ReasoningInstance};
use crate::memorize::{parse_choice, ChoiceQuestion, MemorizingSample};
use crate::util::seeded_rng;

pub const DEFAULT_KS: [usize; 2] = [1, 5];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no results to evaluate")]
    Empty,
    #[error("result `{0}` has no gold rank")]
    NoGold(String),
    #[error("gold rank 0 in result `{0}`; ranks are 1-based")]
    ZeroRank(String),
    #[error("train split is empty")]
    EmptyTrain,
    #[error("premise `{0}` has no reciprocal rank")]
    MissingRank(String),
    #[error("K must be at least 1")]
    ZeroK,
}

/// Filtered 1-based ranks of the golds present in `ranked`, in gold order.
pub fn gold_ranks<S: AsRef<str>>(ranked: &[S], golds: &[String]) -> Vec<usize> {
    let is_gold = |s: &str| golds.iter().any(|g| g == s);
    let mut out = Vec::new();
    for g in golds {
        let mut non_golds_ahead = 0;
        for s in ranked {
            let s = s.as_ref();
            if s == g {
                out.push(non_golds_ahead + 1);
                break;
            }
            if !is_gold(s) {
                non_golds_ahead += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    /// R@K keyed by K.
    pub recall: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub mrr_a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl MetricReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }
}

/// Metrics over per-sample gold rank lists.
pub fn compute_metrics(ranks: &[Vec<usize>], ks: &[usize]) -> Result<MetricReport, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    if ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let n = ranks.len();
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let (mut mrr, mut mrr_a) = (0.0, 0.0);
    for (i, r) in ranks.iter().enumerate() {
        let best = *r.iter().min().ok_or_else(|| EvalError::NoGold(i.to_string()))?;
        if best == 0 {
            return Err(EvalError::ZeroRank(i.to_string()));
        }
        for (k, h) in hits.iter_mut() {
            if best <= *k {
                *h += 1;
            }
        }
        mrr += 1.0 / best as f64;
        let mean = r.iter().sum::<usize>() as f64 / r.len() as f64;
        mrr_a += 1.0 / mean;
    }
    Ok(MetricReport {
        n,
        recall: hits.into_iter().map(|(k, h)| (k, h as f64 / n as f64)).collect(),
        mrr: mrr / n as f64,
        mrr_a: mrr_a / n as f64,
        accuracy: None,
    })
}

/// Unweighted mean of reports, e.g. over pseudoword pairs or rules.
pub fn average_reports(reports: &[MetricReport]) -> Result<MetricReport, EvalError> {
    let m = reports.len();
    if m == 0 {
        return Err(EvalError::Empty);
    }
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / m as f64;
    let mut recall = BTreeMap::new();
    for k in reports[0].recall.keys() {
        recall.insert(*k, mean(&|r| r.recall.get(k).copied().unwrap_or(0.0)));
    }
    let accuracy = if reports.iter().all(|r| r.accuracy.is_some()) {
        Some(mean(&|r| r.accuracy.unwrap_or(0.0)))
    } else {
        None
    };
    Ok(MetricReport {
        n: reports.iter().map(|r| r.n).sum(),
        recall,
        mrr: mean(&|r| r.mrr),
        mrr_a: mean(&|r| r.mrr_a),
        accuracy,
    })
}

/// Baseline rankings for `test`: train golds by descending train frequency
/// (ties by first occurrence), then the sample's remaining candidates in a
/// random order seeded by `seed` and the sample id.
pub fn frequency_baseline(
    train: &[MemorizingSample],
    test: &[MemorizingSample],
    seed: u64,
) -> Result<Vec<(String, Vec<String>)>, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyTrain);
    }
    let mut counts: Vec<(String, usize)> = Vec::new();
    for s in train {
        for g in &s.golds {
            match counts.iter_mut().find(|(l, _)| l == g) {
                Some((_, c)) => *c += 1,
                None => counts.push((g.clone(), 1)),
            }
        }
    }
    counts.sort_by_key(|c| std::cmp::Reverse(c.1));
    let by_freq: Vec<String> = counts.into_iter().map(|(l, _)| l).collect();

    Ok(test
        .iter()
        .map(|s| {
            let mut ranked: Vec<String> = by_freq.iter().filter(|l| s.candidates.contains(l)).cloned().collect();
            let mut rest: Vec<String> = s.candidates.iter().filter(|c| !ranked.contains(c)).cloned().collect();
            rest.shuffle(&mut seeded_rng(seed, &format!("frequency/{}", s.id)));
            ranked.extend(rest);
            (s.id.clone(), ranked)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiseVerdict {
    pub premise_id: String,
    pub reciprocal_rank: f64,
    pub memorized: bool,
}

/// Sorts premises by descending reciprocal rank (ties by id) and marks the
/// first `floor(n / 2)` as memorized.
pub fn classify_premises(premises: &[(String, Option<f64>)]) -> Result<Vec<PremiseVerdict>, EvalError> {
    let mut rows = premises
        .iter()
        .map(|(id, rr)| {
            rr.map(|r| (id.clone(), r))
                .ok_or_else(|| EvalError::MissingRank(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let half = rows.len() / 2;
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (premise_id, reciprocal_rank))| PremiseVerdict {
            premise_id,
            reciprocal_rank,
            memorized: i < half,
        })
        .collect())
}

/// Whether an instance with these premise verdicts belongs in `cell`.
pub fn cell_admits(cell: GridCell, p1_memorized: bool, p2_memorized: bool) -> bool {
    let ok = |mode: PremiseMode, memorized: bool| match mode {
        PremiseMode::Ex => true,
        PremiseMode::Im => memorized,
        PremiseMode::No => !memorized,
    };
    ok(cell.0, p1_memorized) && ok(cell.1, p2_memorized)
}

/// Memorization verdicts keyed by rule, premise position (1 or 2) and
/// premise id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub entries: Vec<(RdfsRule, u8, PremiseVerdict)>,
}

impl Verdicts {
    pub fn memorized(&self, rule: RdfsRule, position: u8, premise: &str) -> Option<bool> {
        self.entries
            .iter()
            .find(|(r, p, v)| *r == rule && *p == position && v.premise_id == premise)
            .map(|(_, _, v)| v.memorized)
    }
}

/// Classifies P1 and P2 premises separately within each rule, using the
/// reciprocal ranks of their memorizing probes.
pub fn classify_reasoning_premises(
    instances: &[ReasoningInstance],
    reciprocal_ranks: &HashMap<String, f64>,
) -> Result<Verdicts, EvalError> {
    let mut groups: BTreeMap<(RdfsRule, u8), Vec<String>> = BTreeMap::new();
    for i in instances {
        for (pos, p) in [(1u8, &i.p1), (2, &i.p2)] {
            let g = groups.entry((i.rule, pos)).or_default();
            if !g.contains(&p.id) {
                g.push(p.id.clone());
            }
        }
    }
    let mut entries = Vec::new();
    for ((rule, pos), ids) in groups {
        let rows: Vec<(String, Option<f64>)> = ids
            .into_iter()
            .map(|id| {
                let rr = reciprocal_ranks.get(&id).copied();
                (id, rr)
            })
            .collect();
        for v in classify_premises(&rows)? {
            entries.push((rule, pos, v));
        }
    }
    Ok(Verdicts { entries })
}

/// Gold ranks of one reasoning instance under one pseudoword pair.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRanks<'a> {
    pub instance: &'a ReasoningInstance,
    pub pair: Option<usize>,
    pub ranks: Vec<usize>,
}

/// Per-rule, per-cell metrics. With verdicts, IM/NO cells keep only the
/// instances whose premises match; without, every instance counts in its
/// own cell. Results under different pseudoword pairs are scored per pair
/// and averaged.
pub fn assemble_cells(
    results: &[InstanceRanks<'_>],
    verdicts: Option<&Verdicts>,
    ks: &[usize],
) -> Result<BTreeMap<(RdfsRule, GridCell), MetricReport>, EvalError> {
    // Ranks per cell, grouped by pseudoword pair.
    type ByPair = BTreeMap<Option<usize>, Vec<Vec<usize>>>;
    let mut buckets: BTreeMap<(RdfsRule, GridCell), ByPair> = BTreeMap::new();
    for r in results {
        let inst = r.instance;
        let cell = inst.cell();
        if let Some(v) = verdicts {
            let m1 = v.memorized(inst.rule, 1, &inst.p1.id);
            let m2 = v.memorized(inst.rule, 2, &inst.p2.id);
            let (Some(m1), Some(m2)) = (m1, m2) else {
                return Err(EvalError::MissingRank(format!("{} or {}", inst.p1.id, inst.p2.id)));
            };
            if !cell_admits(cell, m1, m2) {
                continue;
            }
        }
        buckets
            .entry((inst.rule, cell))
            .or_default()
            .entry(r.pair)
            .or_default()
            .push(r.ranks.clone());
    }
    let mut out = BTreeMap::new();
    for (key, per_pair) in buckets {
        let reports = per_pair
            .values()
            .map(|ranks| compute_metrics(ranks, ks))
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(key, average_reports(&reports)?);
    }
    Ok(out)
}

/// Macro-average over rules for each cell.
pub fn macro_average_cells(
    cells: &BTreeMap<(RdfsRule, GridCell), MetricReport>,
) -> Result<BTreeMap<GridCell, MetricReport>, EvalError> {
    let mut by_cell: BTreeMap<GridCell, Vec<MetricReport>> = BTreeMap::new();
    for ((_, cell), r) in cells {
        by_cell.entry(*cell).or_default().push(r.clone());
    }
    by_cell
        .into_iter()
        .map(|(c, rs)| average_reports(&rs).map(|r| (c, r)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceReport {
    pub n: usize,
    pub correct: usize,
    pub unparseable: usize,
    pub accuracy: f64,
}

/// Accuracy by chosen letter. Missing or unparseable answers count as wrong
/// and are tallied in `unparseable`.
pub fn choice_accuracy(
    questions: &[ChoiceQuestion],
    answers: &HashMap<String, String>,
) -> Result<ChoiceReport, EvalError> {
    if questions.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut correct, mut unparseable) = (0, 0);
    for q in questions {
        match answers.get(&q.id).and_then(|a| parse_choice(a, &q.choices)) {
            Some(i) if i == q.answer_index => correct += 1,
            Some(_) => {}
            None => unparseable += 1,
        }
    }
    Ok(ChoiceReport {
        n: questions.len(),
        correct,
        unparseable,
        accuracy: correct as f64 / questions.len() as f64,
    })
}

/// One row of a report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub config: String,
    pub report: MetricReport,
}

/// Tab-separated table: task, config, n, R@K columns, MRR, MRR_a and
/// accuracy when any row has it.
pub fn report_tsv(rows: &[ReportRow]) -> String {
    let ks: Vec<usize> = rows
        .first()
        .map(|r| r.report.recall.keys().copied().collect())
        .unwrap_or_else(|| DEFAULT_KS.to_vec());
    let with_acc = rows.iter().any(|r| r.report.accuracy.is_some());
    let mut out = String::from("task\tconfig\tn");
    for k in &ks {
        let _ = write!(out, "\tR@{k}");
    }
    out.push_str("\tMRR\tMRR_a");
    if with_acc {
        out.push_str("\taccuracy");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}\t{}\t{}", r.task, r.config, r.report.n);
        for k in &ks {
            let _ = write!(out, "\t{:.4}", r.report.recall_at(*k).unwrap_or(f64::NAN));
        }
        let _ = write!(out, "\t{:.4}\t{:.4}", r.report.mrr, r.report.mrr_a);
        if with_acc {
            match r.report.accuracy {
                Some(a) => {
                    let _ = write!(out, "\t{a:.4}");
                }
                None => out.push('\t'),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memorize::{Split, Subtask};
    use crate::ontology::NodeId;
    use proptest::prelude::*;

    #[test]
    fn two_and_four() {
        let r = compute_metrics(&[vec![2, 4]], &[1, 5]).unwrap();
        assert_eq!(r.mrr, 0.5);
        assert!((r.mrr_a - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall_at(1), Some(0.0));
        assert_eq!(r.recall_at(5), Some(1.0));
    }

    #[test]
    fn all_first_is_perfect() {
        let r = compute_metrics(&[vec![1, 1, 1], vec![1]], &[1, 5]).unwrap();
        assert_eq!((r.mrr, r.mrr_a, r.recall_at(1)), (1.0, 1.0, Some(1.0)));
    }

    #[test]
    fn metric_errors() {
        assert_eq!(compute_metrics(&[], &[1]), Err(EvalError::Empty));
        assert!(matches!(compute_metrics(&[vec![]], &[1]), Err(EvalError::NoGold(_))));
        assert!(matches!(compute_metrics(&[vec![0]], &[1]), Err(EvalError::ZeroRank(_))));
        assert_eq!(compute_metrics(&[vec![1]], &[0]), Err(EvalError::ZeroK));
    }

    #[test]
    fn filtered_ranks_skip_other_golds() {
        let golds = vec!["b".to_string(), "d".to_string()];
        assert_eq!(gold_ranks(&["a", "b", "c", "d"], &golds), vec![2, 3]);
        assert_eq!(gold_ranks(&["b", "d", "a"], &golds), vec![1, 1]);
        assert_eq!(gold_ranks(&["a"], &golds), Vec::<usize>::new());
    }

    fn sample(id: &str, golds: &[&str], cands: &[&str]) -> MemorizingSample {
        MemorizingSample {
            id: id.into(),
            subtask: Subtask::Tp,
            subject_id: NodeId::new(id).unwrap(),
            subject_label: id.into(),
            phrase: None,
            golds: golds.iter().map(|s| s.to_string()).collect(),
            candidates: cands.iter().map(|s| s.to_string()).collect(),
            split: Split::Train,
        }
    }

    #[test]
    fn frequency_sort() {
        let cands = ["place", "animal", "person", "team"];
        let mut train = Vec::new();
        for i in 0..3 {
            train.push(sample(&format!("a{i}"), &["animal"], &cands));
        }
        for i in 0..6 {
            train.push(sample(&format!("p{i}"), &["person"], &cands));
        }
        let test = vec![sample("t0", &["person"], &cands), sample("t1", &["place"], &cands)];
        let out = frequency_baseline(&train, &test, 3).unwrap();
        assert_eq!(&out[0].1[..2], ["person", "animal"]);
        assert_eq!(out[0].1.len(), 4);
        let ranks: Vec<Vec<usize>> = out
            .iter()
            .zip(&test)
            .map(|((_, r), s)| gold_ranks(r, &s.golds))
            .collect();
        assert_eq!(ranks[0], vec![1]);
        // order of the test set does not matter
        let rev: Vec<_> = test.iter().rev().cloned().collect();
        let mut out2 = frequency_baseline(&train, &rev, 3).unwrap();
        out2.reverse();
        assert_eq!(out, out2);
        assert_eq!(frequency_baseline(&[], &test, 3), Err(EvalError::EmptyTrain));
    }

    #[test]
    fn premise_halves() {
        let rows: Vec<(String, Option<f64>)> = [("a", 0.1), ("b", 1.0), ("c", 0.2), ("d", 0.5)]
            .iter()
            .map(|(i, r)| (i.to_string(), Some(*r)))
            .collect();
        let v = classify_premises(&rows).unwrap();
        let memorized: Vec<&str> = v
            .iter()
            .filter(|v| v.memorized)
            .map(|v| v.premise_id.as_str())
            .collect();
        assert_eq!(memorized, ["b", "d"]);
        let one = classify_premises(&[("x".into(), Some(1.0))]).unwrap();
        assert!(!one[0].memorized);
        assert!(classify_premises(&[("x".into(), None)]).is_err());
    }

    #[test]
    fn tie_break_by_id() {
        let rows = vec![("b".to_string(), Some(0.5)), ("a".to_string(), Some(0.5))];
        let v = classify_premises(&rows).unwrap();
        assert_eq!(v[0].premise_id, "a");
        assert!(v[0].memorized && !v[1].memorized);
    }

    #[test]
    fn cell_rules() {
        use PremiseMode::*;
        assert!(cell_admits((Ex, Ex), false, true));
        assert!(cell_admits((Im, No), true, false));
        assert!(!cell_admits((Im, No), false, false));
        assert!(!cell_admits((No, Ex), true, true));
    }

    #[test]
    fn averaging_equals_mean_of_runs() {
        let a = compute_metrics(&[vec![1], vec![2]], &[1]).unwrap();
        let b = compute_metrics(&[vec![4], vec![1, 3]], &[1]).unwrap();
        let avg = average_reports(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(avg.mrr, (a.mrr + b.mrr) / 2.0);
        assert_eq!(avg.mrr_a, (a.mrr_a + b.mrr_a) / 2.0);
        assert_eq!(avg.recall_at(1), Some((0.5 + 0.5) / 2.0));
    }

    #[test]
    fn tsv_layout() {
        let r = compute_metrics(&[vec![1]], &[1, 5]).unwrap();
        let tsv = report_tsv(&[ReportRow {
            task: "TP".into(),
            config: "multiple/mean".into(),
            report: r,
        }]);
        assert_eq!(
            tsv,
            "task\tconfig\tn\tR@1\tR@5\tMRR\tMRR_a\nTP\tmultiple/mean\t1\t1.0000\t1.0000\t1.0000\t1.0000\n"
        );
    }

    fn rank_lists() -> impl Strategy<Value = Vec<Vec<usize>>> {
        prop::collection::vec(prop::collection::vec(1usize..40, 1..5), 1..20)
    }

    proptest! {
        #[test]
        fn mrr_a_never_exceeds_mrr(ranks in rank_lists()) {
            let r = compute_metrics(&ranks, &[1, 3, 5, 10]).unwrap();
            prop_assert!(r.mrr_a <= r.mrr + 1e-15);
            prop_assert!((0.0..=1.0).contains(&r.mrr) && (0.0..=1.0).contains(&r.mrr_a));
            let rs: Vec<f64> = r.recall.values().copied().collect();
            prop_assert!(rs.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn improving_a_gold_never_hurts(ranks in rank_lists(), i in any::<prop::sample::Index>(), j in any::<prop::sample::Index>()) {
            let before = compute_metrics(&ranks, &[1]).unwrap();
            let mut better = ranks.clone();
            let s = i.index(better.len());
            let g = j.index(better[s].len());
            if better[s][g] > 1 {
                better[s][g] -= 1;
            }
            let after = compute_metrics(&better, &[1]).unwrap();
            prop_assert!(after.mrr >= before.mrr);
            prop_assert!(after.mrr_a >= before.mrr_a);
        }

        #[test]
        fn split_index_is_half(rrs in prop::collection::vec(0.0f64..=1.0, 0..50)) {
            let rows: Vec<(String, Option<f64>)> = rrs.iter().enumerate().map(|(i, r)| (format!("p{i:03}"), Some(*r))).collect();
            let v = classify_premises(&rows).unwrap();
            prop_assert_eq!(v.iter().filter(|v| v.memorized).count(), rows.len() / 2);
            prop_assert!(v.windows(2).all(|w| w[0].reciprocal_rank >= w[1].reciprocal_rank));
        }
    }
}
