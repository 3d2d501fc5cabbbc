//! Candidate scoring over a masked prompt and resumable batch probing.
//!
//! Multiple-mask mode expands the prompt's mask run to one mask per
//! candidate token and reads `log p(MASK_i = c_i)`. Single-mask mode keeps
//! one mask per text run and reads every token from that one distribution.
//! Candidates that need the same prompt shape share one backend call.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, LogprobsRequest, PseudoVectors, Token};
use crate::entailment::{candidate_parts, PremiseProbe, ReasoningInstance};
use crate::eval::gold_ranks;
use crate::memorize::MemorizingSample;
use crate::prompt::{
    apply_casing, render_memorizing, render_reasoning, Casing, ClozePrompt, Conjunction, PremiseOrder, PromptError,
    Segment, Surface, TemplateSet,
};
use crate::pseudoword::PseudowordSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Multiple,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Max,
    First,
}

impl MaskMode {
    pub const ALL: [MaskMode; 2] = [MaskMode::Multiple, MaskMode::Single];
}

impl Pooling {
    pub const ALL: [Pooling; 3] = [Pooling::Mean, Pooling::Max, Pooling::First];
}

impl FromStr for MaskMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multiple" => Ok(MaskMode::Multiple),
            "single" => Ok(MaskMode::Single),
            _ => Err(format!("unknown mask mode `{s}`")),
        }
    }
}

impl FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            "first" => Ok(Pooling::First),
            _ => Err(format!("unknown pooling `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub mask_mode: MaskMode,
    pub pooling: Pooling,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            mask_mode: MaskMode::Multiple,
            pooling: Pooling::Mean,
        }
    }
}

impl fmt::Display for ScoringConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = match self.mask_mode {
            MaskMode::Multiple => "multiple",
            MaskMode::Single => "single",
        };
        let p = match self.pooling {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
            Pooling::First => "first",
        };
        write!(f, "{m}/{p}")
    }
}

/// Pools per-token log-probs. `logprobs` is non-empty.
pub fn pool(pooling: Pooling, logprobs: &[f64]) -> f64 {
    debug_assert!(!logprobs.is_empty());
    match pooling {
        Pooling::Mean => logprobs.iter().sum::<f64>() / logprobs.len() as f64,
        Pooling::Max => logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Pooling::First => logprobs[0],
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("probe `{probe}`: {source}")]
    Backend {
        probe: String,
        #[source]
        source: BackendError,
    },
    #[error("candidate `{0}` tokenizes to zero tokens")]
    EmptyCandidate(String),
    #[error("probe `{0}` has no candidates")]
    NoCandidates(String),
    #[error("backend response lacks token `{0}`")]
    MissingToken(String),
    #[error("backend returned a non-finite or positive log-prob for `{0}`")]
    BadLogprob(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl ScoringError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScoringError::Backend { source, .. } if source.is_retryable())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedCandidate {
    pub surface: String,
    pub tokens: Vec<u32>,
    pub pieces: Vec<String>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: TokenizedCandidate,
    pub per_token_logprobs: Vec<f64>,
    pub score: f64,
    pub rank: usize,
}

/// One scoring job: a prompt with a single mask run and its candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub id: String,
    /// Pseudoword pair index, when the probe was expanded over pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<usize>,
    pub prompt: ClozePrompt,
    pub candidates: Vec<String>,
    pub golds: Vec<String>,
    /// Pseudoword markers (`[X]`) that may occur inside candidates.
    #[serde(default)]
    pub slots: Vec<String>,
    #[serde(default)]
    pub pseudowords: PseudoVectors,
}

impl Probe {
    pub fn key(&self) -> String {
        result_key(&self.id, self.pair)
    }
}

fn result_key(id: &str, pair: Option<usize>) -> String {
    match pair {
        Some(p) => format!("{id}#p{p:02}"),
        None => id.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum ShapeItem {
    Masks(usize),
    Pseudo(String),
}

/// Scores probes against a backend, caching tokenizations.
pub struct Scorer<'b> {
    backend: &'b dyn Backend,
    cache: Mutex<HashMap<String, Vec<Token>>>,
    calls: AtomicUsize,
}

impl<'b> Scorer<'b> {
    pub fn new(backend: &'b dyn Backend) -> Self {
        Scorer {
            backend,
            cache: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn backend(&self) -> &'b dyn Backend {
        self.backend
    }

    /// Number of `logprobs` calls issued so far.
    pub fn logprob_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn tokenize(&self, probe: &str, surface: &str) -> Result<Vec<Token>, ScoringError> {
        if let Some(t) = self.cache.lock().unwrap().get(surface) {
            return Ok(t.clone());
        }
        let tokens = match self.backend.tokenize(surface) {
            Ok(t) if t.is_empty() => return Err(ScoringError::EmptyCandidate(surface.into())),
            Err(BackendError::EmptySurface) => return Err(ScoringError::EmptyCandidate(surface.into())),
            Err(source) => {
                return Err(ScoringError::Backend {
                    probe: probe.into(),
                    source,
                })
            }
            Ok(t) => t,
        };
        self.cache.lock().unwrap().insert(surface.to_string(), tokens.clone());
        Ok(tokens)
    }

    /// Ranked candidates, best first; ties keep candidate input order.
    pub fn score(&self, probe: &Probe, config: ScoringConfig) -> Result<Vec<ScoredCandidate>, ScoringError> {
        if probe.candidates.is_empty() {
            return Err(ScoringError::NoCandidates(probe.id.clone()));
        }
        struct Prepared {
            tokenized: TokenizedCandidate,
            shape: Vec<ShapeItem>,
            /// Mask index for each token, in token order.
            positions: Vec<usize>,
        }
        let mut prepared = Vec::with_capacity(probe.candidates.len());
        for surface in &probe.candidates {
            let mut shape = Vec::new();
            let mut positions = Vec::new();
            let mut tokens = Vec::new();
            let mut pieces = Vec::new();
            let mut mask_at = 0;
            for part in candidate_parts(surface, &probe.slots) {
                match part {
                    Surface::Pseudo(p) => shape.push(ShapeItem::Pseudo(p)),
                    Surface::Label(text) => {
                        let toks = self.tokenize(&probe.id, &text)?;
                        let k = toks.len();
                        match config.mask_mode {
                            MaskMode::Multiple => {
                                positions.extend(mask_at..mask_at + k);
                                shape.push(ShapeItem::Masks(k));
                                mask_at += k;
                            }
                            MaskMode::Single => {
                                positions.extend(std::iter::repeat_n(mask_at, k));
                                shape.push(ShapeItem::Masks(1));
                                mask_at += 1;
                            }
                        }
                        for t in toks {
                            tokens.push(t.id);
                            pieces.push(t.text);
                        }
                    }
                }
            }
            if tokens.is_empty() {
                return Err(ScoringError::EmptyCandidate(surface.clone()));
            }
            prepared.push(Prepared {
                tokenized: TokenizedCandidate {
                    surface: surface.clone(),
                    n: tokens.len(),
                    tokens,
                    pieces,
                },
                shape,
                positions,
            });
        }

        let mut groups: IndexMap<&[ShapeItem], Vec<usize>> = IndexMap::new();
        for (i, p) in prepared.iter().enumerate() {
            groups.entry(p.shape.as_slice()).or_default().push(i);
        }
        let mut logprobs: Vec<Vec<f64>> = vec![Vec::new(); prepared.len()];
        for (shape, members) in groups {
            let span: Vec<Segment> = shape
                .iter()
                .flat_map(|item| match item {
                    ShapeItem::Masks(k) => vec![Segment::Mask; *k],
                    ShapeItem::Pseudo(p) => vec![Segment::Pseudo(p.clone())],
                })
                .collect();
            let prompt = probe.prompt.replace_mask_run(&span)?;
            let masks = prompt.mask_count();
            let mut queries: Vec<Vec<String>> = vec![Vec::new(); masks];
            for &m in &members {
                let p = &prepared[m];
                for (piece, &pos) in p.tokenized.pieces.iter().zip(&p.positions) {
                    if !queries[pos].contains(piece) {
                        queries[pos].push(piece.clone());
                    }
                }
            }
            for q in &mut queries {
                q.sort();
            }
            let request = LogprobsRequest {
                segments: prompt.segments,
                pseudowords: probe.pseudowords.clone(),
                queries,
            };
            self.calls.fetch_add(1, Ordering::Relaxed);
            let response = self
                .backend
                .logprobs(&request)
                .map_err(|source| ScoringError::Backend {
                    probe: probe.id.clone(),
                    source,
                })?;
            for &m in &members {
                let p = &prepared[m];
                let mut lps = Vec::with_capacity(p.tokenized.n);
                for (piece, &pos) in p.tokenized.pieces.iter().zip(&p.positions) {
                    let lp = *response
                        .get(pos)
                        .and_then(|map| map.get(piece))
                        .ok_or_else(|| ScoringError::MissingToken(piece.clone()))?;
                    if !lp.is_finite() || lp > 0.0 {
                        return Err(ScoringError::BadLogprob(piece.clone()));
                    }
                    lps.push(lp);
                }
                logprobs[m] = lps;
            }
        }

        let mut scored: Vec<ScoredCandidate> = prepared
            .into_iter()
            .zip(logprobs)
            .map(|(p, lps)| ScoredCandidate {
                score: pool(config.pooling, &lps),
                candidate: p.tokenized,
                per_token_logprobs: lps,
                rank: 0,
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score));
        for (i, s) in scored.iter_mut().enumerate() {
            s.rank = i + 1;
        }
        Ok(scored)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub surface: String,
    pub score: f64,
    pub logprobs: Vec<f64>,
}

/// One line of a result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<usize>,
    pub config: ScoringConfig,
    pub ranked: Vec<RankedEntry>,
    pub golds: Vec<String>,
    pub gold_ranks: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProbeResult {
    pub fn key(&self) -> String {
        result_key(&self.id, self.pair)
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// `1 / best gold rank`, 0 when no gold was ranked.
    pub fn reciprocal_rank(&self) -> f64 {
        self.gold_ranks.iter().min().map(|&r| 1.0 / r as f64).unwrap_or(0.0)
    }
}

pub fn probe_one(scorer: &Scorer<'_>, probe: &Probe, config: ScoringConfig) -> Result<ProbeResult, ScoringError> {
    let scored = scorer.score(probe, config)?;
    let ranked: Vec<RankedEntry> = scored
        .into_iter()
        .map(|s| RankedEntry {
            surface: s.candidate.surface,
            score: s.score,
            logprobs: s.per_token_logprobs,
        })
        .collect();
    let surfaces: Vec<&str> = ranked.iter().map(|r| r.surface.as_str()).collect();
    Ok(ProbeResult {
        id: probe.id.clone(),
        pair: probe.pair,
        config,
        gold_ranks: gold_ranks(&surfaces, &probe.golds),
        golds: probe.golds.clone(),
        ranked,
        error: None,
    })
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    /// Probes scored concurrently.
    pub in_flight: usize,
    /// Progress journal; completed entries are skipped on rerun.
    pub journal: Option<PathBuf>,
    /// Extra attempts for retryable failures.
    pub retries: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            in_flight: 4,
            journal: None,
            retries: 2,
        }
    }
}

/// Successful journal entries keyed by result key. Unparseable lines, such
/// as a tail cut off by a crash, are ignored.
pub fn read_journal(path: &Path) -> std::io::Result<BTreeMap<String, ProbeResult>> {
    read_journal_where(path, |_| true)
}

fn read_journal_where(
    path: &Path,
    keep: impl Fn(&ProbeResult) -> bool,
) -> std::io::Result<BTreeMap<String, ProbeResult>> {
    let mut done = BTreeMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(e),
    };
    for line in BufReader::new(file).lines() {
        let line = line?;
        if let Ok(r) = serde_json::from_str::<ProbeResult>(&line) {
            if r.is_ok() && keep(&r) {
                done.insert(r.key(), r);
            }
        }
    }
    Ok(done)
}

/// Scores every probe, resuming from the journal if one is given. Failed
/// probes appear with `error` set. Output is sorted by id, then pair.
pub fn batch_probe(
    scorer: &Scorer<'_>,
    probes: &[Probe],
    config: ScoringConfig,
    opts: &BatchOptions,
) -> std::io::Result<Vec<ProbeResult>> {
    // One journal may hold several configs; only this one's entries count.
    let mut done = match &opts.journal {
        Some(p) => read_journal_where(p, |r| r.config == config)?,
        None => BTreeMap::new(),
    };
    let mut seen = HashSet::new();
    let todo: Vec<&Probe> = probes
        .iter()
        .filter(|p| seen.insert(p.key()) && !done.contains_key(&p.key()))
        .collect();

    let journal = match &opts.journal {
        Some(p) => {
            // A partial last line from a crash must not glue onto the next record.
            let needs_newline = std::fs::read(p)
                .map(|b| b.last().is_some_and(|c| *c != b'\n'))
                .unwrap_or(false);
            let mut f = BufWriter::new(OpenOptions::new().create(true).append(true).open(p)?);
            if needs_newline {
                f.write_all(b"\n")?;
                f.flush()?;
            }
            Some(Mutex::new(f))
        }
        None => None,
    };
    let next = AtomicUsize::new(0);
    let fresh: Mutex<Vec<ProbeResult>> = Mutex::new(Vec::with_capacity(todo.len()));
    let io_error: Mutex<Option<std::io::Error>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..opts.in_flight.max(1).min(todo.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(probe) = todo.get(i) else { break };
                let mut attempt = 0;
                let result = loop {
                    match probe_one(scorer, probe, config) {
                        Ok(r) => break r,
                        Err(e) if e.is_retryable() && attempt < opts.retries => attempt += 1,
                        Err(e) => {
                            log::warn!("probe {} failed: {e}", probe.key());
                            break ProbeResult {
                                id: probe.id.clone(),
                                pair: probe.pair,
                                config,
                                ranked: Vec::new(),
                                golds: probe.golds.clone(),
                                gold_ranks: Vec::new(),
                                error: Some(e.to_string()),
                            };
                        }
                    }
                };
                if let Some(j) = &journal {
                    let mut j = j.lock().unwrap();
                    let written = serde_json::to_string(&result)
                        .map_err(std::io::Error::other)
                        .and_then(|line| writeln!(j, "{line}"))
                        .and_then(|_| j.flush());
                    if let Err(e) = written {
                        io_error.lock().unwrap().get_or_insert(e);
                    }
                }
                fresh.lock().unwrap().push(result);
            });
        }
    });
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e);
    }
    for r in fresh.into_inner().unwrap() {
        done.insert(r.key(), r);
    }
    let mut out: Vec<ProbeResult> = done.into_values().collect();
    out.sort_by(|a, b| a.id.cmp(&b.id).then(a.pair.cmp(&b.pair)));
    Ok(out)
}

/// Memorizing probes rendered through template `variant`.
pub fn memorizing_probes(
    samples: &[MemorizingSample],
    templates: &TemplateSet,
    variant: &str,
    casing: Casing,
) -> Result<Vec<Probe>, PromptError> {
    samples
        .iter()
        .map(|s| {
            let template = templates.select(s.subtask.relation(), variant)?;
            Ok(Probe {
                id: s.id.clone(),
                pair: None,
                prompt: render_memorizing(s, template, 1, casing)?,
                candidates: s.candidates.clone(),
                golds: s.golds.clone(),
                slots: Vec::new(),
                pseudowords: PseudoVectors::new(),
            })
        })
        .collect()
}

/// Binds pseudoword pairs: one probe per pair, or one unbound probe when no
/// set is given.
fn expand_pairs(base: Probe, pseudo: Option<&PseudowordSet>) -> Vec<Probe> {
    match pseudo {
        Some(set) if set.pair_count() > 0 => (0..set.pair_count())
            .map(|k| {
                let mut p = base.clone();
                p.pair = Some(k);
                let vectors = set.pair(k).unwrap_or_default();
                p.pseudowords = vectors
                    .into_iter()
                    .filter(|(slot, _)| base.slots.contains(slot))
                    .collect();
                p
            })
            .collect(),
        _ => vec![base],
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReasoningRender {
    pub conjunction: Conjunction,
    pub order: PremiseOrder,
    pub casing: Casing,
}

pub fn reasoning_probes(
    instances: &[ReasoningInstance],
    render: &ReasoningRender,
    pseudo: Option<&PseudowordSet>,
) -> Result<Vec<Probe>, PromptError> {
    let mut out = Vec::new();
    for inst in instances {
        let base = Probe {
            id: inst.id.clone(),
            pair: None,
            prompt: render_reasoning(inst, &render.conjunction, 1, render.order, render.casing)?,
            candidates: inst.candidates.clone(),
            golds: inst.golds.clone(),
            slots: inst.pseudoword_slots.clone(),
            pseudowords: PseudoVectors::new(),
        };
        out.extend(expand_pairs(base, pseudo));
    }
    Ok(out)
}

pub fn premise_probe_list(probes: &[PremiseProbe], casing: Casing, pseudo: Option<&PseudowordSet>) -> Vec<Probe> {
    let mut out = Vec::new();
    for p in probes {
        let base = Probe {
            id: p.id.clone(),
            pair: None,
            prompt: ClozePrompt::new(apply_casing(p.prompt.clone(), casing)),
            candidates: p.candidates.clone(),
            golds: p.golds.clone(),
            slots: p.pseudoword_slots.clone(),
            pseudowords: PseudoVectors::new(),
        };
        out.extend(expand_pairs(base, pseudo));
    }
    out
}
