//! Cloze prompt rendering from manual and soft templates.
//!
//! Templates are token sequences over literal text, a subject slot, a single
//! mask slot, soft-token placeholders and (for domain/range) a verb phrase
//! slot. Rendering produces a [`ClozePrompt`], a flat list of [`Segment`]s
//! that the backend turns into model input. Soft and pseudoword placeholders
//! stay symbolic here.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::entailment::{PremiseMode, ReasoningInstance};
use crate::memorize::MemorizingSample;

pub const MASK_TEXT: &str = "[MASK]";
pub const DEFAULT_CONJUNCTION: &str = "Therefore,";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template `{name}`: {message}")]
    BadTemplate { name: String, message: String },
    #[error("template for {template} cannot render a {sample} sample")]
    RelationMismatch { template: Relation, sample: Relation },
    #[error("no template `{variant}` for relation {relation}")]
    NoTemplate { relation: Relation, variant: String },
    #[error("template file line {line}: {message}")]
    TemplateFile { line: usize, message: String },
    #[error("mask count must be at least 1")]
    ZeroMasks,
    #[error("prompt has {0} mask runs, expected exactly one")]
    MaskRuns(usize),
    #[error("soft checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ontological relation a template verbalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Type,
    SubclassOf,
    SubpropertyOf,
    Domain,
    Range,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::Type,
        Relation::SubclassOf,
        Relation::SubpropertyOf,
        Relation::Domain,
        Relation::Range,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Type => "type",
            Relation::SubclassOf => "subclass_of",
            Relation::SubpropertyOf => "subproperty_of",
            Relation::Domain => "domain",
            Relation::Range => "range",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown relation `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Manual,
    Soft,
}

impl FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "manual" => Ok(TemplateKind::Manual),
            "soft" => Ok(TemplateKind::Soft),
            _ => Err(format!("unknown template kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Casing {
    #[default]
    Cased,
    Uncased,
}

impl Casing {
    pub fn apply(self, s: &str) -> String {
        match self {
            Casing::Cased => s.to_string(),
            Casing::Uncased => s.to_lowercase(),
        }
    }
}

/// One element of a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Text(String),
    Mask,
    /// Soft token id, `<group>.s<n>`.
    Soft(String),
    /// Pseudoword placeholder id, e.g. `X`.
    Pseudo(String),
}

impl Segment {
    pub fn text(s: impl Into<String>) -> Self {
        Segment::Text(s.into())
    }

    fn display(&self) -> String {
        match self {
            Segment::Text(t) => t.clone(),
            Segment::Mask => MASK_TEXT.to_string(),
            Segment::Soft(id) => format!("<{}>", id.rsplit('.').next().unwrap_or(id)),
            Segment::Pseudo(id) => format!("[{id}]"),
        }
    }
}

/// A masked prompt ready for scoring.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClozePrompt {
    pub segments: Vec<Segment>,
}

impl ClozePrompt {
    pub fn new(segments: Vec<Segment>) -> Self {
        ClozePrompt { segments }
    }

    pub fn mask_count(&self) -> usize {
        self.segments.iter().filter(|s| **s == Segment::Mask).count()
    }

    /// Human-readable rendering with `[MASK]`, `<sN>` and `[X]` markers.
    pub fn text(&self) -> String {
        self.segments.iter().map(Segment::display).collect::<Vec<_>>().join(" ")
    }

    /// Text with every run of masks and pseudowords that contains a mask
    /// collapsed to one `[MASK]`. Identifies the cloze independently of how
    /// a candidate fills the masked span.
    pub fn fingerprint(&self) -> String {
        let mut out: Vec<String> = Vec::new();
        let mut i = 0;
        while i < self.segments.len() {
            let start = i;
            while i < self.segments.len() && matches!(self.segments[i], Segment::Mask | Segment::Pseudo(_)) {
                i += 1;
            }
            let run = &self.segments[start..i];
            if run.contains(&Segment::Mask) {
                out.push(MASK_TEXT.into());
            } else {
                out.extend(run.iter().map(Segment::display));
            }
            if i < self.segments.len() && start == i {
                out.push(self.segments[i].display());
                i += 1;
            }
        }
        out.join(" ")
    }

    fn mask_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < self.segments.len() {
            if self.segments[i] == Segment::Mask {
                let start = i;
                while i < self.segments.len() && self.segments[i] == Segment::Mask {
                    i += 1;
                }
                runs.push((start, i));
            } else {
                i += 1;
            }
        }
        runs
    }

    /// Replaces the single run of masks with `span`.
    pub fn replace_mask_run(&self, span: &[Segment]) -> Result<ClozePrompt, PromptError> {
        let runs = self.mask_runs();
        let [(start, end)] = runs.as_slice() else {
            return Err(PromptError::MaskRuns(runs.len()));
        };
        let mut segments = self.segments[..*start].to_vec();
        segments.extend_from_slice(span);
        segments.extend_from_slice(&self.segments[*end..]);
        Ok(ClozePrompt { segments })
    }

    /// Same prompt with its mask run resized to `n` masks.
    pub fn with_masks(&self, n: usize) -> Result<ClozePrompt, PromptError> {
        if n == 0 {
            return Err(PromptError::ZeroMasks);
        }
        self.replace_mask_run(&vec![Segment::Mask; n])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplatePart {
    Text(String),
    Subject,
    Mask,
    Soft(u8),
    /// Domain or range verb phrase of the subject property.
    Phrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub relation: Relation,
    pub kind: TemplateKind,
    pub name: String,
    pub parts: Vec<TemplatePart>,
}

impl Template {
    /// Parses a body with `{subj}`, `{mask}`, `{phrase}` and `{s1}`.. markers.
    pub fn parse(relation: Relation, kind: TemplateKind, name: &str, body: &str) -> Result<Template, PromptError> {
        let bad = |message: String| PromptError::BadTemplate {
            name: name.to_string(),
            message,
        };
        let mut parts = Vec::new();
        let mut rest = body;
        let push_text = |parts: &mut Vec<TemplatePart>, t: &str| {
            let t = t.trim();
            if !t.is_empty() {
                parts.push(TemplatePart::Text(t.to_string()));
            }
        };
        while let Some(open) = rest.find('{') {
            push_text(&mut parts, &rest[..open]);
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| bad("unterminated marker".into()))?
                + open;
            let marker = &rest[open + 1..close];
            parts.push(match marker {
                "subj" => TemplatePart::Subject,
                "mask" => TemplatePart::Mask,
                "phrase" => TemplatePart::Phrase,
                m if m.starts_with('s') && m[1..].parse::<u8>().is_ok() => TemplatePart::Soft(m[1..].parse().unwrap()),
                m => return Err(bad(format!("unknown marker {{{m}}}"))),
            });
            rest = &rest[close + 1..];
        }
        push_text(&mut parts, rest);

        let masks = parts.iter().filter(|p| **p == TemplatePart::Mask).count();
        if masks != 1 {
            return Err(bad(format!("expected exactly one {{mask}}, found {masks}")));
        }
        if kind == TemplateKind::Soft {
            for (i, p) in parts.iter().enumerate() {
                match p {
                    TemplatePart::Subject | TemplatePart::Mask | TemplatePart::Soft(_) => {}
                    TemplatePart::Text(t) if t == "." && i + 1 == parts.len() => {}
                    other => {
                        return Err(bad(format!(
                            "soft templates may only hold the subject, soft tokens, the mask and a final period; found {other:?}"
                        )))
                    }
                }
            }
        }
        Ok(Template {
            relation,
            kind,
            name: name.to_string(),
            parts,
        })
    }

    fn soft_id(&self, n: u8) -> String {
        format!("{}.s{n}", self.relation)
    }
}

/// What fills a subject or object slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Label(String),
    Pseudo(String),
}

impl Surface {
    fn segment(&self) -> Segment {
        match self {
            Surface::Label(l) => Segment::Text(l.clone()),
            Surface::Pseudo(p) => Segment::Pseudo(p.clone()),
        }
    }
}

/// Built-in templates plus any registered from a template file.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<Template>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        use Relation::*;
        use TemplateKind::*;
        let defs: &[(Relation, TemplateKind, &str, &str)] = &[
            (Type, Manual, "manual1", "{subj} is a {mask} ."),
            (Type, Manual, "manual2", "{subj} has class {mask} ."),
            (Type, Manual, "manual3", "{subj} is a particular {mask} ."),
            (SubclassOf, Manual, "manual1", "{subj} is a {mask} ."),
            (SubclassOf, Manual, "manual2", "{subj} has superclass {mask} ."),
            (SubclassOf, Manual, "manual3", "{subj} is a particular {mask} ."),
            (SubpropertyOf, Manual, "manual1", "{subj} implies {mask} ."),
            (
                Domain,
                Manual,
                "manual1",
                "One has to be a particular {mask} to {phrase} .",
            ),
            (
                Range,
                Manual,
                "manual1",
                "One has to be a particular {mask} to {phrase} .",
            ),
        ];
        let mut templates: Vec<Template> = defs
            .iter()
            .map(|(r, k, n, b)| Template::parse(*r, *k, n, b).expect("built-in template"))
            .collect();
        for r in Relation::ALL {
            templates
                .push(Template::parse(r, Soft, "soft", "{subj} {s1} {s2} {s3} {mask} .").expect("built-in template"));
        }
        TemplateSet { templates }
    }

    /// Adds or replaces (same relation and name) a template.
    pub fn register(&mut self, template: Template) {
        if let Some(t) = self
            .templates
            .iter_mut()
            .find(|t| t.relation == template.relation && t.name == template.name)
        {
            *t = template;
        } else {
            self.templates.push(template);
        }
    }

    /// Reads `relation<TAB>kind<TAB>body[<TAB>name]` lines.
    pub fn load_file(&mut self, reader: impl Read) -> Result<(), PromptError> {
        let mut text = String::new();
        let mut reader = reader;
        reader.read_to_string(&mut text)?;
        let mut counters: IndexMap<(Relation, TemplateKind), usize> = IndexMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(PromptError::TemplateFile {
                    line: line_no,
                    message: format!("expected 3 or 4 fields, found {}", fields.len()),
                });
            }
            let err = |message: String| PromptError::TemplateFile { line: line_no, message };
            let relation: Relation = fields[0].parse().map_err(err)?;
            let kind: TemplateKind = fields[1].parse().map_err(err)?;
            let n = counters.entry((relation, kind)).or_default();
            *n += 1;
            let name = match fields.get(3) {
                Some(name) => name.to_string(),
                None => format!(
                    "file-{}{}",
                    if kind == TemplateKind::Soft { "soft" } else { "manual" },
                    n
                ),
            };
            self.register(Template::parse(relation, kind, &name, fields[2])?);
        }
        Ok(())
    }

    /// Looks up a template variant. Relations with a single manual template
    /// answer every `manualN` request with it.
    pub fn select(&self, relation: Relation, variant: &str) -> Result<&Template, PromptError> {
        let find = |name: &str| self.templates.iter().find(|t| t.relation == relation && t.name == name);
        find(variant)
            .or_else(|| variant.starts_with("manual").then(|| find("manual1")).flatten())
            .ok_or_else(|| PromptError::NoTemplate {
                relation,
                variant: variant.to_string(),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Template> {
        self.templates.iter()
    }

    /// Distinct variant names, in registration order.
    pub fn variants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.templates {
            if !out.contains(&t.name) {
                out.push(t.name.clone());
            }
        }
        out
    }
}

fn render_parts(template: &Template, subject: &Surface, mask: &[Segment], phrase: Option<&str>) -> Vec<Segment> {
    let mut out = Vec::new();
    for part in &template.parts {
        match part {
            TemplatePart::Text(t) => out.push(Segment::Text(t.clone())),
            TemplatePart::Subject => out.push(subject.segment()),
            TemplatePart::Mask => out.extend_from_slice(mask),
            TemplatePart::Soft(n) => out.push(Segment::Soft(template.soft_id(*n))),
            TemplatePart::Phrase => {
                if let Some(p) = phrase {
                    out.push(Segment::Text(p.to_string()));
                }
            }
        }
    }
    out
}

pub fn apply_casing(segments: Vec<Segment>, casing: Casing) -> Vec<Segment> {
    segments
        .into_iter()
        .map(|s| match s {
            Segment::Text(t) => Segment::Text(casing.apply(&t)),
            other => other,
        })
        .collect()
}

/// Renders a template into a cloze prompt with `mask_count` masks.
pub fn render_template(
    template: &Template,
    subject: &Surface,
    phrase: Option<&str>,
    mask_count: usize,
    casing: Casing,
) -> Result<ClozePrompt, PromptError> {
    if mask_count == 0 {
        return Err(PromptError::ZeroMasks);
    }
    let segments = render_parts(template, subject, &vec![Segment::Mask; mask_count], phrase);
    Ok(ClozePrompt::new(apply_casing(segments, casing)))
}

pub fn render_memorizing(
    sample: &MemorizingSample,
    template: &Template,
    mask_count: usize,
    casing: Casing,
) -> Result<ClozePrompt, PromptError> {
    let relation = sample.subtask.relation();
    if template.relation != relation {
        return Err(PromptError::RelationMismatch {
            template: template.relation,
            sample: relation,
        });
    }
    render_template(
        template,
        &Surface::Label(sample.subject_label.clone()),
        sample.phrase.as_deref(),
        mask_count,
        casing,
    )
}

fn starts_with_vowel(s: &str) -> bool {
    s.chars().next().map(|c| "aeiouAEIOU".contains(c)).unwrap_or(false)
}

/// Renders a true statement `subject relation object` through a template:
/// the mask is filled with the object. Manual statements get sentence
/// casing, a/an agreement and a closing period without the cloze spacing.
pub fn render_statement(
    template: &Template,
    subject: &Surface,
    object: &Surface,
    phrase: Option<&str>,
) -> Vec<Segment> {
    let mut segs = render_parts(template, subject, &[object.segment()], phrase);
    if template.kind == TemplateKind::Soft {
        return segs;
    }
    if let Surface::Label(obj) = object {
        let obj_at = segs
            .iter()
            .position(|s| matches!(s, Segment::Text(t) if t == obj))
            .filter(|&i| i > 0);
        if let Some(i) = obj_at {
            if let Segment::Text(prev) = &mut segs[i - 1] {
                if starts_with_vowel(obj) && (prev == "a" || prev.ends_with(" a")) {
                    prev.push('n');
                }
            }
        }
    }
    finish_sentence(segs)
}

/// Closes a manual sentence: attaches a trailing "." to the preceding text
/// and capitalizes the first letter.
fn finish_sentence(mut segs: Vec<Segment>) -> Vec<Segment> {
    if segs.len() >= 2 && segs.last() == Some(&Segment::text(".")) {
        let n = segs.len();
        if let Segment::Text(prev) = &mut segs[n - 2] {
            prev.push('.');
            segs.pop();
        }
    }
    if let Some(Segment::Text(first)) = segs.first_mut() {
        let mut chars = first.chars();
        if let Some(c) = chars.next() {
            *first = c.to_uppercase().chain(chars).collect();
        }
    }
    segs
}

/// Splits a property pattern into segments with `[X]`/`[Y]` bound.
pub fn render_pattern(pattern: &str, x: &Surface, y: &Surface) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut rest = pattern;
    loop {
        let next = [("[X]", x), ("[Y]", y)]
            .into_iter()
            .filter_map(|(m, s)| rest.find(m).map(|i| (i, m, s)))
            .min_by_key(|(i, _, _)| *i);
        match next {
            Some((i, marker, surface)) => {
                let before = rest[..i].trim();
                if !before.is_empty() {
                    out.push(Segment::text(before));
                }
                out.push(surface.segment());
                rest = &rest[i + marker.len()..];
            }
            None => {
                let tail = rest.trim();
                if !tail.is_empty() {
                    out.push(Segment::text(tail));
                }
                break;
            }
        }
    }
    out
}

/// Pattern rendered as a statement (sentence casing, closing period).
pub fn render_pattern_statement(pattern: &str, x: &Surface, y: &Surface) -> Vec<Segment> {
    let mut segs = render_pattern(pattern, x, y);
    if !matches!(segs.last(), Some(Segment::Text(t)) if t.ends_with('.')) {
        segs.push(Segment::text("."));
    }
    finish_sentence(segs)
}

/// Connective between premises and hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conjunction {
    /// Literal adverb placed before the hypothesis.
    Manual(String),
    /// `<s4>` between explicit premises, `<s5>` before the hypothesis.
    Soft,
}

impl Default for Conjunction {
    fn default() -> Self {
        Conjunction::Manual(DEFAULT_CONJUNCTION.to_string())
    }
}

impl FromStr for Conjunction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "manual" => Ok(Conjunction::default()),
            "soft" => Ok(Conjunction::Soft),
            other => match other.strip_prefix("manual:") {
                Some(text) => Ok(Conjunction::Manual(text.to_string())),
                None => Err(format!("unknown conjunction `{other}`")),
            },
        }
    }
}

pub const SOFT_CONJ_BETWEEN: &str = "conj.s4";
pub const SOFT_CONJ_BEFORE: &str = "conj.s5";

/// Order in which explicit premises are concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiseOrder {
    #[default]
    P1First,
    P2First,
}

pub fn render_reasoning(
    instance: &ReasoningInstance,
    conj: &Conjunction,
    mask_count: usize,
    order: PremiseOrder,
    casing: Casing,
) -> Result<ClozePrompt, PromptError> {
    let mut premises = [&instance.p1, &instance.p2];
    if order == PremiseOrder::P2First {
        premises.reverse();
    }
    let explicit: Vec<&Vec<Segment>> = premises
        .iter()
        .filter(|p| p.mode == PremiseMode::Ex)
        .filter_map(|p| p.rendered.as_ref())
        .collect();

    let mut segs = Vec::new();
    for (i, p) in explicit.iter().enumerate() {
        if i > 0 && *conj == Conjunction::Soft {
            segs.push(Segment::Soft(SOFT_CONJ_BETWEEN.into()));
        }
        segs.extend(p.iter().cloned());
    }
    match conj {
        Conjunction::Manual(text) => segs.push(Segment::Text(text.clone())),
        Conjunction::Soft => segs.push(Segment::Soft(SOFT_CONJ_BEFORE.into())),
    }
    segs.extend(instance.hypothesis.iter().cloned());
    let prompt = ClozePrompt::new(apply_casing(segs, casing));
    prompt.with_masks(mask_count)
}

/// Trained soft-token vectors keyed by placeholder id.
///
/// Binary layout, little-endian: magic `OPSK`, `u32` version (1), `u32`
/// dimension, `u32` entry count, `u32` metadata length and UTF-8 metadata,
/// then per entry a `u32` id length, UTF-8 id and `dimension` `f32` values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SoftCheckpoint {
    pub dimension: usize,
    pub metadata: String,
    pub vectors: IndexMap<String, Vec<f32>>,
}

const SOFT_MAGIC: &[u8; 4] = b"OPSK";

impl SoftCheckpoint {
    pub fn write_to(&self, out: &mut impl Write) -> Result<(), PromptError> {
        out.write_all(SOFT_MAGIC)?;
        for v in [1u32, self.dimension as u32, self.vectors.len() as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        write_str(out, &self.metadata)?;
        for (id, v) in &self.vectors {
            if v.len() != self.dimension {
                return Err(PromptError::Checkpoint(format!(
                    "vector `{id}` has dimension {}, expected {}",
                    v.len(),
                    self.dimension
                )));
            }
            write_str(out, id)?;
            for x in v {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self, PromptError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != SOFT_MAGIC {
            return Err(PromptError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(input)?;
        if version != 1 {
            return Err(PromptError::Checkpoint(format!("unsupported version {version}")));
        }
        let dimension = read_u32(input)? as usize;
        let count = read_u32(input)? as usize;
        let metadata = read_str(input)?;
        let mut vectors = IndexMap::new();
        for _ in 0..count {
            let id = read_str(input)?;
            let mut v = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                let mut b = [0u8; 4];
                input.read_exact(&mut b)?;
                v.push(f32::from_le_bytes(b));
            }
            vectors.insert(id, v);
        }
        Ok(SoftCheckpoint {
            dimension,
            metadata,
            vectors,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

pub(crate) fn read_u32(input: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_str(out: &mut impl Write, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

fn read_str(input: &mut impl Read) -> Result<String, PromptError> {
    let len = read_u32(input)? as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| PromptError::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memorize::{Split, Subtask};

    fn sample(subtask: Subtask, label: &str, phrase: Option<&str>) -> MemorizingSample {
        MemorizingSample {
            id: "x".into(),
            subtask,
            subject_id: crate::ontology::NodeId::new("s").unwrap(),
            subject_label: label.into(),
            phrase: phrase.map(str::to_string),
            golds: vec!["g".into()],
            candidates: vec!["g".into()],
            split: Split::Test,
        }
    }

    #[test]
    fn type_manual3_matches_table() {
        let set = TemplateSet::builtin();
        let t = set.select(Relation::Type, "manual3").unwrap();
        let p = render_memorizing(&sample(Subtask::Tp, "Lionel Messi", None), t, 1, Casing::Cased).unwrap();
        assert_eq!(p.text(), "Lionel Messi is a particular [MASK] .");
    }

    #[test]
    fn range_manual_uses_phrase() {
        let set = TemplateSet::builtin();
        let t = set.select(Relation::Range, "manual1").unwrap();
        let s = sample(Subtask::Rg, "member of sports team", Some("have a player at that"));
        let p = render_memorizing(&s, t, 1, Casing::Cased).unwrap();
        assert_eq!(p.text(), "One has to be a particular [MASK] to have a player at that .");
    }

    #[test]
    fn mask_count_expands() {
        let set = TemplateSet::builtin();
        let t = set.select(Relation::SubclassOf, "manual1").unwrap();
        let p = render_memorizing(&sample(Subtask::Sco, "person", None), t, 3, Casing::Cased).unwrap();
        assert_eq!(p.text(), "person is a [MASK] [MASK] [MASK] .");
        assert_eq!(p.mask_count(), 3);
        assert_eq!(p.fingerprint(), "person is a [MASK] .");
    }

    #[test]
    fn relation_mismatch_is_rejected() {
        let set = TemplateSet::builtin();
        let t = set.select(Relation::Domain, "manual1").unwrap();
        let err = render_memorizing(&sample(Subtask::Tp, "x", None), t, 1, Casing::Cased).unwrap_err();
        assert!(matches!(err, PromptError::RelationMismatch { .. }));
    }

    #[test]
    fn soft_template_renders_placeholders() {
        let set = TemplateSet::builtin();
        let t = set.select(Relation::Type, "soft").unwrap();
        let p = render_memorizing(&sample(Subtask::Tp, "Lionel Messi", None), t, 1, Casing::Cased).unwrap();
        assert_eq!(p.text(), "Lionel Messi <s1> <s2> <s3> [MASK] .");
        assert!(p.segments.contains(&Segment::Soft("type.s1".into())));
    }

    #[test]
    fn single_manual_variant_answers_all_manual_requests() {
        let set = TemplateSet::builtin();
        assert_eq!(set.select(Relation::SubpropertyOf, "manual3").unwrap().name, "manual1");
        assert!(set.select(Relation::SubpropertyOf, "nope").is_err());
    }

    #[test]
    fn template_validation() {
        assert!(Template::parse(Relation::Type, TemplateKind::Manual, "t", "{subj} is").is_err());
        assert!(Template::parse(Relation::Type, TemplateKind::Manual, "t", "{mask} {mask}").is_err());
        assert!(Template::parse(Relation::Type, TemplateKind::Soft, "t", "{subj} is a {mask} .").is_err());
        assert!(Template::parse(Relation::Type, TemplateKind::Manual, "t", "{subj} {bogus} {mask}").is_err());
    }

    #[test]
    fn template_file_registers_variants() {
        let mut set = TemplateSet::builtin();
        set.load_file(
            "type\tmanual\t{subj} belongs to {mask} .\tbelongs\n# c\nrange\tsoft\t{subj} {s1} {mask} .\n".as_bytes(),
        )
        .unwrap();
        let t = set.select(Relation::Type, "belongs").unwrap();
        let p = render_template(t, &Surface::Label("Rex".into()), None, 1, Casing::Uncased).unwrap();
        assert_eq!(p.text(), "rex belongs to [MASK] .");
        assert!(set.select(Relation::Range, "file-soft1").is_ok());
        assert!(set.load_file("type\tmanual\n".as_bytes()).is_err());
    }

    #[test]
    fn statements_read_as_sentences() {
        let set = TemplateSet::builtin();
        let sco = set.select(Relation::SubclassOf, "manual1").unwrap();
        let s = render_statement(
            sco,
            &Surface::Label("person".into()),
            &Surface::Label("animal".into()),
            None,
        );
        assert_eq!(ClozePrompt::new(s).text(), "Person is an animal.");
        let tp = set.select(Relation::Type, "manual1").unwrap();
        let s = render_statement(tp, &Surface::Pseudo("X".into()), &Surface::Label("person".into()), None);
        assert_eq!(ClozePrompt::new(s).text(), "[X] is a person.");
    }

    #[test]
    fn pattern_binds_slots() {
        let x = Surface::Pseudo("X".into());
        let y = Surface::Pseudo("Y".into());
        let segs = render_pattern("[X] is a player at [Y] .", &x, &y);
        assert_eq!(
            segs,
            vec![
                Segment::Pseudo("X".into()),
                Segment::text("is a player at"),
                Segment::Pseudo("Y".into()),
                Segment::text(".")
            ]
        );
        let st = render_pattern_statement("[Y] employs [X]", &x, &y);
        assert_eq!(ClozePrompt::new(st).text(), "[Y] employs [X] .");
    }

    #[test]
    fn replace_mask_run_requires_one_run() {
        let p = ClozePrompt::new(vec![Segment::Mask, Segment::text("a"), Segment::Mask]);
        assert!(matches!(p.replace_mask_run(&[]), Err(PromptError::MaskRuns(2))));
        assert!(matches!(p.with_masks(0), Err(PromptError::ZeroMasks)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut ck = SoftCheckpoint {
            dimension: 3,
            metadata: "{\"init\":\"normal\"}".into(),
            ..Default::default()
        };
        ck.vectors.insert("type.s1".into(), vec![1.0, -2.5, 0.0]);
        ck.vectors.insert("conj.s4".into(), vec![0.5, 0.25, 8.0]);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"OPSK");
        let back = SoftCheckpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(ck, back);
        ck.vectors.insert("bad".into(), vec![1.0]);
        assert!(ck.write_to(&mut Vec::new()).is_err());
    }
}
