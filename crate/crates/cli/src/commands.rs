use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use ontoprobe::backend::mock::OracleSpec;
use ontoprobe::backend::{serve_connection, Backend, BackendError, MockOracle, ServeOptions, WireClient};
use ontoprobe::entailment::{
    generate_reasoning, materialize_closure, parse_grid, premise_probes, CandidatePolicy, PremiseProbe, RdfsRule,
    ReasoningHeader, ReasoningInstance, ReasoningOptions,
};
use ontoprobe::eval::{
    assemble_cells, average_reports, choice_accuracy, classify_reasoning_premises, compute_metrics, frequency_baseline,
    gold_ranks, macro_average_cells, report_tsv, InstanceRanks, MetricReport, ReportRow,
};
use ontoprobe::ingest::{
    align_and_cleanse, apply_patch, assemble_graph, parse_instance_dump, parse_property_dump, sample_instances,
    CleanseOptions,
};
use ontoprobe::jsonl::{read_jsonl, write_jsonl};
use ontoprobe::manifest::RunManifest;
use ontoprobe::memorize::{
    generate_memorizing, to_multiple_choice, ChoiceQuestion, MemorizeOptions, MemorizingHeader, MemorizingSample, Split,
};
use ontoprobe::ontology::{load_graph, save_graph};
use ontoprobe::prompt::{Casing, Conjunction, PremiseOrder, TemplateKind, TemplateSet};
use ontoprobe::pseudoword::{sample_pseudowords, EmbeddingTable, PseudowordSet, SampleMode, SampleOptions};
use ontoprobe::scoring::{
    batch_probe, memorizing_probes, premise_probe_list, reasoning_probes, BatchOptions, MaskMode, Pooling, Probe,
    ProbeResult, ReasoningRender, Scorer, ScoringConfig, ScoringError,
};

use crate::files::*;
use crate::{
    BackendArgs, BuildGraphArgs, Command, EvalArgs, GenMemArgs, GenReasonArgs, IngestArgs, ProbeArgs, PseudowordArgs,
    RenderArgs, ReportArgs, ServeMockArgs, SweepArgs, EXIT_BACKEND, EXIT_VALIDATION,
};

/// Some probes failed at the backend; partial results were still written.
#[derive(Debug)]
pub struct ProbeFailures {
    pub failed: usize,
    pub total: usize,
}

impl std::fmt::Display for ProbeFailures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} probes failed at the backend", self.failed, self.total)
    }
}

impl std::error::Error for ProbeFailures {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<BackendError>()
            || cause.is::<ProbeFailures>()
            || matches!(cause.downcast_ref::<ScoringError>(), Some(ScoringError::Backend { .. }))
        {
            return EXIT_BACKEND;
        }
    }
    EXIT_VALIDATION
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::BuildGraph(a) => build_graph(a),
        Command::GenMem(a) => gen_mem(a),
        Command::GenReason(a) => gen_reason(a),
        Command::Pseudowords(a) => pseudowords(a),
        Command::Probe(a) => probe(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Sweep(a) => sweep(a),
        Command::ServeMock(a) => serve_mock(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T> {
    s.parse::<T>().map_err(|e| anyhow!(e))
}

fn parse_list<T: std::str::FromStr<Err = String>>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(parse)
        .collect()
}

fn parse_ks(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|k| k.trim().parse::<usize>().with_context(|| format!("bad K `{k}`")))
        .collect()
}

fn ingest(a: IngestArgs) -> Result<()> {
    let classes = load_graph(&a.classes).with_context(|| format!("loading {}", a.classes.display()))?;
    let mut records = Vec::new();
    for p in &a.properties {
        records.extend(parse_property_dump(open(p)?).with_context(|| format!("parsing {}", p.display()))?);
    }
    let mut aligned = align_and_cleanse(&records, &classes, CleanseOptions { strict: a.strict })?;
    if let Some(patch) = &a.patch {
        apply_patch(&mut aligned, &classes, open(patch)?).with_context(|| format!("applying {}", patch.display()))?;
    }
    let dump =
        parse_instance_dump(open(&a.instances)?).with_context(|| format!("parsing {}", a.instances.display()))?;
    let sampled = sample_instances(&dump.members, a.sample_size, a.seed)?;
    let graph = assemble_graph(&classes, &mut aligned, &sampled, &dump)?;
    save_graph(&graph, &a.out)?;

    let mut m = RunManifest::new("ingest");
    m.graph_hash = Some(graph.content_hash());
    m.seeds.insert("seed".into(), a.seed);
    m.settings.insert("sample_size".into(), a.sample_size.to_string());
    m.settings.insert("strict".into(), a.strict.to_string());
    m.inputs.push(path_str(&a.classes));
    m.inputs.push(path_str(&a.instances));
    m.inputs.extend(a.properties.iter().map(|p| path_str(p)));
    m.inputs.extend(a.patch.iter().map(|p| path_str(p)));
    m.outputs.push(path_str(&a.out));
    if let Some(r) = &a.report {
        std::fs::write(r, aligned.report.to_tsv())?;
        m.outputs.push(path_str(r));
    }
    write_manifest(&a.out, &m)
}

fn build_graph(a: BuildGraphArgs) -> Result<()> {
    let graph = load_graph(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    save_graph(&graph, &a.out)?;
    let mut m = RunManifest::new("build-graph");
    m.graph_hash = Some(graph.content_hash());
    m.inputs.push(path_str(&a.input));
    m.outputs.push(path_str(&a.out));
    if let Some(p) = &a.provenance {
        let closure = materialize_closure(&graph);
        let mut out = std::io::BufWriter::new(File::create(p)?);
        closure.write_provenance(&mut out)?;
        out.flush()?;
        m.outputs.push(path_str(p));
        log::info!(
            "closure: {} asserted, {} derived",
            closure.asserted,
            closure.derivations.len()
        );
    }
    write_manifest(&a.out, &m)
}

fn gen_mem(a: GenMemArgs) -> Result<()> {
    let graph = load_graph(&a.graph).with_context(|| format!("loading {}", a.graph.display()))?;
    std::fs::create_dir_all(&a.out)?;
    let opts = MemorizeOptions {
        seed: a.seed,
        transitive_types: !a.asserted_types_only,
    };
    let mut m = RunManifest::new("gen-mem");
    m.graph_hash = Some(graph.content_hash());
    m.seeds.insert("seed".into(), a.seed);
    m.settings
        .insert("transitive_types".into(), opts.transitive_types.to_string());
    m.inputs.push(path_str(&a.graph));
    for (subtask, data) in generate_memorizing(&graph, &opts) {
        let path = a.out.join(format!("{subtask}.jsonl"));
        write_jsonl(&path, &data.header, &data.samples)?;
        m.outputs.push(path_str(&path));
        if let Some(n) = a.mc_choices {
            let questions = data
                .samples
                .iter()
                .map(|s| to_multiple_choice(s, n, a.seed))
                .collect::<Result<Vec<_>, _>>()?;
            let header = ChoiceHeader {
                kind: KIND_CHOICE.into(),
                subtask,
                graph_hash: data.header.graph_hash.clone(),
                seed: a.seed,
                n_choices: n,
            };
            let path = a.out.join(format!("{subtask}.mc.jsonl"));
            write_jsonl(&path, &header, &questions)?;
            m.outputs.push(path_str(&path));
        }
    }
    if let Some(n) = a.mc_choices {
        m.settings.insert("mc_choices".into(), n.to_string());
    }
    write_manifest(&a.out, &m)
}

fn load_templates(path: Option<&PathBuf>) -> Result<TemplateSet> {
    let mut set = TemplateSet::builtin();
    if let Some(p) = path {
        set.load_file(open(p)?)
            .with_context(|| format!("loading templates {}", p.display()))?;
    }
    Ok(set)
}

fn parse_candidates(s: &str) -> Result<CandidatePolicy> {
    match s {
        "full" => Ok(CandidatePolicy::FullVocabulary),
        _ => match s.strip_prefix("sampled:") {
            Some(n) => Ok(CandidatePolicy::Sampled(
                n.parse().with_context(|| format!("bad candidate count `{n}`"))?,
            )),
            None => bail!("candidates must be `full` or `sampled:N`, not `{s}`"),
        },
    }
}

fn gen_reason(a: GenReasonArgs) -> Result<()> {
    let graph = load_graph(&a.graph).with_context(|| format!("loading {}", a.graph.display()))?;
    let templates = load_templates(a.templates.as_ref())?;
    let mut opts = ReasoningOptions::new(a.seed);
    opts.grid = parse_grid(&a.grid).map_err(|e| anyhow!(e))?;
    if let Some(r) = &a.rules {
        opts.rules = parse_list::<RdfsRule>(r)?;
    }
    opts.budget = a.budget;
    opts.hypothesis_variant = a.hypothesis_template.clone();
    opts.statement_kind = parse::<TemplateKind>(&a.statement_kind)?;
    opts.candidate_policy = parse_candidates(&a.candidates)?;
    let (header, instances) = generate_reasoning(&graph, &templates, &opts)?;
    for w in &header.warnings {
        log::warn!("{w}");
    }
    write_jsonl(&a.out, &header, &instances)?;

    let mut m = RunManifest::new("gen-reason");
    m.graph_hash = Some(header.graph_hash.clone());
    m.seeds.insert("seed".into(), a.seed);
    m.template_variant = Some(a.hypothesis_template.clone());
    m.grid = Some(opts.grid.clone());
    m.settings.insert("statement_kind".into(), a.statement_kind.clone());
    m.settings.insert("candidates".into(), a.candidates.clone());
    if let Some(b) = a.budget {
        m.settings.insert("budget".into(), b.to_string());
    }
    m.inputs.push(path_str(&a.graph));
    m.inputs.extend(a.templates.iter().map(|p| path_str(p)));
    m.outputs.push(path_str(&a.out));

    if let Some(p) = &a.premises_out {
        let probes = premise_probes(&graph, &templates, &a.premise_template, &instances)?;
        let ph = PremiseHeader {
            kind: KIND_PREMISE.into(),
            graph_hash: header.graph_hash.clone(),
            seed: a.seed,
            premise_variant: a.premise_template.clone(),
            instances: path_str(&a.out),
        };
        write_jsonl(p, &ph, &probes)?;
        m.outputs.push(path_str(p));
        let mut pm = m.clone();
        pm.template_variant = Some(a.premise_template.clone());
        write_manifest(p, &pm)?;
    }
    write_manifest(&a.out, &m)
}

fn pseudowords(a: PseudowordArgs) -> Result<()> {
    let mut m = RunManifest::new("pseudowords");
    let table = match (&a.embeddings, &a.backend.backend) {
        (Some(p), None) => {
            m.inputs.push(path_str(p));
            EmbeddingTable::load(p).with_context(|| format!("loading {}", p.display()))?
        }
        (None, Some(target)) => {
            let backend = connect_remote(target, &a.backend)?
                .ok_or_else(|| anyhow!("the mock oracle has no embedding table; pass --embeddings"))?;
            m.handshake = Some(backend.handshake().clone());
            let table = backend.embeddings()?;
            if let Some(p) = &a.export_table {
                table.save(p)?;
                m.outputs.push(path_str(p));
            }
            table
        }
        _ => bail!("give exactly one of --embeddings and --backend"),
    };
    let opts = SampleOptions {
        alpha: a.alpha,
        mode: if a.max_distance {
            SampleMode::Ball
        } else {
            SampleMode::Sphere
        },
        budget: a.budget,
    };
    let set = sample_pseudowords(&table, 2 * a.pairs, a.seed, opts)?;
    set.save(&a.out)?;
    m.seeds.insert("seed".into(), a.seed);
    m.alpha = Some(a.alpha);
    m.settings.insert("pairs".into(), a.pairs.to_string());
    m.settings
        .insert("mode".into(), format!("{:?}", opts.mode).to_lowercase());
    m.settings.insert("d".into(), set.d.to_string());
    m.outputs.push(path_str(&a.out));
    write_manifest(&a.out, &m)
}

/// Connects a wire backend, or returns `None` for `mock-oracle`.
fn connect_remote(target: &str, args: &BackendArgs) -> Result<Option<Box<dyn Backend>>> {
    if target == "mock-oracle" {
        return Ok(None);
    }
    ensure!(args.in_flight >= 1, "--in-flight must be at least 1");
    let client = WireClient::connect(target, args.in_flight)?;
    Ok(Some(Box::new(client)))
}

fn load_oracle_spec(path: &Path) -> Result<OracleSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Probes and questions loaded from an input file, rendered for one casing.
struct Loaded {
    kind: InputKind,
    task: String,
    graph_hash: String,
    probes: Vec<Probe>,
    questions: Vec<ChoiceQuestion>,
    pairs: usize,
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    if s == "all" {
        return Ok(None);
    }
    Ok(Some(parse::<Split>(s)?))
}

fn load_probes(input: &Path, render: &RenderArgs, casing: Casing, variant: &str) -> Result<Loaded> {
    let (kind, header) = input_kind(input)?;
    let graph_hash = header_hash(&header).unwrap_or_default().to_string();
    let pseudo = match &render.pseudowords {
        Some(p) => Some(PseudowordSet::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let pairs = pseudo.as_ref().map_or(0, |s| s.pair_count());
    let mut loaded = Loaded {
        kind,
        task: String::new(),
        graph_hash,
        probes: Vec::new(),
        questions: Vec::new(),
        pairs: 0,
    };
    match kind {
        InputKind::Mem => {
            let (h, samples): (MemorizingHeader, Vec<MemorizingSample>) = read_jsonl(input)?;
            let split = parse_split(&render.split)?;
            let samples: Vec<MemorizingSample> = samples
                .into_iter()
                .filter(|s| split.is_none_or(|sp| s.split == sp))
                .collect();
            let templates = load_templates(render.templates.as_ref())?;
            loaded.task = h.subtask.to_string();
            loaded.probes = memorizing_probes(&samples, &templates, variant, casing)?;
        }
        InputKind::Reason => {
            let (_, instances): (ReasoningHeader, Vec<ReasoningInstance>) = read_jsonl(input)?;
            let r = ReasoningRender {
                conjunction: parse::<Conjunction>(&render.conjunction)?,
                order: parse_order(&render.premise_order)?,
                casing,
            };
            loaded.task = "reasoning".into();
            loaded.probes = reasoning_probes(&instances, &r, pseudo.as_ref())?;
            loaded.pairs = pairs;
        }
        InputKind::Premise => {
            let (_, premises): (PremiseHeader, Vec<PremiseProbe>) = read_jsonl(input)?;
            loaded.task = "premise".into();
            loaded.probes = premise_probe_list(&premises, casing, pseudo.as_ref());
            loaded.pairs = pairs;
        }
        InputKind::Mc => {
            let (h, questions): (ChoiceHeader, Vec<ChoiceQuestion>) = read_jsonl(input)?;
            loaded.task = h.subtask.to_string();
            loaded.questions = questions;
        }
        InputKind::Result => bail!("{} is a probe output, not a probe input", input.display()),
    }
    Ok(loaded)
}

fn parse_order(s: &str) -> Result<PremiseOrder> {
    match s {
        "p1-first" => Ok(PremiseOrder::P1First),
        "p2-first" => Ok(PremiseOrder::P2First),
        _ => bail!("premise order must be p1-first or p2-first, not `{s}`"),
    }
}

fn parse_casing(s: &str) -> Result<Casing> {
    match s {
        "cased" => Ok(Casing::Cased),
        "uncased" => Ok(Casing::Uncased),
        _ => bail!("casing must be cased or uncased, not `{s}`"),
    }
}

fn check_graph(render: &RenderArgs, input_hash: &str) -> Result<()> {
    if let Some(g) = &render.graph {
        let graph = load_graph(g).with_context(|| format!("loading {}", g.display()))?;
        let hash = graph.content_hash();
        ensure!(
            hash == input_hash,
            "manifest mismatch: input was generated from graph {input_hash}, {} hashes to {hash}",
            g.display()
        );
    }
    Ok(())
}

/// Gold-favoring mock over every given probe and question, unless a spec
/// file is given.
fn build_mock(
    args: &BackendArgs,
    probes: &[&Probe],
    questions: &[&ChoiceQuestion],
    dim: Option<usize>,
) -> Result<MockOracle> {
    let mut mock = match &args.oracle_spec {
        Some(p) => MockOracle::from_spec(&load_oracle_spec(p)?)?,
        None => {
            let mut m = MockOracle::gold_favoring(probes.iter().map(|p| (&p.prompt, p.golds.as_slice())));
            for q in questions {
                m.set_answer(&q.prompt, &format!("({})", q.answer_letter));
            }
            m
        }
    };
    if let Some(d) = dim {
        mock = mock.with_dimension(d);
    }
    Ok(mock)
}

fn pseudo_dimension(render: &RenderArgs) -> Result<Option<usize>> {
    match &render.pseudowords {
        Some(p) => Ok(Some(PseudowordSet::load(p)?.dimension)),
        None => Ok(None),
    }
}

/// Backend plus the input rendered with the resolved casing.
fn prepare(
    input: &Path,
    backend: &BackendArgs,
    render: &RenderArgs,
    variants: &[String],
) -> Result<(Box<dyn Backend>, Vec<Loaded>)> {
    let target = backend
        .backend
        .as_deref()
        .ok_or_else(|| anyhow!("--backend is required"))?;
    let remote = connect_remote(target, backend)?;
    let casing = match (&render.casing, &remote) {
        (Some(c), _) => parse_casing(c)?,
        (None, Some(b)) if !b.handshake().cased => Casing::Uncased,
        _ => Casing::Cased,
    };
    let loads = variants
        .iter()
        .map(|v| load_probes(input, render, casing, v))
        .collect::<Result<Vec<_>>>()?;
    check_graph(render, &loads[0].graph_hash)?;
    let backend: Box<dyn Backend> = match remote {
        Some(b) => b,
        None => {
            let probes: Vec<&Probe> = loads.iter().flat_map(|l| &l.probes).collect();
            let questions: Vec<&ChoiceQuestion> = loads.iter().flat_map(|l| &l.questions).collect();
            Box::new(build_mock(backend, &probes, &questions, pseudo_dimension(render)?)?)
        }
    };
    Ok((backend, loads))
}

fn probe(a: ProbeArgs) -> Result<()> {
    let config = ScoringConfig {
        mask_mode: parse::<MaskMode>(&a.scoring.mask_mode)?,
        pooling: parse::<Pooling>(&a.scoring.pooling)?,
    };
    let (backend, mut loads) = prepare(
        &a.input,
        &a.backend,
        &a.render,
        std::slice::from_ref(&a.render.template),
    )?;
    let loaded = loads.remove(0);
    let mut header = ResultHeader {
        kind: KIND_RESULT.into(),
        input_kind: loaded.kind,
        input: path_str(&a.input),
        task: loaded.task.clone(),
        graph_hash: loaded.graph_hash.clone(),
        config: None,
        template: None,
        handshake: backend.handshake().clone(),
        pairs: loaded.pairs,
    };
    let mut m = RunManifest::new("probe");
    m.graph_hash = Some(loaded.graph_hash.clone());
    m.handshake = Some(header.handshake.clone());
    m.inputs.push(path_str(&a.input));
    m.inputs.extend(a.render.pseudowords.iter().map(|p| path_str(p)));
    m.outputs.push(path_str(&a.out));

    let (failed, total) = if loaded.kind == InputKind::Mc {
        ensure!(
            backend.handshake().supports_complete,
            "backend does not support free-text completion"
        );
        let answers: Vec<ChoiceAnswer> = loaded
            .questions
            .iter()
            .map(|q| match backend.complete(&q.prompt) {
                Ok(ans) => ChoiceAnswer {
                    id: q.id.clone(),
                    answer: Some(ans),
                    error: None,
                },
                Err(e) => ChoiceAnswer {
                    id: q.id.clone(),
                    answer: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        write_jsonl(&a.out, &header, &answers)?;
        (answers.iter().filter(|x| x.error.is_some()).count(), answers.len())
    } else {
        header.config = Some(config);
        if loaded.kind == InputKind::Mem {
            header.template = Some(a.render.template.clone());
            m.template_variant = Some(a.render.template.clone());
        }
        m.scoring.push(config);
        let scorer = Scorer::new(&*backend);
        let opts = BatchOptions {
            in_flight: a.backend.in_flight.max(1),
            journal: a.journal.clone(),
            retries: a.retries,
        };
        let results = batch_probe(&scorer, &loaded.probes, config, &opts)?;
        write_jsonl(&a.out, &header, &results)?;
        (results.iter().filter(|r| !r.is_ok()).count(), results.len())
    };
    m.settings.insert(
        "casing".into(),
        a.render.casing.clone().unwrap_or_else(|| "backend".into()),
    );
    write_manifest(&a.out, &m)?;
    if failed > 0 {
        return Err(ProbeFailures { failed, total }.into());
    }
    Ok(())
}

fn ok_ranks(results: &[ProbeResult]) -> Result<()> {
    let failed: Vec<&str> = results.iter().filter(|r| !r.is_ok()).map(|r| r.id.as_str()).collect();
    ensure!(
        failed.is_empty(),
        "{} results carry errors, e.g. `{}`",
        failed.len(),
        failed[0]
    );
    Ok(())
}

/// Metrics per pseudoword pair, averaged over pairs.
fn pair_averaged(results: &[ProbeResult], ks: &[usize]) -> Result<MetricReport> {
    let mut per_pair: BTreeMap<Option<usize>, Vec<Vec<usize>>> = BTreeMap::new();
    for r in results {
        per_pair.entry(r.pair).or_default().push(r.gold_ranks.clone());
    }
    let reports = per_pair
        .values()
        .map(|ranks| compute_metrics(ranks, ks))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(average_reports(&reports)?)
}

fn config_label(h: &ResultHeader) -> String {
    let mut s = h.config.map(|c| c.to_string()).unwrap_or_default();
    if let Some(t) = &h.template {
        s = format!("{t}/{s}");
    }
    s
}

fn reasoning_rows(
    h: &ResultHeader,
    results: &[ProbeResult],
    instances: &[ReasoningInstance],
    premise_results: Option<&Path>,
    ks: &[usize],
) -> Result<Vec<ReportRow>> {
    let by_id: HashMap<&str, &ReasoningInstance> = instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let ranks = results
        .iter()
        .map(|r| {
            let instance = by_id
                .get(r.id.as_str())
                .ok_or_else(|| anyhow!("result `{}` has no matching instance", r.id))?;
            Ok(InstanceRanks {
                instance,
                pair: r.pair,
                ranks: r.gold_ranks.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let verdicts = match premise_results {
        Some(p) => {
            let (_, presults): (ResultHeader, Vec<ProbeResult>) = read_jsonl(p)?;
            ok_ranks(&presults)?;
            let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
            for r in &presults {
                let e = sums.entry(r.id.clone()).or_default();
                e.0 += r.reciprocal_rank();
                e.1 += 1;
            }
            let rr: HashMap<String, f64> = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
            Some(classify_reasoning_premises(instances, &rr)?)
        }
        None => None,
    };
    let cells = assemble_cells(&ranks, verdicts.as_ref(), ks)?;
    let config = config_label(h);
    let mut rows: Vec<ReportRow> = cells
        .iter()
        .map(|((rule, (m1, m2)), report)| ReportRow {
            task: format!("{rule}:{m1}-{m2}"),
            config: config.clone(),
            report: report.clone(),
        })
        .collect();
    for ((m1, m2), report) in macro_average_cells(&cells)? {
        rows.push(ReportRow {
            task: format!("macro:{m1}-{m2}"),
            config: config.clone(),
            report,
        });
    }
    Ok(rows)
}

fn eval(a: EvalArgs) -> Result<()> {
    let ks = parse_ks(&a.ks)?;
    let mut m = RunManifest::new("eval");
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut choice_tsv: Option<String> = None;

    if let Some(base) = &a.baseline {
        let seed = a.seed.ok_or_else(|| anyhow!("--baseline needs --seed"))?;
        let (h, samples): (MemorizingHeader, Vec<MemorizingSample>) = read_jsonl(base)?;
        let train: Vec<MemorizingSample> = samples.iter().filter(|s| s.split == Split::Train).cloned().collect();
        let test: Vec<MemorizingSample> = samples.iter().filter(|s| s.split == Split::Test).cloned().collect();
        let ranked = frequency_baseline(&train, &test, seed)?;
        let ranks: Vec<Vec<usize>> = ranked
            .iter()
            .zip(&test)
            .map(|((_, list), s)| gold_ranks(list, &s.golds))
            .collect();
        rows.push(ReportRow {
            task: h.subtask.to_string(),
            config: "frequency".into(),
            report: compute_metrics(&ranks, &ks)?,
        });
        m.seeds.insert("seed".into(), seed);
        m.graph_hash = Some(h.graph_hash);
        m.inputs.push(path_str(base));
    }

    if let Some(res) = &a.results {
        let (h, _): (ResultHeader, Vec<serde_json::Value>) = read_jsonl(res)?;
        m.graph_hash = Some(h.graph_hash.clone());
        m.handshake = Some(h.handshake.clone());
        m.scoring.extend(h.config);
        m.inputs.push(path_str(res));
        let source = a.instances.clone().unwrap_or_else(|| PathBuf::from(&h.input));
        match h.input_kind {
            InputKind::Mem | InputKind::Premise => {
                let (_, results): (ResultHeader, Vec<ProbeResult>) = read_jsonl(res)?;
                ok_ranks(&results)?;
                rows.push(ReportRow {
                    task: h.task.clone(),
                    config: config_label(&h),
                    report: pair_averaged(&results, &ks)?,
                });
            }
            InputKind::Reason => {
                let (_, results): (ResultHeader, Vec<ProbeResult>) = read_jsonl(res)?;
                ok_ranks(&results)?;
                let (ih, instances): (ReasoningHeader, Vec<ReasoningInstance>) =
                    read_jsonl(&source).with_context(|| format!("reading instances {}", source.display()))?;
                ensure!(
                    ih.graph_hash == h.graph_hash,
                    "manifest mismatch: {} and {} come from different graphs",
                    source.display(),
                    res.display()
                );
                m.inputs.push(path_str(&source));
                m.inputs.extend(a.premise_results.iter().map(|p| path_str(p)));
                m.grid = Some(ih.grid.clone());
                rows.extend(reasoning_rows(
                    &h,
                    &results,
                    &instances,
                    a.premise_results.as_deref(),
                    &ks,
                )?);
            }
            InputKind::Mc => {
                let (_, answers): (ResultHeader, Vec<ChoiceAnswer>) = read_jsonl(res)?;
                let (_, questions): (ChoiceHeader, Vec<ChoiceQuestion>) =
                    read_jsonl(&source).with_context(|| format!("reading questions {}", source.display()))?;
                m.inputs.push(path_str(&source));
                let map: HashMap<String, String> = answers
                    .into_iter()
                    .filter_map(|x| x.answer.map(|ans| (x.id, ans)))
                    .collect();
                let r = choice_accuracy(&questions, &map)?;
                choice_tsv = Some(format!(
                    "task\tn\tcorrect\tunparseable\taccuracy\n{}\t{}\t{}\t{}\t{:.4}\n",
                    h.task, r.n, r.correct, r.unparseable, r.accuracy
                ));
            }
            InputKind::Result => bail!("{}: unexpected input kind", res.display()),
        }
    }

    let tsv = match choice_tsv {
        Some(t) if rows.is_empty() => t,
        Some(_) => bail!("choice accuracy cannot share a table with ranking metrics"),
        None => {
            ensure!(!rows.is_empty(), "nothing to evaluate; give --results or --baseline");
            report_tsv(&rows)
        }
    };
    std::fs::write(&a.out, tsv)?;
    m.outputs.push(path_str(&a.out));
    if let Some(j) = &a.json {
        std::fs::write(j, serde_json::to_string_pretty(&rows)? + "\n")?;
        m.outputs.push(path_str(j));
    }
    write_manifest(&a.out, &m)
}

/// A metric table as read back from TSV.
struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let columns: Vec<String> = lines
        .next()
        .ok_or_else(|| anyhow!("{} is empty", path.display()))?
        .split('\t')
        .map(String::from)
        .collect();
    ensure!(
        columns.len() >= 3 && columns[0] == "task" && columns[1] == "config",
        "{}: not a metric table",
        path.display()
    );
    let rows = lines
        .enumerate()
        .map(|(i, l)| {
            let r: Vec<String> = l.split('\t').map(String::from).collect();
            ensure!(
                r.len() == columns.len(),
                "{}: row {} has {} fields",
                path.display(),
                i + 2,
                r.len()
            );
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table { columns, rows })
}

fn column(t: &Table, name: &str) -> Result<usize> {
    t.columns
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| anyhow!("table has no `{name}` column"))
}

fn report(a: ReportArgs) -> Result<()> {
    let mut merged: Option<Table> = None;
    let mut m = RunManifest::new("report");
    for p in &a.inputs {
        let t = read_table(p)?;
        m.inputs.push(path_str(p));
        match &mut merged {
            None => merged = Some(t),
            Some(acc) => {
                ensure!(
                    acc.columns == t.columns,
                    "{}: columns differ from the first table",
                    p.display()
                );
                acc.rows.extend(t.rows);
            }
        }
    }
    let mut t = merged.expect("at least one input");
    let mrr = column(&t, "MRR")?;
    let n_col = column(&t, "n")?;
    if a.macro_average {
        let mut by_config: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
        for r in &t.rows {
            if !r[0].starts_with("macro") {
                by_config.entry(r[1].clone()).or_default().push(r.clone());
            }
        }
        for (config, group) in by_config {
            let mut row = vec!["macro".to_string(), config];
            for c in 2..t.columns.len() {
                let vals: Vec<f64> = group.iter().filter_map(|r| r[c].parse::<f64>().ok()).collect();
                row.push(if c == n_col {
                    (vals.iter().sum::<f64>() as usize).to_string()
                } else if vals.is_empty() {
                    String::new()
                } else {
                    format!("{:.4}", vals.iter().sum::<f64>() / vals.len() as f64)
                });
            }
            t.rows.push(row);
        }
    }
    if a.best {
        let mut best: Vec<Vec<String>> = Vec::new();
        for r in &t.rows {
            let score = r[mrr].parse::<f64>().unwrap_or(f64::NEG_INFINITY);
            match best.iter_mut().find(|b| b[0] == r[0]) {
                Some(b) if score > b[mrr].parse::<f64>().unwrap_or(f64::NEG_INFINITY) => *b = r.clone(),
                Some(_) => {}
                None => best.push(r.clone()),
            }
        }
        t.rows = best;
    }
    let mut out = t.columns.join("\t") + "\n";
    for r in &t.rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    std::fs::write(&a.out, out)?;
    m.outputs.push(path_str(&a.out));
    m.settings.insert("best".into(), a.best.to_string());
    m.settings.insert("macro_average".into(), a.macro_average.to_string());
    write_manifest(&a.out, &m)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let ks = parse_ks(&a.ks)?;
    let (kind, _) = input_kind(&a.input)?;
    ensure!(
        matches!(kind, InputKind::Mem | InputKind::Reason | InputKind::Premise),
        "sweep needs a memorizing, reasoning or premise input"
    );
    // Template variants only apply to memorizing inputs.
    let variants: Vec<String> = if kind == InputKind::Mem {
        a.templates_variants
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    } else {
        vec![a.render.template.clone()]
    };
    ensure!(!variants.is_empty(), "no template variants given");
    let modes = parse_list::<MaskMode>(&a.mask_modes)?;
    let poolings = parse_list::<Pooling>(&a.poolings)?;
    let (backend, loads) = prepare(&a.input, &a.backend, &a.render, &variants)?;
    std::fs::create_dir_all(&a.out_dir)?;

    let scorer = Scorer::new(&*backend);
    let opts = BatchOptions {
        in_flight: a.backend.in_flight.max(1),
        journal: None,
        retries: 2,
    };
    let mut m = RunManifest::new("sweep");
    m.graph_hash = Some(loads[0].graph_hash.clone());
    m.handshake = Some(backend.handshake().clone());
    m.inputs.push(path_str(&a.input));
    m.settings.insert("variants".into(), variants.join(","));
    let mut rows = Vec::new();
    for (variant, loaded) in variants.iter().zip(&loads) {
        for &mask_mode in &modes {
            for &pooling in &poolings {
                let config = ScoringConfig { mask_mode, pooling };
                if !m.scoring.contains(&config) {
                    m.scoring.push(config);
                }
                let results = batch_probe(&scorer, &loaded.probes, config, &opts)?;
                let failed = results.iter().filter(|r| !r.is_ok()).count();
                if failed > 0 {
                    return Err(ProbeFailures {
                        failed,
                        total: results.len(),
                    }
                    .into());
                }
                let label = if kind == InputKind::Mem {
                    format!("{variant}/{config}")
                } else {
                    config.to_string()
                };
                rows.push(ReportRow {
                    task: loaded.task.clone(),
                    config: label,
                    report: pair_averaged(&results, &ks)?,
                });
            }
        }
    }
    let mut winners: Vec<ReportRow> = Vec::new();
    for r in &rows {
        match winners.iter_mut().find(|w| w.task == r.task) {
            Some(w) if r.report.mrr > w.report.mrr => *w = r.clone(),
            Some(_) => {}
            None => winners.push(r.clone()),
        }
    }
    let sweep_path = a.out_dir.join("sweep.tsv");
    let winners_path = a.out_dir.join("winners.tsv");
    std::fs::write(&sweep_path, report_tsv(&rows))?;
    std::fs::write(&winners_path, report_tsv(&winners))?;
    m.outputs.push(path_str(&sweep_path));
    m.outputs.push(path_str(&winners_path));
    write_manifest(&a.out_dir, &m)
}

fn serve_mock(a: ServeMockArgs) -> Result<()> {
    let args = BackendArgs {
        backend: Some("mock-oracle".into()),
        in_flight: 1,
        oracle_spec: a.oracle_spec.clone(),
    };
    let casing = match &a.render.casing {
        Some(c) => parse_casing(c)?,
        None => Casing::Cased,
    };
    let loaded = match &a.favor_golds {
        Some(p) => Some(load_probes(p, &a.render, casing, &a.render.template)?),
        None => None,
    };
    let probes: Vec<&Probe> = loaded.iter().flat_map(|l| &l.probes).collect();
    let questions: Vec<&ChoiceQuestion> = loaded.iter().flat_map(|l| &l.questions).collect();
    let mut mock = build_mock(&args, &probes, &questions, pseudo_dimension(&a.render)?)?;
    if let Some(p) = &a.embeddings {
        let table = EmbeddingTable::load(p).with_context(|| format!("loading {}", p.display()))?;
        mock = mock.with_dimension(table.dimension).with_embeddings(table);
    }
    let opts = ServeOptions::default();
    match &a.listen {
        None => {
            let stdin = std::io::stdin();
            serve_connection(&mock, stdin.lock(), std::io::stdout(), opts)?;
        }
        Some(addr) => {
            let listener = std::net::TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            println!("listening {}", listener.local_addr()?);
            std::io::stdout().flush()?;
            std::thread::scope(|scope| -> Result<()> {
                for stream in listener.incoming() {
                    let stream = stream?;
                    let reader = BufReader::new(stream.try_clone()?);
                    let mock = &mock;
                    let handle = scope.spawn(move || {
                        if let Err(e) = serve_connection(mock, reader, stream, opts) {
                            log::warn!("session ended: {e}");
                        }
                    });
                    if a.once {
                        let _ = handle.join();
                        break;
                    }
                }
                Ok(())
            })?;
        }
    }
    Ok(())
}
