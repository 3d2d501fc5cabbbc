//! The `ontoprobe` binary driven end to end on the toy ontology.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ontoprobe");

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/toy.tsv")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn graph(dir: &Path) {
    ok(
        dir,
        &["build-graph", "--input", toy().to_str().unwrap(), "--out", "g.tsv"],
    );
}

/// Parses an eval TSV into (task, MRR, MRR_a, R@1) rows.
fn metrics(path: &Path) -> Vec<(String, f64, f64, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let cols: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let at = |name: &str| cols.iter().position(|c| *c == name).unwrap();
    let (mrr, mrr_a, r1) = (at("MRR"), at("MRR_a"), at("R@1"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (
                f[0].to_string(),
                f[mrr].parse().unwrap(),
                f[mrr_a].parse().unwrap(),
                f[r1].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn oracle_pipeline_is_perfect_on_every_memorizing_subtask() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    graph(d);
    ok(d, &["gen-mem", "--graph", "g.tsv", "--seed", "7", "--out", "mem"]);
    for task in ["TP", "SCO", "SPO", "DM", "RG"] {
        let input = format!("mem/{task}.jsonl");
        let res = format!("r_{task}.jsonl");
        let tsv = format!("e_{task}.tsv");
        ok(
            d,
            &[
                "probe",
                "--input",
                &input,
                "--backend",
                "mock-oracle",
                "--split",
                "all",
                "--out",
                &res,
            ],
        );
        ok(d, &["eval", "--results", &res, "--out", &tsv]);
        let rows = metrics(&d.join(&tsv));
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, task);
        assert_eq!((rows[0].1, rows[0].2, rows[0].3), (1.0, 1.0, 1.0), "{task}");
    }
}

#[test]
fn wire_backend_matches_in_process_mock() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    graph(d);
    ok(d, &["gen-mem", "--graph", "g.tsv", "--seed", "3", "--out", "mem"]);
    let target = format!("cmd:{BIN} serve-mock --favor-golds mem/TP.jsonl --split all");
    ok(
        d,
        &[
            "probe",
            "--input",
            "mem/TP.jsonl",
            "--backend",
            &target,
            "--split",
            "all",
            "--out",
            "wire.jsonl",
        ],
    );
    ok(d, &["eval", "--results", "wire.jsonl", "--out", "wire.tsv"]);
    assert_eq!(metrics(&d.join("wire.tsv"))[0].1, 1.0);
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && !p.to_string_lossy().ends_with("manifest.json"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn generators_write_identical_bytes_for_identical_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    graph(d);
    for run in ["a", "b"] {
        let rd = d.join(run);
        std::fs::create_dir(&rd).unwrap();
        std::fs::copy(d.join("g.tsv"), rd.join("g.tsv")).unwrap();
        ok(
            &rd,
            &[
                "gen-mem",
                "--graph",
                "g.tsv",
                "--seed",
                "11",
                "--mc-choices",
                "3",
                "--out",
                "mem",
            ],
        );
        ok(
            &rd,
            &[
                "gen-reason",
                "--graph",
                "g.tsv",
                "--seed",
                "11",
                "--candidates",
                "sampled:2",
                "--out",
                "reason.jsonl",
                "--premises-out",
                "prem.jsonl",
            ],
        );
    }
    let a = read_all(&d.join("a/mem"));
    assert_eq!(a.len(), 10);
    assert_eq!(a, read_all(&d.join("b/mem")));
    let top = read_all(&d.join("a"));
    assert_eq!(top.len(), 3);
    assert_eq!(top, read_all(&d.join("b")));
    ok(d, &["gen-mem", "--graph", "g.tsv", "--seed", "12", "--out", "mem_c"]);
    assert_ne!(
        std::fs::read(d.join("a/mem/TP.jsonl")).unwrap(),
        std::fs::read(d.join("mem_c/TP.jsonl")).unwrap()
    );
}

#[test]
fn reasoning_grid_has_nine_cells_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    graph(d);
    ok(
        d,
        &[
            "gen-reason",
            "--graph",
            "g.tsv",
            "--seed",
            "1",
            "--grid",
            "all",
            "--out",
            "r.jsonl",
        ],
    );
    let text = std::fs::read_to_string(d.join("r.jsonl")).unwrap();
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert!(header["header"]["grid"].is_array());
    let mut per_pair = std::collections::BTreeMap::<String, usize>::new();
    for l in lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        *per_pair.entry(v["pair_id"].as_str().unwrap().to_string()).or_default() += 1;
    }
    assert!(!per_pair.is_empty());
    assert!(per_pair.values().all(|n| *n == 9), "{per_pair:?}");
}

#[test]
fn exit_codes_separate_validation_from_backend_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    graph(d);
    ok(d, &["gen-mem", "--graph", "g.tsv", "--seed", "1", "--out", "mem"]);

    assert_eq!(run(d, &["probe", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        run(d, &["eval", "--baseline", "mem/TP.jsonl", "--out", "b.tsv"])
            .status
            .code(),
        Some(2)
    );

    std::fs::write(d.join("other.tsv"), "lonely\ttype\tClass\n").unwrap();
    ok(d, &["build-graph", "--input", "other.tsv", "--out", "other_g.tsv"]);
    let mismatch = run(
        d,
        &[
            "probe",
            "--input",
            "mem/TP.jsonl",
            "--backend",
            "mock-oracle",
            "--graph",
            "other_g.tsv",
            "--out",
            "x.jsonl",
        ],
    );
    assert_eq!(
        mismatch.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&mismatch.stderr)
    );

    let dead = run(
        d,
        &[
            "probe",
            "--input",
            "mem/TP.jsonl",
            "--backend",
            "cmd:false",
            "--out",
            "y.jsonl",
        ],
    );
    assert_eq!(dead.status.code(), Some(3), "{}", String::from_utf8_lossy(&dead.stderr));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    graph(d);
    std::fs::write(d.join("run.conf"), "# defaults\nseed = 5\nout = from_config\n").unwrap();
    ok(d, &["gen-mem", "--config", "run.conf", "--graph", "g.tsv"]);
    assert!(d.join("from_config/TP.jsonl").exists());
    ok(
        d,
        &[
            "gen-mem",
            "--config",
            "run.conf",
            "--graph",
            "g.tsv",
            "--out",
            "from_flag",
            "--seed",
            "6",
        ],
    );
    let tp = std::fs::read_to_string(d.join("from_flag/TP.jsonl")).unwrap();
    assert!(tp.contains(r#""seed":6"#));

    std::fs::write(d.join("bad.conf"), "no equals sign\n").unwrap();
    assert_eq!(
        run(d, &["gen-mem", "--config", "bad.conf", "--graph", "g.tsv"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn ingest_builds_a_probeable_graph() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("classes.tsv"),
        "agent\ttype\tClass\nagent\tlabel\tagent\nperson\tsubclass_of\tagent\nperson\tlabel\tperson\n\
         place\ttype\tClass\nplace\tlabel\tplace\n",
    )
    .unwrap();
    std::fs::write(
        d.join("props.tsv"),
        "wd:P19\ttype\tProperty\nwd:P19\tlabel\tplace of birth\nwd:P19\tdomain\tagent\nwd:P19\tdomain\tperson\n\
         wd:P19\trange\tplace\nwd:P19\tpattern\t[X] was born in [Y] .\n\
         wd:P99\ttype\tProperty\nwd:P99\tlabel\tfavourite planet\nwd:P99\trange\tMars\n",
    )
    .unwrap();
    std::fs::write(
        d.join("inst.tsv"),
        "q1\ttype\tperson\nq1\tlabel\tAda\nq2\ttype\tplace\nq2\tlabel\tLondon\nq1\twd:P19\tq2\nq1\twd:P404\tq2\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "ingest",
            "--classes",
            "classes.tsv",
            "--instances",
            "inst.tsv",
            "--properties",
            "props.tsv",
            "--seed",
            "1",
            "--out",
            "g.tsv",
            "--report",
            "report.tsv",
        ],
    );
    let g = std::fs::read_to_string(d.join("g.tsv")).unwrap();
    assert!(g.contains("\tdomain\tperson"), "{g}");
    assert!(g.contains("Ada"));
    let report = std::fs::read_to_string(d.join("report.tsv")).unwrap();
    assert!(report.contains("no-domain"), "{report}");

    ok(
        d,
        &[
            "ingest",
            "--classes",
            "classes.tsv",
            "--instances",
            "inst.tsv",
            "--properties",
            "props.tsv",
            "--seed",
            "1",
            "--strict",
            "--out",
            "strict.tsv",
        ],
    );
    let strict = std::fs::read_to_string(d.join("strict.tsv")).unwrap();
    assert!(!strict.contains("favourite planet"), "{strict}");
    ok(d, &["gen-mem", "--graph", "g.tsv", "--seed", "1", "--out", "mem"]);
}
