use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn histoner(args: &[&str]) -> Output {
    histoner_env(args, &[])
}

fn histoner_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_histoner"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn histoner")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stdout: {}\nstderr: {}", stdout(&o), stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn scoring_a_file_against_itself_is_perfect() {
    let gold = fixture("test.tsv");
    let out = ok(histoner(&["score", "--gold", s(&gold), "--pred", s(&gold)]));
    let text = stdout(&out);
    assert!(text.contains("strict,ALL,100.0,100.0,100.0"), "{text}");
    assert!(text.contains("fuzzy,ALL,100.0,100.0,100.0"), "{text}");
}

#[test]
fn missing_input_is_a_data_error_naming_the_path() {
    let gold = fixture("test.tsv");
    let out = histoner(&["score", "--gold", s(&gold), "--pred", "/nonexistent/pred.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/pred.tsv"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    let out = histoner(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));

    let out = histoner(&["corpus", "filter", "-i", "x.jsonl", "-o", "y.jsonl", "--threshold", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_global_flags_and_subcommands() {
    let text = stdout(&ok(histoner(&["--help"])));
    for flag in ["--seed", "--jobs", "--output-dir", "--quiet"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    for cmd in ["corpus", "vocab", "mlm", "parse", "score", "attr-eval", "tagger", "harness"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn filtering_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus.jsonl");
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(histoner(&["-q", "corpus", "filter", "-i", s(&corpus), "--threshold", "0.8", "-o", s(&out)]));
        std::fs::read(out).unwrap()
    };
    let a = run("a.jsonl");
    let b = run("b.jsonl");
    assert_eq!(a, b);
    assert!(!a.is_empty());
    let kept = a.iter().filter(|&&c| c == b'\n').count();
    assert_eq!(kept, 20);
}

#[test]
fn fixture_pipeline_runs_end_to_end() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = d.to_str().unwrap();

    let report = stdout(&ok(histoner(&[
        "-q", "--output-dir", out, "corpus", "filter",
        "-i", s(&fixture("corpus.jsonl")), "--threshold", "0.8",
        "-o", "filtered.jsonl", "--report", "filter.json",
    ])));
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["kept_docs"], 20);
    assert_eq!(report["dropped_docs"], 10);

    ok(histoner(&[
        "-q", "--output-dir", out, "vocab", "train",
        "-i", s(&d.join("filtered.jsonl")), "--size", "300", "--min-frequency", "1", "-o", "vocab.txt",
    ]));
    let stats = stdout(&ok(histoner(&["-q", "vocab", "stats", "--vocab", s(&d.join("vocab.txt")), "-d", s(&fixture("test.tsv"))])));
    assert!(stats.starts_with("language,sfr"), "{stats}");

    for split in ["train", "dev", "test"] {
        let parsed = stdout(&ok(histoner(&[
            "-q", "--output-dir", out, "parse",
            "-i", s(&fixture(&format!("{split}.tsv"))), "-o", &format!("{split}.jsonl"),
        ])));
        let v: serde_json::Value = serde_json::from_str(&parsed).unwrap();
        assert!(v["total"]["entities"].as_u64().unwrap() > 0);
        assert_eq!(v["total"]["repairs"], 0);
    }

    let trained = stdout(&ok(histoner(&[
        "-q", "--output-dir", out, "--seed", "3", "tagger", "train",
        "--train", s(&d.join("train.jsonl")), "--dev", s(&d.join("dev.jsonl")),
        "--vocab", s(&d.join("vocab.txt")), "--epochs", "4", "--hash-bits", "14", "-o", "model.json",
    ])));
    let trained: serde_json::Value = serde_json::from_str(&trained).unwrap();
    assert_eq!(trained["config"]["seed"], 3);
    assert_eq!(trained["history"].as_array().unwrap().len(), 4);

    ok(histoner(&[
        "-q", "--output-dir", out, "tagger", "predict",
        "-m", s(&d.join("model.json")), "-i", s(&fixture("test.tsv")), "-o", "pred.tsv",
    ]));
    let scored = stdout(&ok(histoner(&[
        "-q", "--output-dir", out, "score",
        "--gold", s(&fixture("test.tsv")), "--pred", s(&d.join("pred.tsv")), "--json", "score.json",
    ])));
    let strict: f64 = scored
        .lines()
        .find(|l| l.starts_with("strict,ALL,"))
        .and_then(|l| l.split(',').nth(4))
        .unwrap()
        .parse()
        .unwrap();
    assert!(strict > 80.0, "strict F1 {strict}");

    let attrs = stdout(&ok(histoner(&[
        "-q", "--output-dir", out, "attr-eval",
        "--train", s(&fixture("train.tsv")), "--gold", s(&fixture("test.tsv")), "--pred", s(&d.join("pred.tsv")),
        "--buckets", "4", "--summary", "attr.json",
    ])));
    assert!(attrs.starts_with("attribute,bucket,lo,hi,count,f1"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("attr.json")).unwrap()).unwrap();
    assert_eq!(summary.as_object().unwrap().len(), 8);

    assert!(start.elapsed() < Duration::from_secs(60), "{:?}", start.elapsed());
}

fn experiment(dir: &Path, vocab: &Path) -> PathBuf {
    let cfg = format!(
        r#"vocab = "{vocab}"

[datasets.de]
train = "{train}"
dev = "{dev}"

[train]
hash_bits = 12

[grid]
batch_sizes = [4, 8]
epochs = [2]
learning_rates = [5e-5]
seeds = [1, 2]
"#,
        vocab = vocab.display(),
        train = fixture("train.tsv").display(),
        dev = fixture("dev.tsv").display(),
    );
    let path = dir.join("experiment.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn small_vocab(dir: &Path) -> PathBuf {
    let vocab = dir.join("vocab.txt");
    ok(histoner(&["-q", "vocab", "train", "-i", s(&fixture("corpus.jsonl")), "--size", "200", "--min-frequency", "1", "-o", s(&vocab)]));
    vocab
}

#[test]
fn harness_grid_resumes_without_retraining() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment(dir.path(), &small_vocab(dir.path()));
    let runs = dir.path().join("runs");
    let args = ["-q", "--jobs", "2", "--output-dir", s(&runs), "harness", "grid", "-c", s(&cfg)];
    let first = stdout(&ok(histoner(&args)));
    assert_eq!(first.lines().count(), 4);
    let ledger = std::fs::read_to_string(runs.join("ledger.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), 4);

    let mut resumed = args.to_vec();
    resumed.push("--resume");
    let second = stdout(&ok(histoner(&resumed)));
    assert_eq!(first, second);
    let ledger = std::fs::read_to_string(runs.join("ledger.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), 4);
}

#[test]
fn environment_overrides_config_scalars() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment(dir.path(), &small_vocab(dir.path()));
    let model = dir.path().join("m.json");
    ok(histoner_env(
        &["-q", "tagger", "train", "-c", s(&cfg), "--epochs", "1", "-o", s(&model)],
        &[("HISTONER_TRAIN__HASH_BITS", "9")],
    ));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(m["hash_bits"], 9);
}

#[test]
fn config_naming_a_missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "vocab = \"v.txt\"\n[datasets.fr]\ntrain = \"fr-train.tsv\"\ndev = \"fr-dev.tsv\"\n").unwrap();
    let out = histoner(&["harness", "grid", "-c", s(&cfg), "--output-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("v.txt"), "{}", stderr(&out));
}

#[test]
fn mlm_shards_are_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = small_vocab(dir.path());
    let build = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(histoner(&[
            "-q", "--seed", seed, "mlm", "build", "-i", s(&fixture("corpus.jsonl")), "--vocab", s(&vocab),
            "--seq-len", "64", "--max-preds", "10", "--dupe", "2", "--lang", "de", "-o", s(&out),
        ]));
        std::fs::read(out.join("pretrain-de-00000.jsonl")).unwrap()
    };
    let a = build("a", "5");
    assert_eq!(a, build("b", "5"));
    assert_ne!(a, build("c", "6"));

    let budget = stdout(&ok(histoner(&["mlm", "budget", "--steps", "10", "--batch-size", "4", "--seq-len", "128", "--corpus-subtokens", "2560"])));
    let v: serde_json::Value = serde_json::from_str(&budget).unwrap();
    assert_eq!(v["subtokens_seen"], 5120);
    assert_eq!(v["epochs"], 2.0);
}

#[test]
fn long_s_normalization_rewrites_documents() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plain.jsonl");
    ok(histoner(&["corpus", "normalize-long-s", "-i", s(&fixture("corpus.jsonl")), "-o", s(&out)]));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(!text.contains('ſ'));
    assert_eq!(text.lines().count(), 30);
}
