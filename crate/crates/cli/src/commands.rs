use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use histoner_core::attr::{self, AttributeKind, AttributeOptions, CorrelationLevel};
use histoner_core::corpus::{self, Document, FilterUnit, IngestOptions, InputFormat};
use histoner_core::harness::{Harness, LanguageData, RunRecord};
use histoner_core::io::{write_jsonl, write_string_atomic};
use histoner_core::mlm::{self, MlmConfig, TokenizedDocument};
use histoner_core::ner::{self, AnnotatedSentence, HipeOptions};
use histoner_core::scorer::{self, Regime};
use histoner_core::tagger::{self, TaggerModel};
use histoner_core::wordpiece::{self, TokenizeOptions, TrainerConfig, WordpieceVocab};

use crate::args::*;
use crate::config::ExperimentConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Corpus(c) => corpus_cmd(g, c),
        Command::Vocab(c) => vocab_cmd(g, c),
        Command::Mlm(c) => mlm_cmd(g, c),
        Command::Parse(a) => parse_cmd(g, a),
        Command::Score(a) => score_cmd(g, a),
        Command::AttrEval(a) => attr_eval_cmd(g, a),
        Command::Tagger(c) => tagger_cmd(g, c),
        Command::Harness(c) => harness_cmd(g, c),
    }
}

/// Relative output paths land under `--output-dir` when one is given.
fn out_path(g: &Global, p: &Path) -> PathBuf {
    match &g.output_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_owned(),
    }
}

fn require(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(p.to_owned()))
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(histoner_core::Error::from)?;
    println!("{s}");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(histoner_core::Error::from)?;
    write_string_atomic(path, &(s + "\n"))?;
    Ok(())
}

fn load_documents(input: &DocInput) -> Result<Vec<Document>> {
    require(&input.input)?;
    let format = match input.format {
        Some(DocFormat::Jsonl) => InputFormat::Jsonl,
        Some(DocFormat::Plaintext) => InputFormat::PlaintextDir,
        None if input.input.is_dir() => InputFormat::PlaintextDir,
        None => InputFormat::Jsonl,
    };
    let languages = (!input.languages.is_empty()).then(|| input.languages.iter().cloned().collect::<BTreeSet<_>>());
    let opts = IngestOptions {
        languages,
        plaintext_language: Some(input.plaintext_language.clone()),
    };
    let ingested = corpus::ingest(&input.input, format, &opts)?;
    for e in &ingested.errors {
        log::warn!("skipped record {e}");
    }
    log::info!(
        "read {} documents from {} ({} rejected)",
        ingested.documents.len(),
        input.input.display(),
        ingested.errors.len()
    );
    Ok(ingested.documents)
}

fn jsonl_documents(path: &Path) -> Result<Vec<Document>> {
    load_documents(&DocInput {
        input: path.to_owned(),
        format: Some(DocFormat::Jsonl),
        languages: Vec::new(),
        plaintext_language: "und".into(),
    })
}

fn corpus_cmd(g: &Global, cmd: &CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Filter {
            input,
            threshold,
            unit,
            output,
            report,
        } => {
            let docs = load_documents(input)?;
            let unit = match unit {
                Unit::Document => FilterUnit::Document,
                Unit::Word => FilterUnit::Word,
            };
            let (kept, rep) = corpus::filter_by_confidence(docs, *threshold, unit)?;
            write_jsonl(&out_path(g, output), &kept)?;
            if let Some(r) = report {
                write_json(&out_path(g, r), &rep)?;
            }
            print_json(&rep)
        }
        CorpusCmd::Stats { input, output } => {
            let docs = load_documents(input)?;
            let stats = corpus::chars_per_year(&docs);
            let csv = stats.to_csv();
            match output {
                Some(o) => write_string_atomic(&out_path(g, o), &csv)?,
                None => print!("{csv}"),
            }
            log::info!(
                "{} documents, {} characters, {:.3} GB",
                stats.doc_count,
                stats.total_chars,
                stats.total_bytes as f64 / corpus::BYTES_PER_GB as f64
            );
            Ok(())
        }
        CorpusCmd::Upsample {
            input,
            target_bytes,
            output,
        } => {
            let docs = load_documents(input)?;
            let bytes: u64 = docs.iter().map(Document::byte_len).sum();
            let factor = corpus::upsample_factor(bytes, *target_bytes)?;
            let up = corpus::upsample(&docs, factor);
            write_jsonl(&out_path(g, output), &up)?;
            print_json(&serde_json::json!({
                "input_bytes": bytes,
                "factor": factor,
                "output_bytes": bytes * factor,
            }))
        }
        CorpusCmd::NormalizeLongS { input, output } => {
            require(input)?;
            let out = out_path(g, output);
            if input.extension().is_some_and(|e| e == "jsonl") {
                let mut docs = jsonl_documents(input)?;
                for d in &mut docs {
                    d.text = corpus::normalize_long_s(&d.text);
                }
                write_jsonl(&out, &docs)?;
            } else {
                let text = histoner_core::io::read_to_string(input)?;
                write_string_atomic(&out, &corpus::normalize_long_s(&text))?;
            }
            Ok(())
        }
        CorpusCmd::Balance {
            input,
            max_deviation,
            output,
        } => {
            let mut bytes: BTreeMap<String, u64> = BTreeMap::new();
            for p in input {
                for d in jsonl_documents(p)? {
                    *bytes.entry(d.language.clone()).or_insert(0) += d.byte_len();
                }
            }
            let report = corpus::balance_report(&bytes, *max_deviation)?;
            for r in report.rows.iter().filter(|r| r.flagged) {
                log::warn!("{} deviates from the mean corpus size: {} bytes vs {:.0}", r.language, r.bytes, report.mean_bytes);
            }
            let csv = report.to_csv();
            match output {
                Some(o) => write_string_atomic(&out_path(g, o), &csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}

/// Raw text of a vocabulary source: JSON Lines documents, a directory of
/// text files, or a single text file.
fn source_texts(path: &Path) -> Result<Vec<String>> {
    require(path)?;
    if path.is_dir() {
        let input = DocInput {
            input: path.to_owned(),
            format: Some(DocFormat::Plaintext),
            languages: Vec::new(),
            plaintext_language: "und".into(),
        };
        return Ok(load_documents(&input)?.into_iter().map(|d| d.text).collect());
    }
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok(jsonl_documents(path)?.into_iter().map(|d| d.text).collect());
    }
    Ok(vec![histoner_core::io::read_to_string(path)?])
}

fn hipe_options(d: &DatasetOpts) -> HipeOptions {
    HipeOptions {
        column: d.column.clone(),
        normalize_long_s: d.normalize_long_s,
        default_language: d.default_language.clone(),
    }
}

fn load_sentences(paths: &[PathBuf], d: &DatasetOpts) -> Result<Vec<AnnotatedSentence>> {
    let opts = hipe_options(d);
    let mut sets = Vec::with_capacity(paths.len());
    for p in paths {
        require(p)?;
        let s = ner::load_dataset(p, &opts)?;
        log::info!("{}: {} sentences", p.display(), s.len());
        sets.push(s);
    }
    if sets.len() == 1 {
        return Ok(sets.pop().unwrap_or_default());
    }
    let merged = ner::merge_multilingual(&sets)?;
    Ok(merged.sentences)
}

fn load_vocab(path: &Path) -> Result<WordpieceVocab> {
    require(path)?;
    Ok(WordpieceVocab::load(path)?)
}

fn vocab_cmd(g: &Global, cmd: &VocabCmd) -> Result<()> {
    match cmd {
        VocabCmd::Train {
            input,
            size,
            min_frequency,
            normalize_long_s,
            output,
        } => {
            let mut texts = Vec::new();
            for p in input {
                texts.extend(source_texts(p)?);
            }
            if *normalize_long_s {
                for t in &mut texts {
                    *t = corpus::normalize_long_s(t);
                }
            }
            let cfg = TrainerConfig {
                vocab_size: *size,
                min_frequency: *min_frequency,
            };
            let vocab = wordpiece::train_vocab(texts.iter().map(String::as_str), &cfg)?;
            vocab.save(&out_path(g, output))?;
            log::info!("vocabulary of {} tokens", vocab.len());
            print_json(&serde_json::json!({ "size": vocab.len() }))
        }
        VocabCmd::Stats {
            vocab,
            data,
            dataset,
            max_word_chars,
            output,
        } => {
            let vocab = load_vocab(vocab)?;
            let sentences = load_sentences(data, dataset)?;
            let pairs: Vec<(String, Vec<String>)> =
                sentences.into_iter().map(|s| (s.language, s.tokens)).collect();
            let opts = TokenizeOptions {
                max_word_chars: (*max_word_chars > 0).then_some(*max_word_chars),
                normalize_long_s: dataset.normalize_long_s,
            };
            let rows = wordpiece::tokenizer_stats_by_language(&pairs, &vocab, &opts)?;
            let csv = wordpiece::stats_csv(&rows);
            match output {
                Some(o) => write_string_atomic(&out_path(g, o), &csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}

fn mlm_cmd(g: &Global, cmd: &MlmCmd) -> Result<()> {
    match cmd {
        MlmCmd::Build {
            input,
            vocab,
            seq_len,
            max_preds,
            mlm_prob,
            dupe,
            short_seq_prob,
            whole_word,
            no_shuffle,
            normalize_long_s,
            chunk_bytes,
            language,
            output,
        } => {
            let vocab = load_vocab(vocab)?;
            let docs = jsonl_documents(input)?;
            let opts = TokenizeOptions {
                normalize_long_s: *normalize_long_s,
                ..TokenizeOptions::default()
            };
            let tokenized: Vec<TokenizedDocument> = docs
                .iter()
                .map(|d| TokenizedDocument::from_text(&d.id, &d.text, &vocab, &opts))
                .collect();
            let cfg = MlmConfig {
                max_seq_len: *seq_len,
                max_predictions: *max_preds,
                mlm_prob: *mlm_prob,
                dupe_factor: *dupe,
                short_seq_prob: *short_seq_prob,
                whole_word_masking: *whole_word,
                seed: g.seed.unwrap_or(MlmConfig::default().seed),
                shuffle: !*no_shuffle,
            };
            let instances = mlm::build_instances(&tokenized, &vocab, &cfg)?;
            let shards = mlm::shard_instances(&instances, *chunk_bytes, &out_path(g, output), language)?;
            print_json(&serde_json::json!({
                "instances": instances.len(),
                "shards": shards,
                "config": cfg,
            }))
        }
        MlmCmd::Budget {
            steps,
            batch_size,
            seq_len,
            corpus_subtokens,
        } => {
            let b = mlm::pretraining_budget(*steps, *batch_size, *seq_len, *corpus_subtokens)?;
            print_json(&b)
        }
    }
}

fn write_sentences(path: &Path, sentences: &[AnnotatedSentence], to: DatasetOut, column: &str) -> Result<()> {
    match to {
        DatasetOut::Jsonl => ner::write_jsonl(path, sentences)?,
        DatasetOut::Tsv => write_string_atomic(path, &ner::to_hipe_tsv(sentences, column))?,
    }
    Ok(())
}

fn parse_cmd(g: &Global, a: &ParseArgs) -> Result<()> {
    let sentences = load_sentences(&a.input, &a.dataset)?;
    if let Some(o) = &a.output {
        write_sentences(&out_path(g, o), &sentences, a.to, &a.dataset.column)?;
    }
    let mut per_language = BTreeMap::new();
    for (lang, s) in ner::split_by_language(&sentences) {
        per_language.insert(lang, ner::parse_report(&s));
    }
    print_json(&serde_json::json!({
        "total": ner::parse_report(&sentences),
        "languages": per_language,
        "entity_types": ner::entity_types(&sentences),
    }))
}

fn score_cmd(g: &Global, a: &ScoreArgs) -> Result<()> {
    let gold = load_sentences(std::slice::from_ref(&a.gold), &a.dataset)?;
    let pred = load_sentences(std::slice::from_ref(&a.pred), &a.dataset)?;
    let regimes: &[Regime] = match a.regime {
        RegimeArg::Strict => &[Regime::Strict],
        RegimeArg::Fuzzy => &[Regime::Fuzzy],
        RegimeArg::Both => &Regime::ALL,
    };
    let report = scorer::score(&gold, &pred, regimes)?;
    let csv = report.to_csv();
    if let Some(o) = &a.output {
        write_string_atomic(&out_path(g, o), &csv)?;
    }
    if let Some(j) = &a.json {
        write_json(&out_path(g, j), &report)?;
    }
    print!("{csv}");
    Ok(())
}

fn attr_eval_cmd(g: &Global, a: &AttrEvalArgs) -> Result<()> {
    let train = load_sentences(std::slice::from_ref(&a.train), &a.dataset)?;
    let gold = load_sentences(std::slice::from_ref(&a.gold), &a.dataset)?;
    let pred = load_sentences(std::slice::from_ref(&a.pred), &a.dataset)?;
    let kinds: Vec<AttributeKind> = if a.attributes.is_empty() {
        AttributeKind::ALL.to_vec()
    } else {
        a.attributes
            .iter()
            .map(|s| s.parse().map_err(|e: histoner_core::Error| CliError::Usage(e.to_string())))
            .collect::<Result<_>>()?
    };
    if a.buckets < 2 {
        return Err(CliError::Usage("--buckets must be at least 2".into()));
    }
    let opts = AttributeOptions {
        n_buckets: a.buckets,
        level: match a.level {
            LevelArg::Bucket => CorrelationLevel::Bucket,
            LevelArg::Raw => CorrelationLevel::Raw,
        },
    };
    let mut reports = Vec::with_capacity(kinds.len());
    for k in kinds {
        reports.push(attr::attribute_report(k, &gold, &pred, &train, &opts)?);
    }
    let csv = attr::reports_csv(&reports);
    if let Some(o) = &a.output {
        write_string_atomic(&out_path(g, o), &csv)?;
    }
    if let Some(s) = &a.summary {
        write_json(&out_path(g, s), &attr::summarize(&reports))?;
    }
    print!("{csv}");
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    require(path)?;
    let cfg = ExperimentConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn tagger_cmd(g: &Global, cmd: &TaggerCmd) -> Result<()> {
    match cmd {
        TaggerCmd::Train(a) => tagger_train(g, a),
        TaggerCmd::Predict {
            model,
            input,
            dataset,
            output,
            to,
        } => {
            require(model)?;
            let model = TaggerModel::load(model)?;
            let sentences = load_sentences(std::slice::from_ref(input), dataset)?;
            let pred = model.predict(&sentences);
            write_sentences(&out_path(g, output), &pred, *to, &dataset.column)?;
            log::info!("tagged {} sentences", pred.len());
            Ok(())
        }
    }
}

fn tagger_train(g: &Global, a: &TaggerTrainArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let mut dataset = a.dataset.clone();
    dataset.normalize_long_s |= cfg.normalize_long_s;
    if a.config.is_some() && dataset.column == ner::DEFAULT_LABEL_COLUMN {
        dataset.column = cfg.label_column.clone();
    }
    let pick = |given: &[PathBuf], split: fn(&crate::config::DatasetPaths) -> &PathBuf| -> Vec<PathBuf> {
        if given.is_empty() {
            cfg.datasets.values().map(|d| split(d).clone()).collect()
        } else {
            given.to_vec()
        }
    };
    let train_paths = pick(&a.train, |d| &d.train);
    let dev_paths = pick(&a.dev, |d| &d.dev);
    if train_paths.is_empty() || dev_paths.is_empty() {
        return Err(CliError::Usage("training needs --train and --dev files or a config naming datasets".into()));
    }
    let vocab_path = a
        .vocab
        .clone()
        .or_else(|| cfg.vocab.clone())
        .ok_or_else(|| CliError::Usage("training needs --vocab or a config naming one".into()))?;
    let vocab = load_vocab(&vocab_path)?;
    let train = load_sentences(&train_paths, &dataset)?;
    let dev = load_sentences(&dev_paths, &dataset)?;

    let mut tc = cfg.train.clone();
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = a.hash_bits {
        tc.hash_bits = v;
    }
    if let Some(v) = g.seed.or(cfg.seed) {
        tc.seed = v;
    }
    tc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let init = match &a.init {
        Some(p) => {
            require(p)?;
            Some(TaggerModel::load(p)?)
        }
        None => None,
    };
    let tokenize = TokenizeOptions {
        normalize_long_s: dataset.normalize_long_s,
        ..TokenizeOptions::default()
    };
    let outcome = tagger::train(&tc, &train, &dev, &vocab, &tokenize, init.as_ref())?;
    outcome.model.save(&out_path(g, &a.output))?;
    print_json(&serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "best_dev_f1": outcome.best_f1(),
        "history": outcome.history,
        "digest": outcome.model.digest(),
        "config": tc,
    }))
}

struct HarnessSetup {
    cfg: ExperimentConfig,
    harness: Harness,
    data: Vec<LanguageData>,
}

fn harness_setup(g: &Global, a: &HarnessArgs) -> Result<HarnessSetup> {
    let cfg = load_config(&a.config)?;
    if cfg.datasets.is_empty() {
        return Err(CliError::Usage(format!("{} names no datasets", a.config.display())));
    }
    let out_dir = g
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Usage("harness commands need --output-dir or output_dir in the config".into()))?;
    let vocab_path = cfg
        .vocab
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{} names no vocab", a.config.display())))?;
    let vocab = load_vocab(&vocab_path)?;
    let dataset = DatasetOpts {
        column: cfg.label_column.clone(),
        default_language: "und".into(),
        normalize_long_s: cfg.normalize_long_s,
    };
    let mut data = Vec::with_capacity(cfg.datasets.len());
    for (lang, paths) in &cfg.datasets {
        let mut opts = dataset.clone();
        opts.default_language = lang.clone();
        data.push(LanguageData {
            language: lang.clone(),
            train: load_sentences(std::slice::from_ref(&paths.train), &opts)?,
            dev: load_sentences(std::slice::from_ref(&paths.dev), &opts)?,
        });
    }
    let mut base = cfg.train.clone();
    if let Some(s) = g.seed.or(cfg.seed) {
        base.seed = s;
    }
    let tokenize = TokenizeOptions {
        normalize_long_s: cfg.normalize_long_s,
        ..TokenizeOptions::default()
    };
    fs::create_dir_all(&out_dir).map_err(|e| histoner_core::Error::Io {
        path: out_dir.clone(),
        source: e,
    })?;
    let jobs = g.jobs.or(cfg.jobs).unwrap_or(1);
    let harness = Harness::new(out_dir, base, vocab, tokenize)
        .with_jobs(jobs)
        .with_resume(a.resume);
    Ok(HarnessSetup { cfg, harness, data })
}

fn print_ranking(records: &[RunRecord]) {
    for r in records {
        match r.dev_f1 {
            Some(f) => println!("{}\t{:.2}", r.run_id, f),
            None => println!("{}\tfailed: {}", r.run_id, r.error.as_deref().unwrap_or("")),
        }
    }
}

fn harness_cmd(g: &Global, cmd: &HarnessCmd) -> Result<()> {
    match cmd {
        HarnessCmd::Grid { args, language } => {
            let s = harness_setup(g, args)?;
            let grid = s.cfg.grid.resolve()?;
            let (scope, train, dev) = match language {
                Some(l) => {
                    let d = s
                        .data
                        .iter()
                        .find(|d| &d.language == l)
                        .ok_or_else(|| CliError::Usage(format!("no dataset for language {l:?}")))?;
                    (l.clone(), d.train.clone(), d.dev.clone())
                }
                None => (
                    "all".to_owned(),
                    s.data.iter().flat_map(|d| d.train.iter().cloned()).collect(),
                    s.data.iter().flat_map(|d| d.dev.iter().cloned()).collect(),
                ),
            };
            let records = s.harness.grid_search(&grid, 1, &scope, &train, &dev, None)?;
            write_json(&s.harness.out_dir.join(format!("grid-{scope}.json")), &records)?;
            log::info!("{} trainings, {} runs", s.harness.trainings(), records.len());
            print_ranking(&records);
            Ok(())
        }
        HarnessCmd::Compare { args } => {
            let s = harness_setup(g, args)?;
            let grid = s.cfg.grid.resolve()?;
            let report = s.harness.compare_single_vs_one(&s.data, &grid)?;
            write_json(&s.harness.out_dir.join("compare.json"), &report)?;
            println!("language\tsingle\tone\tdelta_pp");
            for r in &report.rows {
                let single = r.single_f1.map_or("failed".to_owned(), |f| format!("{f:.2}"));
                let delta = r.delta_pp.map_or("-".to_owned(), |d| format!("{d:+.2}"));
                println!("{}\t{}\t{:.2}\t{}", r.language, single, r.one_f1, delta);
            }
            Ok(())
        }
        HarnessCmd::Multistage { args } => {
            let s = harness_setup(g, args)?;
            let stage1 = s.cfg.stage1.resolve()?;
            let stage2 = s.cfg.stage2.resolve()?;
            let report = s.harness.multistage(&stage1, &stage2, &s.data)?;
            write_json(&s.harness.out_dir.join("multistage.json"), &report)?;
            println!("selected\t{}", report.selected.run_id);
            println!("language\tstage1\tstage2\tdelta_pp");
            for (lang, o) in &report.languages {
                let best = o.best.as_ref().and_then(|b| b.dev_f1).map_or("failed".to_owned(), |f| format!("{f:.2}"));
                let delta = o.delta_pp.map_or("-".to_owned(), |d| format!("{d:+.2}"));
                println!("{}\t{:.2}\t{}\t{}", lang, o.stage1_f1, best, delta);
            }
            Ok(())
        }
    }
}
