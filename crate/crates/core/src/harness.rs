//! Fine-tuning experiments over the tagger: hyperparameter grids, per-language
//! versus merged training, and two-stage (multilingual, then per-language)
//! fine-tuning.
//!
//! Every run is written to `ledger.jsonl` in the experiment directory and its
//! model to `models/<run_id>.json`. With `resume` set, cells whose run id is
//! already completed in the ledger are reused instead of retrained.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ner::AnnotatedSentence;
use crate::scorer;
use crate::tagger::{self, TaggerModel, TrainConfig};
use crate::wordpiece::{TokenizeOptions, WordpieceVocab};

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const MODELS_DIR: &str = "models";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub batch_sizes: Vec<usize>,
    pub epochs: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// One cell of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Grid {
    /// Downstream search grid used for single-stage fine-tuning.
    pub fn single_stage() -> Self {
        Grid {
            batch_sizes: vec![4, 8],
            epochs: vec![5, 10],
            learning_rates: vec![3e-5, 5e-5],
            seeds: vec![1, 2, 4, 5],
        }
    }

    /// First (multilingual) stage of two-stage fine-tuning.
    pub fn stage1() -> Self {
        Grid {
            batch_sizes: vec![4, 8, 16],
            epochs: vec![10],
            learning_rates: vec![1e-5, 2e-5, 3e-5, 4e-5, 5e-5],
            seeds: vec![1, 2, 4, 5],
        }
    }

    /// Second (per-language) stage of two-stage fine-tuning.
    pub fn stage2() -> Self {
        Grid::single_stage()
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "single" => Ok(Grid::single_stage()),
            "stage1" => Ok(Grid::stage1()),
            "stage2" => Ok(Grid::stage2()),
            _ => Err(Error::invalid(format!("unknown grid preset {name:?}"))),
        }
    }

    pub fn run_count(&self) -> usize {
        self.batch_sizes.len() * self.epochs.len() * self.learning_rates.len() * self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_count() == 0 {
            return Err(Error::invalid("every grid axis needs at least one value"));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.run_count());
        for &batch_size in &self.batch_sizes {
            for &epochs in &self.epochs {
                for &learning_rate in &self.learning_rates {
                    for &seed in &self.seeds {
                        out.push(Cell {
                            batch_size,
                            epochs,
                            learning_rate,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Runs needed by per-language training and by one merged model.
pub fn single_vs_one_run_counts(languages: usize, grid_size: usize) -> (usize, usize) {
    (languages * grid_size, grid_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub stage: u8,
    pub languages: Vec<String>,
    pub config: TrainConfig,
    /// Dev strict micro F1 in 0-100; `None` when the run failed.
    pub dev_f1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub model_path: Option<PathBuf>,
    pub model_digest: Option<String>,
    pub parent: Option<String>,
    pub init_digest: Option<String>,
    pub wall_time_secs: f64,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.dev_f1.is_some()
    }

    fn rank_key(&self) -> (f64, usize, usize, u64, f64) {
        (
            self.dev_f1.unwrap_or(f64::NEG_INFINITY),
            self.config.epochs,
            self.config.batch_size,
            self.config.seed,
            self.config.learning_rate,
        )
    }
}

/// Total order: dev F1 descending (failed runs last), then fewer epochs,
/// smaller batch, earlier seed, smaller learning rate, run id.
pub fn rank_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        let (fa, ea, ba, sa, la) = a.rank_key();
        let (fb, eb, bb, sb, lb) = b.rank_key();
        fb.total_cmp(&fa)
            .then(ea.cmp(&eb))
            .then(ba.cmp(&bb))
            .then(sa.cmp(&sb))
            .then(la.total_cmp(&lb))
            .then_with(|| a.run_id.cmp(&b.run_id))
    });
}

fn sanitize(scope: &str) -> String {
    scope
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

pub fn run_id(stage: u8, scope: &str, cell: &Cell) -> String {
    format!(
        "s{stage}-{}-b{}-e{}-lr{:e}-seed{}",
        sanitize(scope),
        cell.batch_size,
        cell.epochs,
        cell.learning_rate,
        cell.seed
    )
}

/// Train and dev data of one language.
#[derive(Debug, Clone)]
pub struct LanguageData {
    pub language: String,
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
}

/// Stage-1 model a grid is initialized from.
#[derive(Debug, Clone, Copy)]
pub struct Init<'a> {
    pub model: &'a TaggerModel,
    pub record: &'a RunRecord,
}

pub struct Harness {
    pub out_dir: PathBuf,
    pub jobs: usize,
    /// Template for every run; the grid overrides batch, epochs, rate and seed.
    pub base: TrainConfig,
    pub vocab: WordpieceVocab,
    pub tokenize: TokenizeOptions,
    pub resume: bool,
    trainings: AtomicUsize,
    ledger_lock: Mutex<()>,
}

impl Harness {
    pub fn new(out_dir: impl Into<PathBuf>, base: TrainConfig, vocab: WordpieceVocab, tokenize: TokenizeOptions) -> Self {
        Harness {
            out_dir: out_dir.into(),
            jobs: 1,
            base,
            vocab,
            tokenize,
            resume: false,
            trainings: AtomicUsize::new(0),
            ledger_lock: Mutex::new(()),
        }
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn with_resume(mut self, resume: bool) -> Self {
        self.resume = resume;
        self
    }

    /// Trainings actually executed (resumed cells are not counted).
    pub fn trainings(&self) -> usize {
        self.trainings.load(Ordering::SeqCst)
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.out_dir.join(LEDGER_FILE)
    }

    fn append_ledger(&self, record: &RunRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        let path = self.ledger_path();
        let _guard = self.ledger_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }

    fn completed(&self) -> Result<HashMap<String, RunRecord>> {
        if !self.resume {
            return Ok(HashMap::new());
        }
        let records = read_ledger(&self.ledger_path())?;
        Ok(records
            .into_iter()
            .filter(|r| r.succeeded() && r.model_path.as_deref().is_some_and(Path::exists))
            .map(|r| (r.run_id.clone(), r))
            .collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn run_cell(
        &self,
        stage: u8,
        scope: &str,
        languages: &[String],
        cell: &Cell,
        train: &[AnnotatedSentence],
        dev: &[AnnotatedSentence],
        init: Option<Init<'_>>,
    ) -> RunRecord {
        let id = run_id(stage, scope, cell);
        let config = TrainConfig {
            batch_size: cell.batch_size,
            epochs: cell.epochs,
            learning_rate: cell.learning_rate,
            seed: cell.seed,
            ..self.base.clone()
        };
        let start = Instant::now();
        self.trainings.fetch_add(1, Ordering::SeqCst);
        let outcome = tagger::train(&config, train, dev, &self.vocab, &self.tokenize, init.map(|i| i.model));
        let mut record = RunRecord {
            run_id: id.clone(),
            stage,
            languages: languages.to_vec(),
            config,
            dev_f1: None,
            best_epoch: None,
            model_path: None,
            model_digest: None,
            parent: init.map(|i| i.record.run_id.clone()),
            init_digest: None,
            wall_time_secs: 0.0,
            error: None,
        };
        let saved = outcome.and_then(|o| {
            let path = self.out_dir.join(MODELS_DIR).join(format!("{id}.json"));
            o.model.save(&path)?;
            Ok((o, path))
        });
        match saved {
            Ok((o, path)) => {
                record.dev_f1 = Some(o.best_f1());
                record.best_epoch = Some(o.best_epoch);
                record.model_digest = Some(o.model.digest());
                record.init_digest = o.model.provenance.as_ref().and_then(|p| p.init_digest.clone());
                record.model_path = Some(path);
            }
            Err(e) => {
                log::warn!("run {id} failed: {e}");
                record.error = Some(e.to_string());
            }
        }
        record.wall_time_secs = start.elapsed().as_secs_f64();
        record
    }

    /// Trains every grid cell and returns the records ranked best first.
    pub fn grid_search(
        &self,
        grid: &Grid,
        stage: u8,
        scope: &str,
        train: &[AnnotatedSentence],
        dev: &[AnnotatedSentence],
        init: Option<Init<'_>>,
    ) -> Result<Vec<RunRecord>> {
        grid.validate()?;
        fs::create_dir_all(self.out_dir.join(MODELS_DIR)).map_err(|e| Error::io(&self.out_dir, e))?;
        let languages: Vec<String> = {
            let mut l: Vec<String> = train.iter().chain(dev).map(|s| s.language.clone()).collect();
            l.sort();
            l.dedup();
            l
        };
        let done = self.completed()?;
        let cells = grid.cells();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        let results: Vec<Result<RunRecord>> = pool.install(|| {
            cells
                .par_iter()
                .map(|cell| {
                    if let Some(r) = done.get(&run_id(stage, scope, cell)) {
                        log::info!("reusing completed run {}", r.run_id);
                        return Ok(r.clone());
                    }
                    let r = self.run_cell(stage, scope, &languages, cell, train, dev, init);
                    self.append_ledger(&r)?;
                    Ok(r)
                })
                .collect()
        });
        let mut records = results.into_iter().collect::<Result<Vec<_>>>()?;
        rank_records(&mut records);
        Ok(records)
    }

    /// Loads a run's model and checks it against the recorded digest.
    pub fn load_model(&self, record: &RunRecord) -> Result<TaggerModel> {
        let path = record
            .model_path
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("run {} has no model", record.run_id)))?;
        let model = TaggerModel::load(path)?;
        if record.model_digest.as_deref() != Some(model.digest().as_str()) {
            return Err(Error::invalid(format!("model file of run {} does not match its digest", record.run_id)));
        }
        Ok(model)
    }

    /// Per-language grids against one grid over the merged data.
    pub fn compare_single_vs_one(&self, datasets: &[LanguageData], grid: &Grid) -> Result<CompareReport> {
        if datasets.is_empty() {
            return Err(Error::EmptyInput("no languages to compare".into()));
        }
        let (merged_train, merged_dev) = merge(datasets);
        let one = self.grid_search(grid, 1, "all", &merged_train, &merged_dev, None)?;
        let best_one = one
            .first()
            .filter(|r| r.succeeded())
            .ok_or_else(|| Error::invalid("every merged-data run failed"))?;
        let one_model = self.load_model(best_one)?;
        let mut rows = Vec::with_capacity(datasets.len());
        for d in datasets {
            let single = self.grid_search(grid, 1, &d.language, &d.train, &d.dev, None)?;
            let single_f1 = single.first().and_then(|r| r.dev_f1);
            let one_f1 = scorer::strict_micro_f1(&d.dev, &one_model.predict(&d.dev))? * 100.0;
            rows.push(CompareRow {
                language: d.language.clone(),
                single_f1,
                one_f1,
                delta_pp: single_f1.map(|s| one_f1 - s),
            });
        }
        let (single_runs, one_runs) = single_vs_one_run_counts(datasets.len(), grid.run_count());
        Ok(CompareReport {
            rows,
            single_runs,
            one_runs,
        })
    }

    /// Two-stage fine-tuning. Stage 1 searches `stage1` on the merged data and
    /// selects the configuration with the best mean dev F1 over seeds, then
    /// its best seed. Stage 2 searches `stage2` per language, every run
    /// starting from the selected stage-1 weights.
    pub fn multistage(&self, stage1: &Grid, stage2: &Grid, datasets: &[LanguageData]) -> Result<MultistageReport> {
        if datasets.is_empty() {
            return Err(Error::EmptyInput("no languages for multi-stage training".into()));
        }
        let (merged_train, merged_dev) = merge(datasets);
        let stage1_records = self.grid_search(stage1, 1, "all", &merged_train, &merged_dev, None)?;
        let selected = select_stage1(&stage1_records)
            .ok_or_else(|| {
                let errors: Vec<&str> = stage1_records.iter().filter_map(|r| r.error.as_deref()).collect();
                Error::invalid(format!("stage 1 produced no model; errors: {}", errors.join("; ")))
            })?
            .clone();
        let model = self.load_model(&selected)?;
        let init = Init {
            model: &model,
            record: &selected,
        };
        let mut languages = BTreeMap::new();
        for d in datasets {
            let stage1_f1 = scorer::strict_micro_f1(&d.dev, &model.predict(&d.dev))? * 100.0;
            let runs = self.grid_search(stage2, 2, &d.language, &d.train, &d.dev, Some(init))?;
            let best = runs.first().cloned().filter(RunRecord::succeeded);
            let delta_pp = best.as_ref().and_then(|b| b.dev_f1).map(|f| f - stage1_f1);
            languages.insert(
                d.language.clone(),
                LanguageOutcome {
                    stage1_f1,
                    best,
                    delta_pp,
                    runs,
                },
            );
        }
        Ok(MultistageReport {
            stage1: stage1_records,
            selected,
            languages,
        })
    }
}

fn merge(datasets: &[LanguageData]) -> (Vec<AnnotatedSentence>, Vec<AnnotatedSentence>) {
    let train = datasets.iter().flat_map(|d| d.train.iter().cloned()).collect();
    let dev = datasets.iter().flat_map(|d| d.dev.iter().cloned()).collect();
    (train, dev)
}

/// Epochs, batch size and learning-rate bits: a grid cell without its seed.
type ConfigKey = (usize, usize, u64);

/// Best configuration by mean dev F1 over its seeds, then its best seed.
pub fn select_stage1(records: &[RunRecord]) -> Option<&RunRecord> {
    let mut groups: Vec<(ConfigKey, Vec<&RunRecord>)> = Vec::new();
    for r in records.iter().filter(|r| r.succeeded()) {
        let key = (r.config.epochs, r.config.batch_size, r.config.learning_rate.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mean = |v: &[&RunRecord]| v.iter().filter_map(|r| r.dev_f1).sum::<f64>() / v.len() as f64;
    let (_, best_group) = groups.iter().min_by(|(ka, a), (kb, b)| {
        mean(b)
            .total_cmp(&mean(a))
            .then(ka.0.cmp(&kb.0))
            .then(ka.1.cmp(&kb.1))
            .then(f64::from_bits(ka.2).total_cmp(&f64::from_bits(kb.2)))
    })?;
    best_group.iter().copied().min_by(|a, b| {
        b.dev_f1
            .unwrap_or(f64::NEG_INFINITY)
            .total_cmp(&a.dev_f1.unwrap_or(f64::NEG_INFINITY))
            .then(a.config.seed.cmp(&b.config.seed))
    })
}

pub fn read_ledger(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = crate::io::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Record {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub language: String,
    pub single_f1: Option<f64>,
    pub one_f1: f64,
    /// One-model minus single-model, percentage points.
    pub delta_pp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub single_runs: usize,
    pub one_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanguageOutcome {
    /// Selected stage-1 model on this language's dev set.
    pub stage1_f1: f64,
    pub best: Option<RunRecord>,
    /// Best stage-2 minus stage-1, percentage points.
    pub delta_pp: Option<f64>,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultistageReport {
    pub stage1: Vec<RunRecord>,
    pub selected: RunRecord,
    pub languages: BTreeMap<String, LanguageOutcome>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, f1: Option<f64>, epochs: usize, batch: usize, seed: u64, lr: f64) -> RunRecord {
        RunRecord {
            run_id: id.into(),
            stage: 1,
            languages: vec![],
            config: TrainConfig {
                epochs,
                batch_size: batch,
                seed,
                learning_rate: lr,
                ..Default::default()
            },
            dev_f1: f1,
            best_epoch: None,
            model_path: None,
            model_digest: None,
            parent: None,
            init_digest: None,
            wall_time_secs: 0.0,
            error: None,
        }
    }

    #[test]
    fn grid_products() {
        assert_eq!(Grid::single_stage().run_count(), 32);
        assert_eq!(Grid::stage1().run_count(), 60);
        assert_eq!(Grid::stage2().run_count(), 32);
        assert_eq!(Grid::stage1().cells().len(), 60);
        assert_eq!(single_vs_one_run_counts(3, 40), (120, 40));
    }

    #[test]
    fn ranking_breaks_ties_by_cost_then_seed() {
        let mut rs = vec![
            record("a", Some(80.0), 10, 4, 1, 3e-5),
            record("b", Some(80.0), 5, 8, 2, 3e-5),
            record("c", None, 5, 4, 1, 3e-5),
            record("d", Some(80.0), 5, 8, 1, 3e-5),
            record("e", Some(90.0), 10, 16, 5, 5e-5),
        ];
        rank_records(&mut rs);
        let ids: Vec<&str> = rs.iter().map(|r| r.run_id.as_str()).collect();
        assert_eq!(ids, ["e", "d", "b", "a", "c"]);
    }

    #[test]
    fn stage1_selection_uses_mean_over_seeds() {
        let rs = vec![
            record("x1", Some(95.0), 10, 4, 1, 1e-5),
            record("x2", Some(60.0), 10, 4, 2, 1e-5),
            record("y1", Some(85.0), 10, 8, 1, 1e-5),
            record("y2", Some(88.0), 10, 8, 2, 1e-5),
        ];
        assert_eq!(select_stage1(&rs).unwrap().run_id, "y2");
        assert!(select_stage1(&[record("f", None, 1, 1, 1, 1e-5)]).is_none());
    }

    #[test]
    fn run_ids_are_distinct_per_cell() {
        let cells = Grid::stage1().cells();
        let mut ids: Vec<String> = cells.iter().map(|c| run_id(1, "all", c)).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 60);
        assert_eq!(run_id(2, "DE", &cells[0]), "s2-de-b4-e10-lr1e-5-seed1");
    }
}
