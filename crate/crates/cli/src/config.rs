//! Experiment configuration: TOML or JSON, with `HISTONER_` environment
//! overrides for scalar values.
//!
//! Nested keys are joined with a double underscore and matched in lower case,
//! so `HISTONER_TRAIN__HASH_BITS=18` sets `train.hash_bits`. Variables naming
//! keys that do not exist, or that hold tables or arrays, are ignored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use histoner_core::harness::Grid;
use histoner_core::ner::DEFAULT_LABEL_COLUMN;
use histoner_core::tagger::TrainConfig;

use crate::error::CliError;

pub const ENV_PREFIX: &str = "HISTONER_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

/// A named preset (`single`, `stage1`, `stage2`) or explicit axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Preset(String),
    Explicit(Grid),
}

impl GridSpec {
    pub fn resolve(&self) -> Result<Grid, CliError> {
        let g = match self {
            GridSpec::Preset(name) => Grid::preset(name).map_err(|e| CliError::Usage(e.to_string()))?,
            GridSpec::Explicit(g) => g.clone(),
        };
        g.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Train and dev files per language code.
    pub datasets: BTreeMap<String, DatasetPaths>,
    pub vocab: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub normalize_long_s: bool,
    pub label_column: String,
    pub buckets: usize,
    /// Base training configuration; grids override batch, epochs, rate and seed.
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub stage1: GridSpec,
    pub stage2: GridSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            datasets: BTreeMap::new(),
            vocab: None,
            output_dir: None,
            seed: None,
            jobs: None,
            normalize_long_s: false,
            label_column: DEFAULT_LABEL_COLUMN.to_owned(),
            buckets: histoner_core::attr::DEFAULT_BUCKETS,
            train: TrainConfig::default(),
            grid: GridSpec::Preset("single".into()),
            stage1: GridSpec::Preset("stage1".into()),
            stage2: GridSpec::Preset("stage2".into()),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file, applies the process environment and resolves
    /// relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env<I>(path: &Path, vars: I) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let text = histoner_core::io::read_to_string(path)?;
        let json = path.extension().is_some_and(|e| e == "json");
        let mut cfg = Self::parse(&text, json, vars).map_err(|message| CliError::Config {
            path: path.to_owned(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Parses TOML (or JSON when `json`) over the defaults, then applies
    /// environment overrides.
    pub fn parse<I>(text: &str, json: bool, vars: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let file: Value = if json {
            serde_json::from_str(text).map_err(|e| e.to_string())?
        } else {
            toml::from_str(text).map_err(|e| e.to_string())?
        };
        if !file.is_object() {
            return Err("config must be a table".into());
        }
        let mut value = serde_json::to_value(ExperimentConfig::default()).map_err(|e| e.to_string())?;
        merge(&mut value, file);
        for (key, raw) in vars {
            if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
                apply_override(&mut value, rest, &raw)?;
            }
        }
        serde_json::from_value(value).map_err(|e| e.to_string())
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in self.datasets.values_mut() {
            fix(&mut d.train);
            fix(&mut d.dev);
            if let Some(t) = &mut d.test {
                fix(t);
            }
        }
        if let Some(v) = &mut self.vocab {
            fix(v);
        }
        if let Some(o) = &mut self.output_dir {
            fix(o);
        }
    }

    /// Every referenced input must exist.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut paths: Vec<&Path> = self.vocab.iter().map(PathBuf::as_path).collect();
        for d in self.datasets.values() {
            paths.push(&d.train);
            paths.push(&d.dev);
            paths.extend(d.test.as_deref());
        }
        for p in paths {
            if !p.exists() {
                return Err(CliError::Missing(p.to_owned()));
            }
        }
        Ok(())
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), String> {
    let path: Vec<String> = key.split("__").map(str::to_lowercase).collect();
    let mut slot = &mut *root;
    for part in &path {
        match slot.get_mut(part.as_str()) {
            Some(next) => slot = next,
            None => {
                log::debug!("ignoring {ENV_PREFIX}{key}: no such config key");
                return Ok(());
            }
        }
    }
    let bad = |what: &str| format!("{ENV_PREFIX}{key}={raw:?} is not {what}");
    *slot = match slot {
        Value::String(_) => Value::String(raw.to_owned()),
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("a boolean"))?),
        Value::Number(_) => serde_json::from_str::<serde_json::Number>(raw)
            .map(Value::Number)
            .map_err(|_| bad("a number"))?,
        Value::Null => serde_json::from_str::<Value>(raw)
            .ok()
            .filter(|v| !v.is_object() && !v.is_array())
            .unwrap_or_else(|| Value::String(raw.to_owned())),
        Value::Object(_) | Value::Array(_) => {
            log::debug!("ignoring {ENV_PREFIX}{key}: not a scalar");
            return Ok(());
        }
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOML: &str = r#"
vocab = "vocab.txt"
output_dir = "runs"
jobs = 2

[datasets.de]
train = "de-train.tsv"
dev = "de-dev.tsv"

[train]
hash_bits = 16

[grid]
batch_sizes = [4]
epochs = [2]
learning_rates = [5e-5]
seeds = [1, 2]
"#;

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn toml_and_json_agree() {
        let a = ExperimentConfig::parse(TOML, false, no_env()).unwrap();
        let value: toml::Value = toml::from_str(TOML).unwrap();
        let json = serde_json::to_string(&value).unwrap();
        let b = ExperimentConfig::parse(&json, true, no_env()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.hash_bits, 16);
        assert_eq!(a.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(a.grid.resolve().unwrap().run_count(), 2);
        assert_eq!(a.stage1.resolve().unwrap().run_count(), 60);
    }

    #[test]
    fn environment_overrides_scalars_only() {
        let env = vec![
            ("HISTONER_TRAIN__HASH_BITS".to_owned(), "18".to_owned()),
            ("HISTONER_SEED".to_owned(), "7".to_owned()),
            ("HISTONER_DATASETS__DE__DEV".to_owned(), "other.tsv".to_owned()),
            ("HISTONER_GRID".to_owned(), "single".to_owned()),
            ("HISTONER_UNRELATED".to_owned(), "x".to_owned()),
            ("PATH".to_owned(), "/bin".to_owned()),
        ];
        let c = ExperimentConfig::parse(TOML, false, env).unwrap();
        assert_eq!(c.train.hash_bits, 18);
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.datasets["de"].dev, PathBuf::from("other.tsv"));
        assert!(matches!(c.grid, GridSpec::Explicit(_)));
    }

    #[test]
    fn ill_typed_override_is_rejected() {
        let env = vec![("HISTONER_JOBS".to_owned(), "many".to_owned())];
        let err = ExperimentConfig::parse(TOML, false, env).unwrap_err();
        assert!(err.contains("HISTONER_JOBS"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("vocabulary = \"v\"", false, no_env()).is_err());
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let block = readme
            .split("```toml\n")
            .nth(1)
            .and_then(|rest| rest.split("```").next())
            .unwrap();
        let c = ExperimentConfig::parse(block, false, no_env()).unwrap();
        assert_eq!(c.datasets.len(), 2);
        assert_eq!(c.jobs, Some(4));
        assert_eq!(c.stage1.resolve().unwrap().run_count(), 60);
        assert_eq!(c.stage2.resolve().unwrap().run_count(), 32);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut c = ExperimentConfig::parse(TOML, false, no_env()).unwrap();
        c.rebase(Path::new("/exp"));
        assert_eq!(c.vocab.unwrap(), PathBuf::from("/exp/vocab.txt"));
        assert_eq!(c.datasets["de"].train, PathBuf::from("/exp/de-train.tsv"));
    }
}
