//! Hashed-feature linear sequence tagger.
//!
//! Each token is scored by a multinomial logistic model over hashed sparse
//! features: wordpieces (the first piece weighted on its own), surface forms,
//! word shape, a ±2 token window and the previous label. Training is
//! minibatch SGD with a learning rate that decays linearly to zero; after
//! every epoch the dev set is decoded greedily and scored with strict micro
//! F1, and the best epoch's weights are kept.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, fnv1a, fnv1a_extend};
use crate::ner::AnnotatedSentence;
use crate::scorer;
use crate::wordpiece::{TokenizeOptions, WordpieceVocab};

pub const FEATURE_SPEC_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HASH_BITS: u32 = 20;
/// Multiplier from the nominal (transformer-scale) learning rate to the SGD
/// step size of the linear model: 5e-5 becomes 1.0.
pub const DEFAULT_LR_SCALE: f64 = 2e4;

const FIRST_WEIGHT: f64 = 1.0;
const PIECE_WEIGHT: f64 = 0.5;
const BOS: &str = "<S>";
const EOS: &str = "</S>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hash_bits: u32,
    pub lr_scale: f64,
    /// Reserved; only 0 is accepted.
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 10,
            learning_rate: 5e-5,
            seed: 1,
            hash_bits: DEFAULT_HASH_BITS,
            lr_scale: DEFAULT_LR_SCALE,
            warmup_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.lr_scale > 0.0 && self.lr_scale.is_finite()) {
            return Err(Error::invalid("lr_scale must be positive"));
        }
        if !(1..=28).contains(&self.hash_bits) {
            return Err(Error::invalid("hash_bits must lie in 1..=28"));
        }
        if self.warmup_steps != 0 {
            return Err(Error::invalid("warmup is not supported"));
        }
        Ok(())
    }

    /// Step size at update `t` of `total`: linear decay, zero at `t == total`.
    pub fn learning_rate_at(&self, t: usize, total: usize) -> f64 {
        linear_decay(self.learning_rate * self.lr_scale, t, total)
    }
}

pub fn linear_decay(lr0: f64, t: usize, total: usize) -> f64 {
    if total == 0 || t >= total {
        return 0.0;
    }
    lr0 * (1.0 - t as f64 / total as f64)
}

/// A named feature before hashing.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub value: f64,
}

fn feature(name: String, value: f64) -> Feature {
    Feature { name, value }
}

fn shape(token: &str) -> String {
    let mut out = String::new();
    for c in token.chars() {
        let s = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_numeric() {
            'd'
        } else {
            c
        };
        if !out.ends_with(s) {
            out.push(s);
        }
    }
    out
}

fn neighbor(tokens: &[String], position: usize, offset: isize) -> &str {
    let i = position as isize + offset;
    if i < 0 {
        BOS
    } else if i as usize >= tokens.len() {
        EOS
    } else {
        &tokens[i as usize]
    }
}

/// Features of the token at `position` that do not depend on predictions.
pub fn static_features(tokens: &[String], position: usize, vocab: &WordpieceVocab, opts: &TokenizeOptions) -> Vec<Feature> {
    let tok = &tokens[position];
    let mut out = vec![feature("BIAS".into(), 1.0)];
    let pieces = vocab.encode(tok, opts);
    for (k, id) in pieces.iter().enumerate() {
        let piece = vocab.token(*id).unwrap_or_default();
        if k == 0 {
            out.push(feature(format!("FIRST={piece}"), FIRST_WEIGHT));
        }
        out.push(feature(format!("PIECE={piece}"), PIECE_WEIGHT));
    }
    out.push(feature(format!("W={tok}"), 1.0));
    out.push(feature(format!("LW={}", tok.to_lowercase()), 1.0));
    out.push(feature(format!("SHAPE={}", shape(tok)), 1.0));
    for off in [-2isize, -1, 1, 2] {
        out.push(feature(format!("W{off:+}={}", neighbor(tokens, position, off)), 1.0));
    }
    out
}

/// All features of a token given the previous label (`None` at sentence start).
pub fn featurize(
    tokens: &[String],
    position: usize,
    prev_label: Option<&str>,
    vocab: &WordpieceVocab,
    opts: &TokenizeOptions,
) -> Vec<Feature> {
    let mut out = static_features(tokens, position, vocab, opts);
    out.push(prev_feature(prev_label));
    out
}

fn prev_feature(prev_label: Option<&str>) -> Feature {
    feature(format!("PREV={}", prev_label.unwrap_or(BOS)), 1.0)
}

/// Signed hashing into `2^bits` slots.
pub fn hash_feature(f: &Feature, bits: u32) -> (u32, f64) {
    let h = fnv1a(f.name.as_bytes());
    let index = (h & ((1u64 << bits) - 1)) as u32;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (index, sign * f.value)
}

type Hashed = Vec<(u32, f64)>;

fn hash_all(fs: &[Feature], bits: u32) -> Hashed {
    fs.iter().map(|f| hash_feature(f, bits)).collect()
}

fn scores(weights: &[f64], n_labels: usize, feats: &[(u32, f64)], extra: (u32, f64), out: &mut [f64]) {
    out.fill(0.0);
    for &(idx, v) in feats.iter().chain(std::iter::once(&extra)) {
        let row = &weights[idx as usize * n_labels..(idx as usize + 1) * n_labels];
        for (o, w) in out.iter_mut().zip(row) {
            *o += v * w;
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Cross-entropy of one token and its gradient with respect to the weights,
/// as `(flat weight index, partial derivative)` pairs (indices may repeat).
pub fn example_loss_and_gradient(
    weights: &[f64],
    n_labels: usize,
    features: &[(u32, f64)],
    gold: usize,
) -> (f64, Vec<(usize, f64)>) {
    let mut p = vec![0.0; n_labels];
    let (last, head) = features.split_last().map_or((&(0, 0.0), &[][..]), |(l, h)| (l, h));
    scores(weights, n_labels, head, *last, &mut p);
    softmax_in_place(&mut p);
    let loss = -p[gold].ln();
    let mut grad = Vec::with_capacity(features.len() * n_labels);
    for &(idx, v) in features {
        for (l, pl) in p.iter().enumerate() {
            let target = if l == gold { 1.0 } else { 0.0 };
            grad.push((idx as usize * n_labels + l, v * (pl - target)));
        }
    }
    (loss, grad)
}

/// Where a model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: TrainConfig,
    pub best_epoch: usize,
    /// Dev strict micro F1 (0-100) after each epoch.
    pub dev_f1_history: Vec<f64>,
    pub train_sentences: usize,
    pub init_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub labels: Vec<String>,
    pub hash_bits: u32,
    pub feature_spec_version: u32,
    pub tokenize: TokenizeOptions,
    pub vocab: WordpieceVocab,
    /// Row-major `[2^hash_bits][labels]`.
    pub weights: Vec<f64>,
    pub provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    feature_spec_version: u32,
    hash_bits: u32,
    labels: Vec<String>,
    max_word_chars: Option<usize>,
    normalize_long_s: bool,
    vocab: Vec<String>,
    /// Non-zero rows as `(slot, per-label weights)`.
    rows: Vec<(u32, Vec<f64>)>,
    provenance: Option<Provenance>,
}

impl TaggerModel {
    pub fn new(labels: Vec<String>, hash_bits: u32, vocab: WordpieceVocab, tokenize: TokenizeOptions) -> Self {
        let n = (1usize << hash_bits) * labels.len();
        TaggerModel {
            labels,
            hash_bits,
            feature_spec_version: FEATURE_SPEC_VERSION,
            tokenize,
            vocab,
            weights: vec![0.0; n],
            provenance: None,
        }
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Content hash of labels and weight bits.
    pub fn digest(&self) -> String {
        let mut h = fnv1a(&self.hash_bits.to_le_bytes());
        for l in &self.labels {
            h = fnv1a_extend(h, l.as_bytes());
            h = fnv1a_extend(h, &[0]);
        }
        for w in &self.weights {
            h = fnv1a_extend(h, &w.to_bits().to_le_bytes());
        }
        format!("{h:016x}")
    }

    fn sentence_features(&self, tokens: &[String]) -> Vec<Hashed> {
        (0..tokens.len())
            .map(|i| hash_all(&static_features(tokens, i, &self.vocab, &self.tokenize), self.hash_bits))
            .collect()
    }

    fn prev_hashed(&self) -> Vec<(u32, f64)> {
        std::iter::once(None)
            .chain(self.labels.iter().map(|l| Some(l.as_str())))
            .map(|l| hash_feature(&prev_feature(l), self.hash_bits))
            .collect()
    }

    fn decode(&self, feats: &[Hashed], prev: &[(u32, f64)]) -> Vec<usize> {
        let mut out = Vec::with_capacity(feats.len());
        let mut z = vec![0.0; self.n_labels()];
        for f in feats {
            let p = out.last().map_or(0, |&l| l + 1);
            scores(&self.weights, self.n_labels(), f, prev[p], &mut z);
            let best = z
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > z[b] { i } else { b });
            out.push(best);
        }
        out
    }

    /// Greedy left-to-right labels for one token sequence.
    pub fn predict_tokens(&self, tokens: &[String]) -> Vec<String> {
        let feats = self.sentence_features(tokens);
        self.decode(&feats, &self.prev_hashed())
            .into_iter()
            .map(|i| self.labels[i].clone())
            .collect()
    }

    /// Copies of `sentences` with predicted labels.
    pub fn predict(&self, sentences: &[AnnotatedSentence]) -> Vec<AnnotatedSentence> {
        sentences
            .iter()
            .map(|s| AnnotatedSentence {
                labels: self.predict_tokens(&s.tokens),
                ..s.clone()
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let n = self.n_labels();
        let rows = self
            .weights
            .chunks(n)
            .enumerate()
            .filter(|(_, r)| r.iter().any(|w| w.to_bits() != 0))
            .map(|(i, r)| (i as u32, r.to_vec()))
            .collect();
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            feature_spec_version: self.feature_spec_version,
            hash_bits: self.hash_bits,
            labels: self.labels.clone(),
            max_word_chars: self.tokenize.max_word_chars,
            normalize_long_s: self.tokenize.normalize_long_s,
            vocab: self.vocab.tokens().to_vec(),
            rows,
            provenance: self.provenance.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model format {}", file.format_version)));
        }
        if file.feature_spec_version != FEATURE_SPEC_VERSION {
            return Err(Error::invalid(format!(
                "model uses feature spec {}, this build uses {}",
                file.feature_spec_version, FEATURE_SPEC_VERSION
            )));
        }
        if file.labels.is_empty() || !(1..=28).contains(&file.hash_bits) {
            return Err(Error::invalid("model has no labels or a bad hash size"));
        }
        let vocab = WordpieceVocab::from_full_list(file.vocab)?;
        let tokenize = TokenizeOptions {
            max_word_chars: file.max_word_chars,
            normalize_long_s: file.normalize_long_s,
        };
        let mut model = TaggerModel::new(file.labels, file.hash_bits, vocab, tokenize);
        let n = model.n_labels();
        let slots = 1usize << model.hash_bits;
        for (slot, row) in file.rows {
            if slot as usize >= slots || row.len() != n {
                return Err(Error::invalid(format!("bad weight row {slot}")));
            }
            if row.iter().any(|w| !w.is_finite()) {
                return Err(Error::invalid(format!("non-finite weight in row {slot}")));
            }
            model.weights[slot as usize * n..(slot as usize + 1) * n].copy_from_slice(&row);
        }
        model.feature_spec_version = file.feature_spec_version;
        model.provenance = file.provenance;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_string_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&io::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TaggerModel,
    /// Dev strict micro F1 (0-100) per epoch.
    pub history: Vec<f64>,
    /// 1-based.
    pub best_epoch: usize,
    /// Mean token loss of each batch in the first epoch.
    pub first_epoch_batch_losses: Vec<f64>,
    pub total_steps: usize,
}

impl TrainOutcome {
    pub fn best_f1(&self) -> f64 {
        self.history[self.best_epoch - 1]
    }
}

/// Label inventory: `O` plus every label in the given datasets, sorted.
pub fn label_inventory(sets: &[&[AnnotatedSentence]]) -> Vec<String> {
    let mut labels: BTreeSet<String> = BTreeSet::from(["O".to_owned()]);
    for s in sets.iter().flat_map(|d| d.iter()) {
        labels.extend(s.labels.iter().cloned());
    }
    labels.into_iter().collect()
}

fn seed_for_epoch(seed: u64, epoch: usize) -> u64 {
    fnv1a_extend(fnv1a(&seed.to_le_bytes()), &(epoch as u64).to_le_bytes())
}

/// The model training starts from: zero weights over the data's label
/// inventory, or a copy of `init` (same hash size, labels covering the data,
/// its own vocabulary).
pub fn initial_model(
    config: &TrainConfig,
    train_set: &[AnnotatedSentence],
    dev_set: &[AnnotatedSentence],
    vocab: &WordpieceVocab,
    tokenize: &TokenizeOptions,
    init: Option<&TaggerModel>,
) -> Result<TaggerModel> {
    let needed = label_inventory(&[train_set, dev_set]);
    match init {
        Some(m) => {
            if m.hash_bits != config.hash_bits {
                return Err(Error::LabelConflict(format!(
                    "initial model hashes to {} bits, config asks for {}",
                    m.hash_bits, config.hash_bits
                )));
            }
            let known: BTreeSet<&String> = m.labels.iter().collect();
            if let Some(l) = needed.iter().find(|l| !known.contains(l)) {
                return Err(Error::LabelConflict(format!("label {l:?} is not in the initial model")));
            }
            let mut m = m.clone();
            m.provenance = None;
            Ok(m)
        }
        None => Ok(TaggerModel::new(needed, config.hash_bits, vocab.clone(), *tokenize)),
    }
}

/// Trains a tagger from [`initial_model`].
pub fn train(
    config: &TrainConfig,
    train_set: &[AnnotatedSentence],
    dev_set: &[AnnotatedSentence],
    vocab: &WordpieceVocab,
    tokenize: &TokenizeOptions,
    init: Option<&TaggerModel>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || train_set.iter().all(|s| s.tokens.is_empty()) {
        return Err(Error::EmptyInput("training set".into()));
    }
    if dev_set.is_empty() {
        return Err(Error::EmptyInput("dev set".into()));
    }
    let mut model = initial_model(config, train_set, dev_set, vocab, tokenize, init)?;
    let init_digest = init.map(|_| model.digest());
    let n_labels = model.n_labels();

    let examples: Vec<(Vec<Hashed>, Vec<usize>)> = train_set
        .iter()
        .filter(|s| !s.tokens.is_empty())
        .map(|s| {
            let gold = s
                .labels
                .iter()
                .map(|l| model.label_index(l).expect("label in inventory"))
                .collect();
            (model.sentence_features(&s.tokens), gold)
        })
        .collect();
    let dev_feats: Vec<Vec<Hashed>> = dev_set.iter().map(|s| model.sentence_features(&s.tokens)).collect();
    let prev = model.prev_hashed();

    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut first_epoch_batch_losses = Vec::with_capacity(steps_per_epoch);
    let mut p = vec![0.0; n_labels];
    let mut grad: Vec<(usize, f64)> = Vec::new();
    let mut step = 0;

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for_epoch(config.seed, epoch));
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.clear();
            let mut loss_sum = 0.0;
            let mut n_tokens = 0usize;
            for &i in batch {
                let (feats, gold) = &examples[i];
                for (pos, f) in feats.iter().enumerate() {
                    let pf = if pos == 0 { prev[0] } else { prev[gold[pos - 1] + 1] };
                    scores(&model.weights, n_labels, f, pf, &mut p);
                    softmax_in_place(&mut p);
                    let y = gold[pos];
                    loss_sum -= p[y].ln();
                    n_tokens += 1;
                    for &(idx, v) in f.iter().chain(std::iter::once(&pf)) {
                        let base = idx as usize * n_labels;
                        for (l, pl) in p.iter().enumerate() {
                            let target = if l == y { 1.0 } else { 0.0 };
                            grad.push((base + l, v * (pl - target)));
                        }
                    }
                }
            }
            let loss = loss_sum / n_tokens.max(1) as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch: epoch + 1, step, loss });
            }
            if epoch == 0 {
                first_epoch_batch_losses.push(loss);
            }
            let lr = config.learning_rate_at(step, total_steps) / n_tokens.max(1) as f64;
            for &(k, g) in &grad {
                model.weights[k] -= lr * g;
            }
            step += 1;
        }

        let decoded: Vec<AnnotatedSentence> = dev_set
            .iter()
            .zip(&dev_feats)
            .map(|(s, f)| AnnotatedSentence {
                labels: model.decode(f, &prev).into_iter().map(|i| model.labels[i].clone()).collect(),
                ..s.clone()
            })
            .collect();
        let f1 = scorer::strict_micro_f1(dev_set, &decoded)? * 100.0;
        log::debug!("epoch {} dev strict F1 {:.2}", epoch + 1, f1);
        history.push(f1);
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch + 1, f1, model.weights.clone()));
        }
    }

    let (best_epoch, _, weights) = best.expect("at least one epoch");
    model.weights = weights;
    model.provenance = Some(Provenance {
        config: config.clone(),
        best_epoch,
        dev_f1_history: history.clone(),
        train_sentences: train_set.len(),
        init_digest,
    });
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        first_epoch_batch_losses,
        total_steps,
    })
}
