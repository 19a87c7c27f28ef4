//! Masked-LM pretraining instances and pretraining budget arithmetic.
//!
//! Packing and masking follow the reference BERT data generator: documents
//! are split into sentences, packed into `[CLS] A [SEP] B [SEP]` pairs with a
//! random-next second segment half of the time, and 15% of the maskable
//! positions are selected for prediction with the 80/10/10 replacement rule.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, fnv1a, fnv1a_extend};
use crate::wordpiece::{TokenizeOptions, WordpieceVocab, CLS_ID, MASK_ID, SEP_ID, SPECIALS};

/// Instance generation parameters. The defaults are the 32k-vocabulary
/// settings; [`MlmConfig::vocab_64k`] raises the prediction cap to 76.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub max_seq_len: usize,
    pub max_predictions: usize,
    pub mlm_prob: f64,
    pub dupe_factor: usize,
    pub short_seq_prob: f64,
    pub whole_word_masking: bool,
    pub seed: u64,
    /// Shuffle the final instance list, as the reference generator does.
    pub shuffle: bool,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            max_seq_len: 512,
            max_predictions: 75,
            mlm_prob: 0.15,
            dupe_factor: 5,
            short_seq_prob: 0.1,
            whole_word_masking: false,
            seed: 12345,
            shuffle: true,
        }
    }
}

impl MlmConfig {
    pub fn vocab_64k() -> Self {
        MlmConfig {
            max_predictions: 76,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_predictions == 0 {
            return Err(Error::invalid("max_predictions must be positive"));
        }
        if self.max_seq_len < 5 {
            return Err(Error::invalid("max_seq_len must leave room for two segments"));
        }
        if !(self.mlm_prob > 0.0 && self.mlm_prob < 1.0) {
            return Err(Error::invalid("mlm_prob must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.short_seq_prob) {
            return Err(Error::invalid("short_seq_prob must lie in [0, 1]"));
        }
        if self.dupe_factor == 0 {
            return Err(Error::invalid("dupe_factor must be positive"));
        }
        Ok(())
    }
}

/// A document as a list of tokenized sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDocument {
    pub id: String,
    pub sentences: Vec<Vec<u32>>,
}

impl TokenizedDocument {
    /// One sentence per non-blank line of `text`.
    pub fn from_text(id: &str, text: &str, vocab: &WordpieceVocab, opts: &TokenizeOptions) -> Self {
        let sentences = text
            .lines()
            .map(|l| vocab.encode(l, opts))
            .filter(|s| !s.is_empty())
            .collect();
        TokenizedDocument {
            id: id.to_owned(),
            sentences,
        }
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// One packed and masked pretraining example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlmInstance {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub is_random_next: bool,
    pub masked_positions: Vec<usize>,
    pub masked_label_ids: Vec<u32>,
}

impl MlmInstance {
    /// Token ids with the masked positions restored to their labels.
    pub fn original_ids(&self) -> Vec<u32> {
        let mut ids = self.token_ids.clone();
        for (&p, &l) in self.masked_positions.iter().zip(&self.masked_label_ids) {
            ids[p] = l;
        }
        ids
    }

    pub fn maskable_count(&self) -> usize {
        self.token_ids.len() - 3
    }
}

/// Number of positions to predict for an instance.
pub fn masked_count(maskable: usize, mlm_prob: f64, max_predictions: usize) -> usize {
    if maskable == 0 {
        return 0;
    }
    // f64::round rounds half away from zero.
    let target = (mlm_prob * maskable as f64).round() as usize;
    target.max(1).min(max_predictions).min(maskable)
}

fn stream_seed(seed: u64, doc_id: &str, dup: Option<usize>) -> u64 {
    let mut h = fnv1a(doc_id.as_bytes());
    if let Some(d) = dup {
        h = fnv1a_extend(h, b"#");
        h = fnv1a_extend(h, &(d as u64).to_le_bytes());
    }
    seed ^ h
}

/// A packed `(A, B)` pair before masking.
#[derive(Debug, Clone, PartialEq)]
struct Packed {
    tokens: Vec<u32>,
    segment_ids: Vec<u8>,
    is_random_next: bool,
}

fn truncate_pair(a: &mut Vec<u32>, b: &mut Vec<u32>, max_tokens: usize, rng: &mut ChaCha8Rng) {
    while a.len() + b.len() > max_tokens {
        let trunc = if a.len() > b.len() { &mut *a } else { &mut *b };
        // front or back, chosen at random
        if rng.random::<f64>() < 0.5 {
            trunc.remove(0);
        } else {
            trunc.pop();
        }
    }
}

fn pack_document(
    docs: &[TokenizedDocument],
    doc_index: usize,
    cfg: &MlmConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Packed> {
    let document = &docs[doc_index].sentences;
    let max_tokens = cfg.max_seq_len - 3;
    let mut target_len = max_tokens;
    if rng.random::<f64>() < cfg.short_seq_prob {
        target_len = rng.random_range(2..=max_tokens);
    }
    let mut out = Vec::new();
    let mut chunk: Vec<&Vec<u32>> = Vec::new();
    let mut chunk_len = 0;
    let mut i = 0;
    while i < document.len() {
        chunk.push(&document[i]);
        chunk_len += document[i].len();
        if i == document.len() - 1 || chunk_len >= target_len {
            let a_end = if chunk.len() >= 2 {
                rng.random_range(1..chunk.len())
            } else {
                1
            };
            let mut a: Vec<u32> = chunk[..a_end].iter().flat_map(|s| s.iter().copied()).collect();
            let mut b = Vec::new();
            let is_random_next = chunk.len() == 1 || rng.random::<f64>() < 0.5;
            if is_random_next {
                let target_b = target_len.saturating_sub(a.len()).max(1);
                let mut other = doc_index;
                for _ in 0..10 {
                    other = rng.random_range(0..docs.len());
                    if other != doc_index {
                        break;
                    }
                }
                let random_doc = &docs[other].sentences;
                let start = rng.random_range(0..random_doc.len());
                for s in &random_doc[start..] {
                    b.extend_from_slice(s);
                    if b.len() >= target_b {
                        break;
                    }
                }
                // Segments not used for A go back on the queue.
                i -= chunk.len() - a_end;
            } else {
                for s in &chunk[a_end..] {
                    b.extend_from_slice(s);
                }
            }
            truncate_pair(&mut a, &mut b, max_tokens, rng);
            if !a.is_empty() && !b.is_empty() {
                let mut tokens = Vec::with_capacity(a.len() + b.len() + 3);
                let mut segment_ids = Vec::with_capacity(a.len() + b.len() + 3);
                tokens.push(CLS_ID);
                tokens.extend_from_slice(&a);
                tokens.push(SEP_ID);
                segment_ids.resize(a.len() + 2, 0);
                tokens.extend_from_slice(&b);
                tokens.push(SEP_ID);
                segment_ids.resize(tokens.len(), 1);
                out.push(Packed {
                    tokens,
                    segment_ids,
                    is_random_next,
                });
            }
            chunk.clear();
            chunk_len = 0;
        }
        i += 1;
    }
    out
}

fn mask_instance(
    packed: &Packed,
    vocab: &WordpieceVocab,
    cfg: &MlmConfig,
    rng: &mut ChaCha8Rng,
) -> MlmInstance {
    let tokens = &packed.tokens;
    // Candidate groups: single positions, or whole words when enabled.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &id) in tokens.iter().enumerate() {
        if id == CLS_ID || id == SEP_ID {
            continue;
        }
        if cfg.whole_word_masking && vocab.is_continuation(id) {
            if let Some(last) = groups.last_mut() {
                if last.last() == Some(&(i - 1)) {
                    last.push(i);
                    continue;
                }
            }
        }
        groups.push(vec![i]);
    }
    let maskable = tokens.len() - 3;
    let to_predict = masked_count(maskable, cfg.mlm_prob, cfg.max_predictions);
    groups.shuffle(rng);

    let mut output = tokens.clone();
    let mut masked: Vec<(usize, u32)> = Vec::with_capacity(to_predict);
    let n_regular = vocab.len() as u32;
    for group in groups {
        if masked.len() >= to_predict {
            break;
        }
        if masked.len() + group.len() > to_predict {
            continue;
        }
        for pos in group {
            let replacement = if rng.random::<f64>() < 0.8 {
                MASK_ID
            } else if rng.random::<f64>() < 0.5 {
                tokens[pos]
            } else if n_regular > SPECIALS.len() as u32 {
                rng.random_range(SPECIALS.len() as u32..n_regular)
            } else {
                tokens[pos]
            };
            output[pos] = replacement;
            masked.push((pos, tokens[pos]));
        }
    }
    masked.sort_unstable_by_key(|m| m.0);
    MlmInstance {
        token_ids: output,
        segment_ids: packed.segment_ids.clone(),
        is_random_next: packed.is_random_next,
        masked_positions: masked.iter().map(|m| m.0).collect(),
        masked_label_ids: masked.iter().map(|m| m.1).collect(),
    }
}

/// Builds pretraining instances.
///
/// Each document is packed once from a stream seeded by `(seed, doc id)` and
/// then masked `dupe_factor` times from streams seeded by `(seed, doc id,
/// duplicate index)`, so the output does not depend on processing order.
pub fn build_instances(
    docs: &[TokenizedDocument],
    vocab: &WordpieceVocab,
    cfg: &MlmConfig,
) -> Result<Vec<MlmInstance>> {
    cfg.validate()?;
    let docs: Vec<TokenizedDocument> = docs
        .iter()
        .filter(|d| !d.sentences.is_empty())
        .cloned()
        .collect();
    if docs.is_empty() {
        return Err(Error::EmptyInput("no tokenized text to build instances from".into()));
    }
    let packed: Vec<Vec<Packed>> = (0..docs.len())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &docs[i].id, None));
            pack_document(&docs, i, cfg, &mut rng)
        })
        .collect();
    let mut instances = Vec::new();
    for dup in 0..cfg.dupe_factor {
        for (doc, doc_packed) in docs.iter().zip(&packed) {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &doc.id, Some(dup)));
            for p in doc_packed {
                instances.push(mask_instance(p, vocab, cfg, &mut rng));
            }
        }
    }
    if cfg.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        instances.shuffle(&mut rng);
    }
    Ok(instances)
}

pub fn shard_name(language: &str, index: usize) -> String {
    format!("pretrain-{language}-{index:05}.jsonl")
}

/// Writes instances as JSON Lines shards of at most `chunk_bytes` each.
pub fn shard_instances(
    instances: &[MlmInstance],
    chunk_bytes: usize,
    out_dir: &Path,
    language: &str,
) -> Result<Vec<PathBuf>> {
    if chunk_bytes == 0 {
        return Err(Error::invalid("chunk_bytes must be positive"));
    }
    let mut lines = Vec::with_capacity(instances.len());
    for inst in instances {
        let mut line = serde_json::to_string(inst)?;
        line.push('\n');
        if line.len() > chunk_bytes {
            return Err(Error::invalid(format!(
                "a serialized instance takes {} bytes, more than chunk_bytes {chunk_bytes}",
                line.len()
            )));
        }
        lines.push(line);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::new();
    let mut start = 0;
    while start < lines.len() {
        let mut end = start;
        let mut size = 0;
        while end < lines.len() && size + lines[end].len() <= chunk_bytes {
            size += lines[end].len();
            end += 1;
        }
        let path = out_dir.join(shard_name(language, paths.len()));
        let chunk = &lines[start..end];
        io::write_atomic(&path, |w| {
            for l in chunk {
                w.write_all(l.as_bytes())?;
            }
            Ok(())
        })?;
        paths.push(path);
        start = end;
    }
    Ok(paths)
}

pub fn read_shard(path: &Path) -> Result<Vec<MlmInstance>> {
    let text = io::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PretrainBudget {
    pub steps: u64,
    pub batch_size: u64,
    pub seq_len: u64,
    pub corpus_subtokens: u64,
    pub subtokens_seen: u64,
    pub epochs: f64,
}

impl PretrainBudget {
    /// Epochs rounded to one decimal.
    pub fn epochs_rounded(&self) -> f64 {
        (self.epochs * 10.0).round() / 10.0
    }
}

/// Subtokens seen = steps x batch x sequence length; epochs = seen / corpus.
pub fn pretraining_budget(
    steps: u64,
    batch_size: u64,
    seq_len: u64,
    corpus_subtokens: u64,
) -> Result<PretrainBudget> {
    if steps == 0 || batch_size == 0 || seq_len == 0 {
        return Err(Error::invalid("steps, batch size and sequence length must be positive"));
    }
    if corpus_subtokens == 0 {
        return Err(Error::invalid("corpus_subtokens must be positive"));
    }
    let seen = steps
        .checked_mul(batch_size)
        .and_then(|v| v.checked_mul(seq_len))
        .ok_or_else(|| Error::invalid("subtoken count overflows u64"))?;
    Ok(PretrainBudget {
        steps,
        batch_size,
        seq_len,
        corpus_subtokens,
        subtokens_seen: seen,
        epochs: seen as f64 / corpus_subtokens as f64,
    })
}
