//! Cased wordpiece vocabularies: training, greedy longest-match-first
//! tokenization, and fertility / unknown-token diagnostics.
//!
//! Training merges symbol pairs by `freq(xy) / (freq(x) * freq(y))` over word
//! frequency counts until the vocabulary budget is spent. Nothing is ever
//! lowercased or accent-stripped.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::corpus::{normalize_long_s, LONG_S};
use crate::error::{Error, Result};
use crate::io;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Special tokens in id order.
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const CONTINUATION_PREFIX: &str = "##";

/// Words longer than this many characters map to `[UNK]`.
pub const DEFAULT_MAX_WORD_CHARS: usize = 100;

fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::OtherPunctuation
            | GeneralCategory::OpenPunctuation
    )
}

/// Splits on unicode whitespace, then isolates every punctuation character as
/// its own word.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                let end = i + c.len_utf8();
                words.push(&chunk[i..end]);
                start = end;
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizeOptions {
    /// `None` disables the length cap.
    pub max_word_chars: Option<usize>,
    /// Replace long s before segmentation. Off by default: callers are
    /// expected to normalize text upstream.
    pub normalize_long_s: bool,
}

impl Default for TokenizeOptions {
    fn default() -> Self {
        TokenizeOptions {
            max_word_chars: Some(DEFAULT_MAX_WORD_CHARS),
            normalize_long_s: false,
        }
    }
}

/// Ordered subword inventory; a token's index is its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordpieceVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl WordpieceVocab {
    /// Builds a vocabulary from non-special tokens, prepending the specials.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let all = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
            .collect();
        Self::from_full_list(all)
    }

    /// Validates a complete id-ordered list, specials included.
    pub fn from_full_list(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::invalid(format!("vocabulary id {i} must be {s}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid vocabulary entry at id {i}: {t:?}")));
            }
            if t == CONTINUATION_PREFIX {
                return Err(Error::invalid("bare continuation prefix in vocabulary"));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(WordpieceVocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    pub fn is_continuation(&self, id: u32) -> bool {
        self.token(id)
            .is_some_and(|t| t.starts_with(CONTINUATION_PREFIX))
    }

    /// One token per line, line index = id.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.tokens.iter().map(|t| t.len() + 1).sum());
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_full_list(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_string_atomic(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&io::read_to_string(path)?)
    }

    /// Appends a token, returning its id. Existing tokens are left alone.
    pub fn push(&mut self, token: &str) -> Result<u32> {
        if let Some(id) = self.id(token) {
            return Ok(id);
        }
        if token.is_empty() || token.chars().any(char::is_whitespace) || token == CONTINUATION_PREFIX
        {
            return Err(Error::invalid(format!("invalid vocabulary entry {token:?}")));
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        Ok(id)
    }

    /// Greedy longest-match-first segmentation of a single word, appending ids
    /// to `out`. A word with an unmatchable remainder becomes one `[UNK]`.
    pub fn encode_word(&self, word: &str, opts: &TokenizeOptions, out: &mut Vec<u32>) {
        let normalized;
        let word = if opts.normalize_long_s && word.contains(LONG_S) {
            normalized = normalize_long_s(word);
            normalized.as_str()
        } else {
            word
        };
        if let Some(max) = opts.max_word_chars {
            if word.chars().count() > max {
                out.push(UNK_ID);
                return;
            }
        }
        let mark = out.len();
        let mut start = 0;
        let mut candidate = String::with_capacity(word.len() + CONTINUATION_PREFIX.len());
        while start < word.len() {
            let mut end = word.len();
            let mut found = None;
            while start < end {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION_PREFIX);
                }
                candidate.push_str(&word[start..end]);
                if let Some(id) = self.id(&candidate) {
                    found = Some(id);
                    break;
                }
                end = prev_char_boundary(word, end, start);
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(UNK_ID);
                    return;
                }
            }
        }
    }

    /// Token ids for `text`, pre-split on whitespace and punctuation.
    pub fn encode(&self, text: &str, opts: &TokenizeOptions) -> Vec<u32> {
        let mut out = Vec::new();
        for w in pre_tokenize(text) {
            self.encode_word(w, opts, &mut out);
        }
        out
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.tokenize_with(text, &TokenizeOptions::default())
    }

    pub fn tokenize_with(&self, text: &str, opts: &TokenizeOptions) -> Vec<String> {
        self.encode(text, opts)
            .into_iter()
            .map(|id| self.tokens[id as usize].clone())
            .collect()
    }

    /// Pieces of one already isolated word.
    pub fn word_pieces(&self, word: &str, opts: &TokenizeOptions) -> Vec<u32> {
        let mut out = Vec::new();
        self.encode_word(word, opts, &mut out);
        out
    }
}

fn prev_char_boundary(s: &str, mut i: usize, floor: usize) -> usize {
    i -= 1;
    while i > floor && !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

/// Subword fertility and unknown-token share over a dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TokenizerStats {
    pub sfr: f64,
    pub unk_portion: f64,
    pub word_count: u64,
    pub subword_count: u64,
    pub unk_count: u64,
}

impl TokenizerStats {
    fn from_counts(word_count: u64, subword_count: u64, unk_count: u64) -> Result<Self> {
        if word_count == 0 || subword_count == 0 {
            return Err(Error::EmptyInput("no words to compute tokenizer statistics".into()));
        }
        Ok(TokenizerStats {
            sfr: subword_count as f64 / word_count as f64,
            unk_portion: unk_count as f64 / subword_count as f64,
            word_count,
            subword_count,
            unk_count,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    words: u64,
    subwords: u64,
    unks: u64,
}

impl Tally {
    fn add_sentence<S: AsRef<str>>(&mut self, words: &[S], vocab: &WordpieceVocab, opts: &TokenizeOptions) {
        let mut buf = Vec::new();
        for w in words {
            buf.clear();
            for piece in pre_tokenize(w.as_ref()) {
                vocab.encode_word(piece, opts, &mut buf);
            }
            if buf.is_empty() {
                continue;
            }
            self.words += 1;
            self.subwords += buf.len() as u64;
            self.unks += buf.iter().filter(|&&id| id == UNK_ID).count() as u64;
        }
    }
}

/// Statistics over pre-tokenized sentences. Each given word counts once,
/// however many pieces the punctuation splitter and wordpiece produce for it.
pub fn tokenizer_stats<S: AsRef<str>>(
    sentences: &[Vec<S>],
    vocab: &WordpieceVocab,
    opts: &TokenizeOptions,
) -> Result<TokenizerStats> {
    let mut tally = Tally::default();
    for s in sentences {
        tally.add_sentence(s, vocab, opts);
    }
    TokenizerStats::from_counts(tally.words, tally.subwords, tally.unks)
}

/// Per-language breakdown of [`tokenizer_stats`]; sentences are `(language,
/// words)` pairs.
pub fn tokenizer_stats_by_language<S: AsRef<str>>(
    sentences: &[(String, Vec<S>)],
    vocab: &WordpieceVocab,
    opts: &TokenizeOptions,
) -> Result<BTreeMap<String, TokenizerStats>> {
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
    for (lang, words) in sentences {
        tallies
            .entry(lang.clone())
            .or_default()
            .add_sentence(words, vocab, opts);
    }
    if tallies.is_empty() {
        return Err(Error::EmptyInput("no sentences".into()));
    }
    tallies
        .into_iter()
        .map(|(l, t)| Ok((l, TokenizerStats::from_counts(t.words, t.subwords, t.unks)?)))
        .collect()
}

pub fn stats_csv(rows: &BTreeMap<String, TokenizerStats>) -> String {
    let mut out = String::from("language,sfr,unk_portion,words,subwords,unks\n");
    for (lang, s) in rows {
        let _ = writeln!(
            out,
            "{},{:.4},{:.6},{},{},{}",
            lang, s.sfr, s.unk_portion, s.word_count, s.subword_count, s.unk_count
        );
    }
    out
}

/// Word frequency table, mergeable across shards.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordCounts(pub HashMap<String, u64>);

impl WordCounts {
    pub fn add_text(&mut self, text: &str) {
        for w in pre_tokenize(text) {
            *self.0.entry(w.to_owned()).or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: WordCounts) {
        for (w, c) in other.0 {
            *self.0.entry(w).or_insert(0) += c;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainerConfig {
    pub vocab_size: usize,
    /// Minimum pair frequency for a merge to be considered.
    pub min_frequency: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            vocab_size: 32_000,
            min_frequency: 2,
        }
    }
}

/// Heap entry; ordered by score, then by the lexicographically smallest pair.
struct Candidate {
    score: f64,
    left: u32,
    right: u32,
    key: (String, String),
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.key.cmp(&self.key))
    }
}

struct MergeState {
    symbols: Vec<String>,
    symbol_freq: Vec<u64>,
    words: Vec<Vec<u32>>,
    word_freq: Vec<u64>,
    pair_freq: HashMap<(u32, u32), u64>,
    pair_words: HashMap<(u32, u32), Vec<usize>>,
    pairs_of_symbol: HashMap<u32, BTreeSet<(u32, u32)>>,
    min_frequency: u64,
}

impl MergeState {
    fn score(&self, pair: (u32, u32)) -> Option<f64> {
        let f = *self.pair_freq.get(&pair)?;
        if f < self.min_frequency || f == 0 {
            return None;
        }
        let fx = self.symbol_freq[pair.0 as usize] as f64;
        let fy = self.symbol_freq[pair.1 as usize] as f64;
        Some(f as f64 / (fx * fy))
    }

    fn candidate(&self, pair: (u32, u32)) -> Option<Candidate> {
        self.score(pair).map(|score| Candidate {
            score,
            left: pair.0,
            right: pair.1,
            key: (
                self.symbols[pair.0 as usize].clone(),
                self.symbols[pair.1 as usize].clone(),
            ),
        })
    }

    fn add_pair(&mut self, pair: (u32, u32), freq: u64, word: usize) {
        *self.pair_freq.entry(pair).or_insert(0) += freq;
        self.pair_words.entry(pair).or_default().push(word);
        self.pairs_of_symbol.entry(pair.0).or_default().insert(pair);
        self.pairs_of_symbol.entry(pair.1).or_default().insert(pair);
    }

    fn sub_pair(&mut self, pair: (u32, u32), freq: u64) {
        if let Some(f) = self.pair_freq.get_mut(&pair) {
            *f -= freq;
            if *f == 0 {
                self.pair_freq.remove(&pair);
                self.pair_words.remove(&pair);
                for s in [pair.0, pair.1] {
                    if let Some(set) = self.pairs_of_symbol.get_mut(&s) {
                        set.remove(&pair);
                    }
                }
            }
        }
    }

    /// Replaces every occurrence of `pair` with `merged`, returning the pairs
    /// whose counts grew.
    fn apply(&mut self, pair: (u32, u32), merged: u32) -> BTreeSet<(u32, u32)> {
        let (x, y) = pair;
        let mut touched = BTreeSet::new();
        let mut word_ids = self.pair_words.get(&pair).cloned().unwrap_or_default();
        word_ids.sort_unstable();
        word_ids.dedup();
        for wi in word_ids {
            let freq = self.word_freq[wi];
            let mut i = 0;
            while i + 1 < self.words[wi].len() {
                if self.words[wi][i] != x || self.words[wi][i + 1] != y {
                    i += 1;
                    continue;
                }
                let prev = (i > 0).then(|| self.words[wi][i - 1]);
                let next = self.words[wi].get(i + 2).copied();
                self.sub_pair((x, y), freq);
                if let Some(p) = prev {
                    self.sub_pair((p, x), freq);
                }
                if let Some(n) = next {
                    self.sub_pair((y, n), freq);
                }
                self.symbol_freq[x as usize] -= freq;
                self.symbol_freq[y as usize] -= freq;
                self.symbol_freq[merged as usize] += freq;
                let w = &mut self.words[wi];
                w[i] = merged;
                w.remove(i + 1);
                if let Some(p) = prev {
                    self.add_pair((p, merged), freq, wi);
                    touched.insert((p, merged));
                }
                if let Some(n) = next {
                    self.add_pair((merged, n), freq, wi);
                    touched.insert((merged, n));
                }
                i += 1;
            }
        }
        touched
    }
}

/// Trains a vocabulary from word frequencies.
///
/// The alphabet (every word-initial character and every `##`-prefixed
/// continuation character) is always included, sorted. Merged tokens follow in
/// merge order. The result is deterministic for a given count table.
pub fn train_vocab_from_counts(counts: &WordCounts, config: &TrainerConfig) -> Result<WordpieceVocab> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("cannot train a vocabulary on an empty corpus".into()));
    }
    let mut entries: Vec<(&String, &u64)> = counts.0.iter().collect();
    entries.sort();

    let mut alphabet = BTreeSet::new();
    for (word, _) in &entries {
        for (i, c) in word.chars().enumerate() {
            alphabet.insert(if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION_PREFIX}{c}")
            });
        }
    }
    let floor = SPECIALS.len() + alphabet.len();
    if config.vocab_size < floor {
        return Err(Error::invalid(format!(
            "vocab_size {} is smaller than specials plus alphabet ({floor})",
            config.vocab_size
        )));
    }
    let mut vocab = WordpieceVocab::from_tokens(alphabet.iter().cloned())?;

    // Working symbols are vocabulary entries; ids coincide with vocab ids.
    let mut state = MergeState {
        symbols: vocab.tokens().to_vec(),
        symbol_freq: vec![0; vocab.len()],
        words: Vec::with_capacity(entries.len()),
        word_freq: Vec::with_capacity(entries.len()),
        pair_freq: HashMap::new(),
        pair_words: HashMap::new(),
        pairs_of_symbol: HashMap::new(),
        min_frequency: config.min_frequency.max(1),
    };
    for (wi, (word, &freq)) in entries.iter().enumerate() {
        let mut syms = Vec::with_capacity(word.len());
        let mut buf = String::new();
        for (i, c) in word.chars().enumerate() {
            buf.clear();
            if i > 0 {
                buf.push_str(CONTINUATION_PREFIX);
            }
            buf.push(c);
            let id = vocab.id(&buf).expect("alphabet covers every character");
            state.symbol_freq[id as usize] += freq;
            syms.push(id);
        }
        for pair in syms.windows(2) {
            state.add_pair((pair[0], pair[1]), freq, wi);
        }
        state.words.push(syms);
        state.word_freq.push(freq);
    }

    let mut heap: BinaryHeap<Candidate> = state
        .pair_freq
        .keys()
        .filter_map(|&p| state.candidate(p))
        .collect();

    while vocab.len() < config.vocab_size {
        let Some(top) = heap.pop() else { break };
        let pair = (top.left, top.right);
        match state.score(pair) {
            Some(s) if s.to_bits() == top.score.to_bits() => {}
            _ => continue,
        }
        let right = &state.symbols[pair.1 as usize];
        let merged_token = format!(
            "{}{}",
            state.symbols[pair.0 as usize],
            right.strip_prefix(CONTINUATION_PREFIX).unwrap_or(right)
        );
        let merged = vocab.push(&merged_token)?;
        if merged as usize == state.symbols.len() {
            state.symbols.push(merged_token);
            state.symbol_freq.push(0);
        }
        let mut refresh = state.apply(pair, merged);
        for s in [pair.0, pair.1, merged] {
            if let Some(set) = state.pairs_of_symbol.get(&s) {
                refresh.extend(set.iter().copied());
            }
        }
        for p in refresh {
            if let Some(c) = state.candidate(p) {
                heap.push(c);
            }
        }
    }
    log::debug!("trained vocabulary with {} entries", vocab.len());
    Ok(vocab)
}

/// Counts words over `texts` and trains a vocabulary on them.
pub fn train_vocab<'a, I>(texts: I, config: &TrainerConfig) -> Result<WordpieceVocab>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts = WordCounts::default();
    for t in texts {
        counts.add_text(t);
    }
    train_vocab_from_counts(&counts, config)
}
