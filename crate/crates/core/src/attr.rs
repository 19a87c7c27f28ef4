//! Attribute-aided evaluation.
//!
//! Test entities (or sentences) get an attribute value computed against the
//! training set, are split into equal-frequency buckets, and each bucket is
//! scored with strict F1. The bucket F1s are then correlated with the bucket
//! attribute means by Spearman's rank correlation, with an exact permutation
//! p-value.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::ner::{AnnotatedSentence, EntitySpan};
use crate::scorer::{match_spans, Counts, Regime};

pub const DEFAULT_BUCKETS: usize = 4;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
/// Largest bucket count for which the permutation test is enumerated exactly.
pub const EXACT_PERMUTATION_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttributeKind {
    /// Mean label consistency of the entity's tokens.
    #[serde(rename = "tCon")]
    TokenConsistency,
    /// Label consistency of the entity's surface form.
    #[serde(rename = "eCon")]
    EntityConsistency,
    /// Mean training frequency of the entity's tokens.
    #[serde(rename = "tFre")]
    TokenFrequency,
    /// Training frequency of the entity's surface form.
    #[serde(rename = "eFre")]
    EntityFrequency,
    #[serde(rename = "eLen")]
    EntityLength,
    #[serde(rename = "sLen")]
    SentenceLength,
    /// Share of sentence tokens never seen in training.
    #[serde(rename = "oDen")]
    OovDensity,
    /// Share of sentence tokens inside a gold entity.
    #[serde(rename = "eDen")]
    EntityDensity,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 8] = [
        AttributeKind::TokenConsistency,
        AttributeKind::EntityConsistency,
        AttributeKind::TokenFrequency,
        AttributeKind::EntityFrequency,
        AttributeKind::EntityLength,
        AttributeKind::SentenceLength,
        AttributeKind::OovDensity,
        AttributeKind::EntityDensity,
    ];

    pub fn code(self) -> &'static str {
        match self {
            AttributeKind::TokenConsistency => "tCon",
            AttributeKind::EntityConsistency => "eCon",
            AttributeKind::TokenFrequency => "tFre",
            AttributeKind::EntityFrequency => "eFre",
            AttributeKind::EntityLength => "eLen",
            AttributeKind::SentenceLength => "sLen",
            AttributeKind::OovDensity => "oDen",
            AttributeKind::EntityDensity => "eDen",
        }
    }

    pub fn is_sentence_level(self) -> bool {
        matches!(
            self,
            AttributeKind::SentenceLength | AttributeKind::OovDensity | AttributeKind::EntityDensity
        )
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttributeKind::ALL
            .into_iter()
            .find(|k| k.code() == s)
            .ok_or_else(|| Error::invalid(format!("unknown attribute {s:?}")))
    }
}

/// Training-set statistics every attribute is computed against.
#[derive(Debug, Clone, Default)]
pub struct TrainingProfile {
    token_labels: HashMap<String, HashMap<String, u64>>,
    token_freq: HashMap<String, u64>,
    /// Surface form -> (label -> count), where the label is the entity type
    /// when the occurrence is exactly a gold entity and `O` otherwise.
    surface_labels: HashMap<String, HashMap<String, u64>>,
}

fn surface(tokens: &[String]) -> String {
    tokens.join(" ")
}

impl TrainingProfile {
    /// Token-level tables from `train`; surface-form tables are filled for
    /// the given lengths only (entity lengths present in the evaluation data).
    pub fn build(train: &[AnnotatedSentence], surface_lengths: &HashSet<usize>) -> Self {
        let mut p = TrainingProfile::default();
        for s in train {
            for (t, l) in s.tokens.iter().zip(&s.labels) {
                *p.token_freq.entry(t.clone()).or_insert(0) += 1;
                *p.token_labels
                    .entry(t.clone())
                    .or_default()
                    .entry(l.clone())
                    .or_insert(0) += 1;
            }
            let spans = s.spans();
            let gold: HashMap<(usize, usize), &str> = spans
                .iter()
                .map(|sp| ((sp.start, sp.end), sp.entity_type.as_str()))
                .collect();
            for &n in surface_lengths {
                if n == 0 || n > s.tokens.len() {
                    continue;
                }
                for start in 0..=s.tokens.len() - n {
                    let label = gold.get(&(start, start + n)).copied().unwrap_or("O");
                    *p.surface_labels
                        .entry(surface(&s.tokens[start..start + n]))
                        .or_default()
                        .entry(label.to_owned())
                        .or_insert(0) += 1;
                }
            }
        }
        p
    }

    pub fn token_frequency(&self, token: &str) -> u64 {
        self.token_freq.get(token).copied().unwrap_or(0)
    }

    /// Share of the token's most frequent training label; 0 when unseen.
    pub fn token_consistency(&self, token: &str) -> f64 {
        consistency(self.token_labels.get(token))
    }

    pub fn surface_frequency(&self, tokens: &[String]) -> u64 {
        self.surface_labels
            .get(&surface(tokens))
            .map(|m| m.values().sum())
            .unwrap_or(0)
    }

    pub fn surface_consistency(&self, tokens: &[String]) -> f64 {
        consistency(self.surface_labels.get(&surface(tokens)))
    }
}

fn consistency(labels: Option<&HashMap<String, u64>>) -> f64 {
    match labels {
        Some(m) => {
            let total: u64 = m.values().sum();
            let top = m.values().copied().max().unwrap_or(0);
            if total == 0 {
                0.0
            } else {
                top as f64 / total as f64
            }
        }
        None => 0.0,
    }
}

/// Attribute value of a span within `sentence`.
pub fn entity_value(kind: AttributeKind, profile: &TrainingProfile, sentence: &AnnotatedSentence, span: &EntitySpan) -> f64 {
    let toks = &sentence.tokens[span.start..span.end];
    let mean = |f: &dyn Fn(&str) -> f64| toks.iter().map(|t| f(t)).sum::<f64>() / toks.len() as f64;
    match kind {
        AttributeKind::TokenConsistency => mean(&|t| profile.token_consistency(t)),
        AttributeKind::TokenFrequency => mean(&|t| profile.token_frequency(t) as f64),
        AttributeKind::EntityConsistency => profile.surface_consistency(toks),
        AttributeKind::EntityFrequency => profile.surface_frequency(toks) as f64,
        AttributeKind::EntityLength => span.len() as f64,
        _ => sentence_value(kind, profile, sentence),
    }
}

/// Attribute value of a whole sentence (gold labels drive `eDen`).
pub fn sentence_value(kind: AttributeKind, profile: &TrainingProfile, sentence: &AnnotatedSentence) -> f64 {
    let n = sentence.tokens.len() as f64;
    match kind {
        AttributeKind::SentenceLength => n,
        AttributeKind::OovDensity => {
            let unseen = sentence
                .tokens
                .iter()
                .filter(|t| profile.token_frequency(t) == 0)
                .count();
            unseen as f64 / n
        }
        AttributeKind::EntityDensity => {
            let inside: usize = sentence.spans().iter().map(EntitySpan::len).sum();
            inside as f64 / n
        }
        _ => f64::NAN,
    }
}

/// One evaluated unit: an entity (with its sentence index) or a sentence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeValue {
    pub sentence: usize,
    pub span: Option<EntitySpan>,
    pub value: f64,
}

fn surface_lengths(sets: &[&[AnnotatedSentence]]) -> HashSet<usize> {
    sets.iter()
        .flat_map(|d| d.iter())
        .flat_map(|s| s.spans().into_iter().map(|sp| sp.len()))
        .collect()
}

/// Attribute values for every gold entity of `test` (entity-level kinds) or
/// every sentence (sentence-level kinds).
pub fn compute_attribute(
    kind: AttributeKind,
    train: &[AnnotatedSentence],
    test: &[AnnotatedSentence],
) -> Vec<AttributeValue> {
    let profile = TrainingProfile::build(train, &surface_lengths(&[test]));
    unit_values(kind, &profile, test)
}

fn unit_values(kind: AttributeKind, profile: &TrainingProfile, test: &[AnnotatedSentence]) -> Vec<AttributeValue> {
    let mut out = Vec::new();
    for (i, s) in test.iter().enumerate() {
        if kind.is_sentence_level() {
            out.push(AttributeValue {
                sentence: i,
                span: None,
                value: sentence_value(kind, profile, s),
            });
        } else {
            for sp in s.spans() {
                out.push(AttributeValue {
                    sentence: i,
                    value: entity_value(kind, profile, s, &sp),
                    span: Some(sp),
                });
            }
        }
    }
    out
}

/// Equal-frequency bucketing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Buckets {
    /// Inclusive upper edge of each bucket; every edge is an attained value.
    pub upper: Vec<f64>,
    /// Smallest value in each bucket.
    pub lower: Vec<f64>,
    /// Bucket index of every input value, in input order.
    pub assignment: Vec<usize>,
    pub warnings: Vec<String>,
}

impl Buckets {
    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    /// Bucket for a value that was not part of the bucketed set: the first
    /// bucket whose upper edge reaches it, else the last.
    pub fn locate(&self, value: f64) -> usize {
        self.upper
            .iter()
            .position(|&u| value <= u)
            .unwrap_or(self.upper.len() - 1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.len()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Splits values into `n_buckets` equal-frequency buckets by sorted order.
/// Equal values always share a bucket (ties go to the lower one), so fewer
/// buckets than requested may come back.
pub fn bucketize(values: &[f64], n_buckets: usize) -> Result<Buckets> {
    if n_buckets < 2 {
        return Err(Error::invalid("need at least two buckets"));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("no values to bucketize".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("cannot bucketize NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut upper: Vec<f64> = Vec::with_capacity(n_buckets);
    for k in 1..=n_buckets {
        let idx = (k * n).div_ceil(n_buckets).max(1) - 1;
        let edge = sorted[idx];
        if upper.last() != Some(&edge) {
            upper.push(edge);
        }
    }
    let mut warnings = Vec::new();
    if upper.len() < n_buckets {
        let msg = format!(
            "{} distinct bucket edges for {} requested buckets; buckets collapsed",
            upper.len(),
            n_buckets
        );
        warnings.push(msg);
    }
    let mut b = Buckets {
        lower: vec![f64::INFINITY; upper.len()],
        upper,
        assignment: Vec::with_capacity(n),
        warnings,
    };
    for &v in values {
        let k = b.locate(v);
        b.lower[k] = b.lower[k].min(v);
        b.assignment.push(k);
    }
    Ok(b)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho as the Pearson correlation of average ranks. `None` when
/// either side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

fn for_each_permutation(items: &mut [f64], k: usize, f: &mut dyn FnMut(&[f64])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        for_each_permutation(items, k + 1, f);
        items.swap(k, i);
    }
}

/// Two-sided p-value for Spearman's rho: exact over all orderings of `y`
/// up to [`EXACT_PERMUTATION_LIMIT`] points, Student-t approximation above.
pub fn spearman_p_value(x: &[f64], y: &[f64]) -> Option<f64> {
    let observed = spearman(x, y)?;
    let n = x.len();
    if n <= EXACT_PERMUTATION_LIMIT {
        let rx = average_ranks(x);
        let mut ry = average_ranks(y);
        let (mut extreme, mut total) = (0u64, 0u64);
        let threshold = observed.abs() - 1e-12;
        for_each_permutation(&mut ry, 0, &mut |perm| {
            total += 1;
            if pearson(&rx, perm).is_some_and(|r| r.abs() >= threshold) {
                extreme += 1;
            }
        });
        return Some(extreme as f64 / total as f64);
    }
    if observed.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = observed * (df / (1.0 - observed * observed)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationLevel {
    /// Bucket attribute means against bucket F1s.
    #[default]
    Bucket,
    /// Per-unit attribute values against per-unit strict hits (gold units).
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    /// Gold units (entities or sentences) in the bucket.
    pub count: usize,
    pub mean_value: f64,
    pub counts: Counts,
    pub f1: f64,
    /// The bucket holds no gold entities and is left out of the correlation.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketReport {
    pub attribute: AttributeKind,
    pub buckets: Vec<BucketRow>,
    pub spearman_rho: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    pub f1_stddev: f64,
    pub level: CorrelationLevel,
    pub warnings: Vec<String>,
}

impl BucketReport {
    pub fn bucket_f1s(&self) -> Vec<f64> {
        self.buckets.iter().map(|b| b.f1).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttributeOptions {
    pub n_buckets: usize,
    pub level: CorrelationLevel,
}

impl Default for AttributeOptions {
    fn default() -> Self {
        AttributeOptions {
            n_buckets: DEFAULT_BUCKETS,
            level: CorrelationLevel::Bucket,
        }
    }
}

/// Bucketed strict-F1 report for one attribute.
///
/// Entity attributes: a matched prediction counts in its gold span's bucket;
/// an unmatched prediction goes to the bucket of its own attribute value.
/// Sentence attributes: each bucket is scored over its sentences.
pub fn attribute_report(
    kind: AttributeKind,
    gold: &[AnnotatedSentence],
    pred: &[AnnotatedSentence],
    train: &[AnnotatedSentence],
    opts: &AttributeOptions,
) -> Result<BucketReport> {
    if gold.len() != pred.len() {
        return Err(Error::Misaligned {
            index: gold.len().min(pred.len()),
            message: format!("{} gold sentences vs {} predicted", gold.len(), pred.len()),
        });
    }
    let profile = TrainingProfile::build(train, &surface_lengths(&[gold, pred]));
    let units = unit_values(kind, &profile, gold);
    let values: Vec<f64> = units.iter().map(|u| u.value).collect();
    let buckets = bucketize(&values, opts.n_buckets)?;
    let nb = buckets.len();

    let mut counts = vec![Counts::default(); nb];
    let mut gold_units = vec![0usize; nb];
    let mut value_sums = vec![0.0; nb];
    let mut unit_hits = vec![0.0; units.len()];

    if kind.is_sentence_level() {
        for (u, &b) in units.iter().zip(&buckets.assignment) {
            let g = gold[u.sentence].spans();
            let p = pred[u.sentence].spans();
            let m = match_spans(&g, &p, Regime::Strict);
            let tp = m.iter().filter(|x| x.is_some()).count() as u64;
            counts[b].tp += tp;
            counts[b].fn_ += g.len() as u64 - tp;
            counts[b].fp += p.len() as u64 - tp;
            gold_units[b] += g.len();
            value_sums[b] += u.value;
        }
        for (k, u) in units.iter().enumerate() {
            let g = gold[u.sentence].spans();
            let p = pred[u.sentence].spans();
            let m = match_spans(&g, &p, Regime::Strict);
            let tp = m.iter().filter(|x| x.is_some()).count();
            unit_hits[k] = if g.is_empty() { 0.0 } else { tp as f64 / g.len() as f64 };
        }
    } else {
        let mut unit_of: HashMap<(usize, usize, usize), usize> = HashMap::new();
        for (k, u) in units.iter().enumerate() {
            let sp = u.span.as_ref().expect("entity unit");
            unit_of.insert((u.sentence, sp.start, sp.end), k);
        }
        for (i, (gs, ps)) in gold.iter().zip(pred).enumerate() {
            let g = gs.spans();
            let p = ps.spans();
            let m = match_spans(&g, &p, Regime::Strict);
            let mut matched_pred = vec![false; p.len()];
            for (gi, hit) in m.iter().enumerate() {
                let k = unit_of[&(i, g[gi].start, g[gi].end)];
                let b = buckets.assignment[k];
                match hit {
                    Some(pi) => {
                        counts[b].tp += 1;
                        matched_pred[*pi] = true;
                        unit_hits[k] = 1.0;
                    }
                    None => counts[b].fn_ += 1,
                }
            }
            for (pi, sp) in p.iter().enumerate() {
                if !matched_pred[pi] {
                    let v = entity_value(kind, &profile, ps, sp);
                    counts[buckets.locate(v)].fp += 1;
                }
            }
        }
        for (u, &b) in units.iter().zip(&buckets.assignment) {
            gold_units[b] += 1;
            value_sums[b] += u.value;
        }
    }

    let sizes = buckets.sizes();
    let rows: Vec<BucketRow> = (0..nb)
        .map(|b| BucketRow {
            index: b,
            lo: buckets.lower[b],
            hi: buckets.upper[b],
            count: sizes[b],
            mean_value: value_sums[b] / sizes[b] as f64,
            counts: counts[b],
            f1: counts[b].metrics().f1,
            excluded: gold_units[b] == 0,
        })
        .collect();
    let mut warnings = buckets.warnings.clone();
    for r in rows.iter().filter(|r| r.excluded) {
        warnings.push(format!("bucket {} has no gold entities", r.index));
    }
    for w in &warnings {
        log::warn!("{kind}: {w}");
    }

    let included: Vec<&BucketRow> = rows.iter().filter(|r| !r.excluded).collect();
    let f1s: Vec<f64> = included.iter().map(|r| r.f1).collect();
    let (rho, p) = match opts.level {
        CorrelationLevel::Bucket => {
            let means: Vec<f64> = included.iter().map(|r| r.mean_value).collect();
            (spearman(&means, &f1s), spearman_p_value(&means, &f1s))
        }
        CorrelationLevel::Raw => (spearman(&values, &unit_hits), spearman_p_value(&values, &unit_hits)),
    };
    Ok(BucketReport {
        attribute: kind,
        spearman_rho: rho,
        p_value: p,
        significant: p.is_some_and(|p| p <= SIGNIFICANCE_LEVEL),
        f1_stddev: population_std(&f1s),
        buckets: rows,
        level: opts.level,
        warnings,
    })
}

/// `attribute,bucket,lo,hi,count,f1` rows for several reports; F1 as a
/// percentage with one decimal.
pub fn reports_csv(reports: &[BucketReport]) -> String {
    let mut out = String::from("attribute,bucket,lo,hi,count,f1\n");
    for r in reports {
        for b in &r.buckets {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.1}",
                r.attribute,
                b.index,
                b.lo,
                b.hi,
                b.count,
                b.f1 * 100.0
            );
        }
    }
    out
}

/// Per-attribute summary for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeSummary {
    pub attribute: AttributeKind,
    pub spearman_rho: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    pub f1_stddev: f64,
    pub buckets: usize,
}

pub fn summarize(reports: &[BucketReport]) -> BTreeMap<String, AttributeSummary> {
    reports
        .iter()
        .map(|r| {
            (
                r.attribute.code().to_owned(),
                AttributeSummary {
                    attribute: r.attribute,
                    spearman_rho: r.spearman_rho,
                    p_value: r.p_value,
                    significant: r.significant,
                    f1_stddev: r.f1_stddev,
                    buckets: r.buckets.len(),
                },
            )
        })
        .collect()
}
