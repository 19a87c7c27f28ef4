//! NER datasets: HIPE-2022 TSV and two-column CoNLL readers, IOB span
//! extraction with repair, and multilingual merging.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::normalize_long_s;
use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_LABEL_COLUMN: &str = "NE-COARSE-LIT";
pub const OUTSIDE: &str = "O";

/// A token sequence with one IOB label per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    pub language: String,
    pub doc_id: String,
}

impl AnnotatedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        spans_from_iob(&self.labels).spans
    }

    /// Rewrites orphan `I-X` labels to `B-X`, returning how many changed.
    pub fn repair_iob(&mut self) -> usize {
        let extraction = spans_from_iob(&self.labels);
        for r in &extraction.repairs {
            self.labels[r.position] = format!("B-{}", r.entity_type);
        }
        extraction.repairs.len()
    }
}

/// A parsed IOB tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag<'a> {
    Begin(&'a str),
    Inside(&'a str),
    Outside,
}

impl<'a> Tag<'a> {
    /// `_` is what HIPE files carry in unannotated label columns; it reads as
    /// outside.
    pub fn parse(label: &'a str) -> Option<Tag<'a>> {
        match label {
            "O" | "_" | "" => Some(Tag::Outside),
            _ => {
                if let Some(t) = label.strip_prefix("B-") {
                    (!t.is_empty()).then_some(Tag::Begin(t))
                } else if let Some(t) = label.strip_prefix("I-") {
                    (!t.is_empty()).then_some(Tag::Inside(t))
                } else {
                    None
                }
            }
        }
    }
}

/// Half-open token range `[start, end)` carrying an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// An orphan `I-X` that was read as `B-X`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Repair {
    pub position: usize,
    pub entity_type: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpanExtraction {
    pub spans: Vec<EntitySpan>,
    pub repairs: Vec<Repair>,
    /// Positions whose label was not an IOB tag; they read as `O`.
    pub invalid: Vec<usize>,
}

/// Maximal `B-X (I-X)*` runs become spans. An `I-X` following `O` or a
/// different type starts a new span and is logged as a repair.
pub fn spans_from_iob<S: AsRef<str>>(labels: &[S]) -> SpanExtraction {
    let mut out = SpanExtraction::default();
    let mut open: Option<(usize, &str)> = None;
    for (i, label) in labels.iter().enumerate() {
        let tag = Tag::parse(label.as_ref()).unwrap_or_else(|| {
            out.invalid.push(i);
            Tag::Outside
        });
        match tag {
            Tag::Outside => {
                if let Some((s, t)) = open.take() {
                    out.spans.push(EntitySpan::new(s, i, t));
                }
            }
            Tag::Begin(t) => {
                if let Some((s, prev)) = open.take() {
                    out.spans.push(EntitySpan::new(s, i, prev));
                }
                open = Some((i, t));
            }
            Tag::Inside(t) => match open {
                Some((_, prev)) if prev == t => {}
                _ => {
                    if let Some((s, prev)) = open.take() {
                        out.spans.push(EntitySpan::new(s, i, prev));
                    }
                    out.repairs.push(Repair {
                        position: i,
                        entity_type: t.to_owned(),
                    });
                    open = Some((i, t));
                }
            },
        }
    }
    if let Some((s, t)) = open {
        out.spans.push(EntitySpan::new(s, labels.len(), t));
    }
    out
}

/// Inverse of [`spans_from_iob`] for non-overlapping spans.
pub fn spans_to_iob(spans: &[EntitySpan], len: usize) -> Vec<String> {
    let mut labels = vec![OUTSIDE.to_owned(); len];
    for s in spans {
        for (k, label) in labels[s.start..s.end].iter_mut().enumerate() {
            *label = if k == 0 {
                format!("B-{}", s.entity_type)
            } else {
                format!("I-{}", s.entity_type)
            };
        }
    }
    labels
}

/// Counts reported after parsing a file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub sentences: usize,
    pub tokens: usize,
    pub entities: usize,
    pub repairs: usize,
}

#[derive(Debug, Clone)]
pub struct HipeOptions {
    pub column: String,
    pub normalize_long_s: bool,
    /// Language when the file carries no `# hipe2022:language` line.
    pub default_language: String,
}

impl Default for HipeOptions {
    fn default() -> Self {
        HipeOptions {
            column: DEFAULT_LABEL_COLUMN.to_owned(),
            normalize_long_s: false,
            default_language: "und".to_owned(),
        }
    }
}

fn comment_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.trim_start_matches('#').trim_start();
    let rest = rest.strip_prefix(key)?;
    let rest = rest.trim_start().strip_prefix('=')?;
    Some(rest.trim())
}

struct SentenceBuilder {
    out: Vec<AnnotatedSentence>,
    tokens: Vec<String>,
    labels: Vec<String>,
    language: String,
    doc_id: String,
}

impl SentenceBuilder {
    fn flush(&mut self) {
        if self.tokens.is_empty() {
            return;
        }
        self.out.push(AnnotatedSentence {
            tokens: std::mem::take(&mut self.tokens),
            labels: std::mem::take(&mut self.labels),
            language: self.language.clone(),
            doc_id: self.doc_id.clone(),
        });
    }
}

/// Parses HIPE-2022 TSV text.
///
/// Sentences end at blank lines, at `EndOfSentence` in the `MISC` column, at
/// `# segment_iiif_link` segmentation markers and at document boundaries.
pub fn parse_hipe_str(text: &str, path: &Path, opts: &HipeOptions) -> Result<Vec<AnnotatedSentence>> {
    let mut header: Option<Vec<&str>> = None;
    let mut token_col = 0;
    let mut label_col = 0;
    let mut misc_col = None;
    let mut b = SentenceBuilder {
        out: Vec::new(),
        tokens: Vec::new(),
        labels: Vec::new(),
        language: opts.default_language.clone(),
        doc_id: String::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            b.flush();
            continue;
        }
        if line.starts_with('#') {
            if let Some(v) = comment_value(line, "hipe2022:document_id")
                .or_else(|| comment_value(line, "document_id"))
            {
                b.flush();
                b.doc_id = v.to_owned();
            } else if let Some(v) =
                comment_value(line, "hipe2022:language").or_else(|| comment_value(line, "language"))
            {
                b.flush();
                b.language = v.to_owned();
            } else if comment_value(line, "segment_iiif_link").is_some() {
                b.flush();
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let Some(cols) = &header else {
            token_col = fields
                .iter()
                .position(|c| *c == "TOKEN")
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: "TOKEN".into(),
                })?;
            label_col = fields
                .iter()
                .position(|c| *c == opts.column)
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: opts.column.clone(),
                })?;
            misc_col = fields.iter().position(|c| *c == "MISC");
            header = Some(fields);
            continue;
        };
        if fields == *cols {
            continue;
        }
        if fields.len() != cols.len() {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected {} columns, found {}", cols.len(), fields.len()),
            });
        }
        let token = fields[token_col];
        b.tokens.push(if opts.normalize_long_s {
            normalize_long_s(token)
        } else {
            token.to_owned()
        });
        let label = fields[label_col];
        if Tag::parse(label).is_none() {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("not an IOB label: {label:?}"),
            });
        }
        b.labels.push(if label == "_" { OUTSIDE.into() } else { label.to_owned() });
        if misc_col.is_some_and(|m| fields[m].split('|').any(|f| f == "EndOfSentence")) {
            b.flush();
        }
    }
    b.flush();
    Ok(b.out)
}

pub fn parse_hipe_tsv(path: &Path, opts: &HipeOptions) -> Result<Vec<AnnotatedSentence>> {
    parse_hipe_str(&io::read_to_string(path)?, path, opts)
}

/// Parses `token<TAB>tag` lines with blank-line sentence breaks.
pub fn parse_conll_str(
    text: &str,
    path: &Path,
    language: &str,
    normalize: bool,
) -> Result<Vec<AnnotatedSentence>> {
    let mut b = SentenceBuilder {
        out: Vec::new(),
        tokens: Vec::new(),
        labels: Vec::new(),
        language: language.to_owned(),
        doc_id: String::new(),
    };
    let mut doc_index = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            b.flush();
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            b.flush();
            b.doc_id = format!("doc{doc_index}");
            doc_index += 1;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected 2 tab-separated columns, found {}", fields.len()),
            });
        }
        if Tag::parse(fields[1]).is_none() {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("not an IOB label: {:?}", fields[1]),
            });
        }
        b.tokens.push(if normalize {
            normalize_long_s(fields[0])
        } else {
            fields[0].to_owned()
        });
        b.labels.push(fields[1].to_owned());
    }
    b.flush();
    Ok(b.out)
}

pub fn parse_conll(path: &Path, language: &str, normalize: bool) -> Result<Vec<AnnotatedSentence>> {
    parse_conll_str(&io::read_to_string(path)?, path, language, normalize)
}

/// Input flavours recognised by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Hipe,
    Conll,
    Jsonl,
}

impl DatasetFormat {
    /// `.jsonl` files are JSON Lines; files whose first non-comment line
    /// names a `TOKEN` column are HIPE; everything else is CoNLL.
    pub fn detect(path: &Path, text: &str) -> DatasetFormat {
        if path.extension().is_some_and(|e| e == "jsonl" || e == "json") {
            return DatasetFormat::Jsonl;
        }
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'));
        match first {
            Some(l) if l.split('\t').any(|c| c == "TOKEN") => DatasetFormat::Hipe,
            None if text.lines().any(|l| l.starts_with('#')) => DatasetFormat::Hipe,
            _ => DatasetFormat::Conll,
        }
    }
}

pub fn parse_jsonl_str(text: &str, path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: AnnotatedSentence = serde_json::from_str(line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if s.tokens.len() != s.labels.len() || s.tokens.is_empty() {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: "tokens and labels must be non-empty and of equal length".into(),
            });
        }
        out.push(s);
    }
    Ok(out)
}

/// Loads any supported dataset file, detecting its format.
pub fn load_dataset(path: &Path, opts: &HipeOptions) -> Result<Vec<AnnotatedSentence>> {
    let text = io::read_to_string(path)?;
    match DatasetFormat::detect(path, &text) {
        DatasetFormat::Jsonl => parse_jsonl_str(&text, path),
        DatasetFormat::Hipe => parse_hipe_str(&text, path, opts),
        DatasetFormat::Conll => {
            parse_conll_str(&text, path, &opts.default_language, opts.normalize_long_s)
        }
    }
}

pub fn parse_report(sentences: &[AnnotatedSentence]) -> ParseReport {
    let mut r = ParseReport {
        sentences: sentences.len(),
        ..Default::default()
    };
    for s in sentences {
        let ex = spans_from_iob(&s.labels);
        r.tokens += s.tokens.len();
        r.entities += ex.spans.len();
        r.repairs += ex.repairs.len();
    }
    r
}

/// Serializes sentences as HIPE TSV with `TOKEN`, the label column and `MISC`.
/// Sentences are separated by blank lines.
pub fn to_hipe_tsv(sentences: &[AnnotatedSentence], column: &str) -> String {
    let mut out = format!("TOKEN\t{column}\tMISC\n");
    let mut doc: Option<(&str, &str)> = None;
    for s in sentences {
        let key = (s.doc_id.as_str(), s.language.as_str());
        if doc != Some(key) {
            let _ = writeln!(out, "# hipe2022:document_id = {}", s.doc_id);
            let _ = writeln!(out, "# hipe2022:language = {}", s.language);
            doc = Some(key);
        }
        for (t, l) in s.tokens.iter().zip(&s.labels) {
            let _ = writeln!(out, "{t}\t{l}\t_");
        }
        out.push('\n');
    }
    out
}

pub fn to_jsonl(sentences: &[AnnotatedSentence]) -> Result<String> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, sentences: &[AnnotatedSentence]) -> Result<()> {
    io::write_string_atomic(path, &to_jsonl(sentences)?)
}

/// Entity types occurring in a dataset.
pub fn entity_types(sentences: &[AnnotatedSentence]) -> BTreeSet<String> {
    sentences
        .iter()
        .flat_map(|s| s.spans().into_iter().map(|sp| sp.entity_type))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Merged {
    pub sentences: Vec<AnnotatedSentence>,
    /// Entity types missing from some of the inputs.
    pub warnings: Vec<String>,
}

/// Concatenates datasets for one-model training, ordered by `(language,
/// doc_id)` with original order kept inside a document.
///
/// Inventories are unioned; types absent from some inputs produce warnings.
/// Two types that differ only in letter case are a conflict.
pub fn merge_multilingual(datasets: &[Vec<AnnotatedSentence>]) -> Result<Merged> {
    if datasets.len() == 1 {
        return Ok(Merged {
            sentences: datasets[0].clone(),
            warnings: Vec::new(),
        });
    }
    let inventories: Vec<BTreeSet<String>> = datasets.iter().map(|d| entity_types(d)).collect();
    let union: BTreeSet<String> = inventories.iter().flatten().cloned().collect();

    let mut by_folded: BTreeMap<String, Vec<&String>> = BTreeMap::new();
    for t in &union {
        by_folded.entry(t.to_lowercase()).or_default().push(t);
    }
    let conflicts: Vec<String> = by_folded
        .values()
        .filter(|v| v.len() > 1)
        .map(|v| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" vs "))
        .collect();
    if !conflicts.is_empty() {
        return Err(Error::LabelConflict(conflicts.join(", ")));
    }

    let mut warnings = Vec::new();
    for (i, inv) in inventories.iter().enumerate() {
        let missing: Vec<&str> = union.difference(inv).map(String::as_str).collect();
        if !missing.is_empty() {
            let lang = datasets[i]
                .first()
                .map(|s| s.language.as_str())
                .unwrap_or("?");
            let msg = format!(
                "dataset {i} ({lang}) has no entities of type {}",
                missing.join(", ")
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let mut sentences: Vec<AnnotatedSentence> = datasets.iter().flatten().cloned().collect();
    sentences.sort_by(|a, b| (&a.language, &a.doc_id).cmp(&(&b.language, &b.doc_id)));
    Ok(Merged { sentences, warnings })
}

/// Sentences grouped by language tag.
pub fn split_by_language(sentences: &[AnnotatedSentence]) -> BTreeMap<String, Vec<AnnotatedSentence>> {
    let mut out: BTreeMap<String, Vec<AnnotatedSentence>> = BTreeMap::new();
    for s in sentences {
        out.entry(s.language.clone()).or_default().push(s.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn spans_basic() {
        let ex = spans_from_iob(&["B-pers", "I-pers", "O"]);
        assert_eq!(ex.spans, [EntitySpan::new(0, 2, "pers")]);
        assert!(ex.repairs.is_empty());
        assert!(spans_from_iob(&["O", "O"]).spans.is_empty());
    }

    #[test]
    fn orphan_inside_is_repaired() {
        let ex = spans_from_iob(&["O", "I-loc"]);
        assert_eq!(ex.spans, [EntitySpan::new(1, 2, "loc")]);
        assert_eq!(ex.repairs.len(), 1);
        let ex = spans_from_iob(&["B-pers", "I-loc", "I-loc"]);
        assert_eq!(ex.spans, [EntitySpan::new(0, 1, "pers"), EntitySpan::new(1, 3, "loc")]);
        assert_eq!(ex.repairs[0].position, 1);
    }

    #[test]
    fn adjacent_begins_split() {
        let ex = spans_from_iob(&["B-loc", "B-loc", "I-loc"]);
        assert_eq!(ex.spans, [EntitySpan::new(0, 1, "loc"), EntitySpan::new(1, 3, "loc")]);
    }

    #[test]
    fn repair_rewrites_labels() {
        let mut s = AnnotatedSentence {
            tokens: labels(&["a", "b"]),
            labels: labels(&["O", "I-loc"]),
            language: "de".into(),
            doc_id: "d".into(),
        };
        assert_eq!(s.repair_iob(), 1);
        assert_eq!(s.labels, ["O", "B-loc"]);
        assert_eq!(s.repair_iob(), 0);
    }

    const HIPE: &str = "TOKEN\tNE-COARSE-LIT\tNE-COARSE-METO\tMISC\n\
# hipe2022:document_id = doc-1\n\
# hipe2022:language = de\n\
Herr\tO\tO\t_\n\
Johann\tB-pers\tO\t_\n\
Meyer\tI-pers\tO\tEndOfSentence\n\
# segment_iiif_link = x\n\
in\tO\tO\t_\n\
Waſſerburg\tB-loc\tO\t_\n";

    #[test]
    fn hipe_fixture() {
        let path = Path::new("fixture.tsv");
        let out = parse_hipe_str(HIPE, path, &HipeOptions::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].tokens, ["Herr", "Johann", "Meyer"]);
        assert_eq!(out[0].spans(), [EntitySpan::new(1, 3, "pers")]);
        assert_eq!(out[0].language, "de");
        assert_eq!(out[0].doc_id, "doc-1");
        assert_eq!(out[1].tokens[1], "Waſſerburg");

        let opts = HipeOptions {
            normalize_long_s: true,
            ..Default::default()
        };
        let norm = parse_hipe_str(HIPE, path, &opts).unwrap();
        assert_eq!(norm[1].tokens[1], "Wasserburg");
        assert_eq!(parse_report(&norm), parse_report(&out));
    }

    #[test]
    fn hipe_alternative_column() {
        let opts = HipeOptions {
            column: "NE-COARSE-METO".into(),
            ..Default::default()
        };
        let out = parse_hipe_str(HIPE, Path::new("f"), &opts).unwrap();
        assert!(out.iter().all(|s| s.spans().is_empty()));
    }

    #[test]
    fn hipe_errors() {
        let opts = HipeOptions {
            column: "NE-FINE-LIT".into(),
            ..Default::default()
        };
        assert!(matches!(
            parse_hipe_str(HIPE, Path::new("f"), &opts),
            Err(Error::MissingColumn { .. })
        ));
        let ragged = "TOKEN\tNE-COARSE-LIT\na\tO\nb\n";
        match parse_hipe_str(ragged, Path::new("f"), &HipeOptions::default()) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comment_only_file_is_empty() {
        let out = parse_hipe_str("# just a comment\n# another\n", Path::new("f"), &HipeOptions::default());
        assert!(out.unwrap().is_empty());
    }

    #[test]
    fn conll_reader() {
        let text = "-DOCSTART-\tO\n\nParis\tB-loc\nist\tO\n\nBerlin\tB-loc\n";
        let out = parse_conll_str(text, Path::new("f"), "de", false).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].tokens, ["Berlin"]);
        assert!(parse_conll_str("a b\n", Path::new("f"), "de", false).is_err());
    }

    #[test]
    fn format_detection() {
        assert_eq!(DatasetFormat::detect(Path::new("x.tsv"), HIPE), DatasetFormat::Hipe);
        assert_eq!(DatasetFormat::detect(Path::new("x.tsv"), "a\tO\n"), DatasetFormat::Conll);
        assert_eq!(DatasetFormat::detect(Path::new("x.jsonl"), ""), DatasetFormat::Jsonl);
    }

    #[test]
    fn serialize_parse_round_trip() {
        let path = Path::new("f");
        let first = parse_hipe_str(HIPE, path, &HipeOptions::default()).unwrap();
        let text = to_hipe_tsv(&first, DEFAULT_LABEL_COLUMN);
        let again = parse_hipe_str(&text, path, &HipeOptions::default()).unwrap();
        assert_eq!(first, again);
        let j = to_jsonl(&first).unwrap();
        assert_eq!(parse_jsonl_str(&j, path).unwrap(), first);
    }

    fn sent(lang: &str, doc: &str, labels_: &[&str]) -> AnnotatedSentence {
        AnnotatedSentence {
            tokens: labels_.iter().map(|_| "t".to_string()).collect(),
            labels: labels(labels_),
            language: lang.into(),
            doc_id: doc.into(),
        }
    }

    #[test]
    fn merge_keeps_language_tags() {
        let de = vec![sent("de", "b", &["B-pers"]), sent("de", "a", &["B-work"])];
        let fr = vec![sent("fr", "x", &["O"]), sent("fr", "x", &["B-pers"]), sent("fr", "y", &["O"])];
        let m = merge_multilingual(&[fr.clone(), de.clone()]).unwrap();
        assert_eq!(m.sentences.len(), 5);
        assert_eq!(m.sentences[0], de[1]);
        assert_eq!(m.sentences[1], de[0]);
        assert_eq!(&m.sentences[2..4], &fr[..2]);
        assert_eq!(m.warnings.len(), 1);
        assert!(m.warnings[0].contains("work"));

        let single = merge_multilingual(std::slice::from_ref(&de)).unwrap();
        assert_eq!(single.sentences, de);
    }

    #[test]
    fn merge_rejects_case_conflicts() {
        let a = vec![sent("de", "a", &["B-pers"])];
        let b = vec![sent("fr", "a", &["B-PERS"])];
        assert!(matches!(merge_multilingual(&[a, b]), Err(Error::LabelConflict(_))));
    }
}
