//! Entity-level precision, recall and F1 under strict and fuzzy matching.
//!
//! Strict: a prediction is correct when a gold span has the same start, end
//! and type. Fuzzy: same type and at least one shared token. Both regimes
//! match one-to-one; fuzzy matching walks gold spans in reading order and
//! takes the first unmatched overlapping prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ner::{AnnotatedSentence, EntitySpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Strict,
    Fuzzy,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::Strict, Regime::Fuzzy];
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Strict => "strict",
            Regime::Fuzzy => "fuzzy",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Regime::Strict),
            "fuzzy" => Ok(Regime::Fuzzy),
            _ => Err(Error::invalid(format!("unknown regime {s:?}"))),
        }
    }
}

/// True/false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn gold(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn predicted(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_counts(*self)
    }
}

/// Scores as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl Metrics {
    pub fn from_counts(c: Counts) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.tp, c.predicted());
        let recall = ratio(c.tp, c.gold());
        Metrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
            counts: c,
        }
    }
}

/// For each gold span, the index of the prediction matched to it.
pub fn match_spans(gold: &[EntitySpan], pred: &[EntitySpan], regime: Regime) -> Vec<Option<usize>> {
    let mut gold_order: Vec<usize> = (0..gold.len()).collect();
    gold_order.sort_by_key(|&i| (gold[i].start, gold[i].end));
    let mut pred_order: Vec<usize> = (0..pred.len()).collect();
    pred_order.sort_by_key(|&i| (pred[i].start, pred[i].end));

    let mut used = vec![false; pred.len()];
    let mut out = vec![None; gold.len()];
    for gi in gold_order {
        let g = &gold[gi];
        let hit = pred_order.iter().copied().find(|&pi| {
            let p = &pred[pi];
            !used[pi]
                && p.entity_type == g.entity_type
                && match regime {
                    Regime::Strict => p.start == g.start && p.end == g.end,
                    Regime::Fuzzy => p.overlaps(g),
                }
        });
        if let Some(pi) = hit {
            used[pi] = true;
            out[gi] = Some(pi);
        }
    }
    out
}

/// Per-type counts for one sentence.
pub fn count_sentence(
    gold: &[EntitySpan],
    pred: &[EntitySpan],
    regime: Regime,
) -> BTreeMap<String, Counts> {
    let matches = match_spans(gold, pred, regime);
    let mut matched_pred = vec![false; pred.len()];
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (g, m) in gold.iter().zip(&matches) {
        let c = per_type.entry(g.entity_type.clone()).or_default();
        match m {
            Some(pi) => {
                c.tp += 1;
                matched_pred[*pi] = true;
            }
            None => c.fn_ += 1,
        }
    }
    for (p, matched) in pred.iter().zip(matched_pred) {
        if !matched {
            per_type.entry(p.entity_type.clone()).or_default().fp += 1;
        }
    }
    per_type
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub micro: Metrics,
    pub per_type: BTreeMap<String, Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gold_entities: u64,
    pub pred_entities: u64,
    pub regimes: Vec<RegimeReport>,
}

impl EvalReport {
    pub fn regime(&self, regime: Regime) -> Option<&RegimeReport> {
        self.regimes.iter().find(|r| r.regime == regime)
    }

    /// `regime,type,precision,recall,f1,tp,fp,fn` with scores as percentages
    /// to one decimal. The micro row uses type `ALL`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("regime,type,precision,recall,f1,tp,fp,fn\n");
        for r in &self.regimes {
            let rows = std::iter::once(("ALL", &r.micro))
                .chain(r.per_type.iter().map(|(t, m)| (t.as_str(), m)));
            for (t, m) in rows {
                let _ = writeln!(
                    out,
                    "{},{},{:.1},{:.1},{:.1},{},{},{}",
                    r.regime,
                    t,
                    m.precision * 100.0,
                    m.recall * 100.0,
                    m.f1 * 100.0,
                    m.counts.tp,
                    m.counts.fp,
                    m.counts.fn_
                );
            }
        }
        out
    }
}

fn check_alignment(gold: &[AnnotatedSentence], pred: &[AnnotatedSentence]) -> Result<()> {
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.tokens.len() != p.tokens.len() {
            return Err(Error::Misaligned {
                index: i,
                message: format!("{} gold tokens vs {} predicted", g.tokens.len(), p.tokens.len()),
            });
        }
        if let Some(k) = g.tokens.iter().zip(&p.tokens).position(|(a, b)| a != b) {
            return Err(Error::Misaligned {
                index: i,
                message: format!("token {k}: {:?} vs {:?}", g.tokens[k], p.tokens[k]),
            });
        }
    }
    if gold.len() != pred.len() {
        return Err(Error::Misaligned {
            index: gold.len().min(pred.len()),
            message: format!("{} gold sentences vs {} predicted", gold.len(), pred.len()),
        });
    }
    Ok(())
}

/// Scores pre-extracted spans, one list per sentence on each side.
pub fn score_spans(
    gold: &[Vec<EntitySpan>],
    pred: &[Vec<EntitySpan>],
    regime: Regime,
) -> RegimeReport {
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        for (t, c) in count_sentence(g, p, regime) {
            per_type.entry(t).or_default().add(&c);
        }
    }
    let mut micro = Counts::default();
    for c in per_type.values() {
        micro.add(c);
    }
    RegimeReport {
        regime,
        micro: micro.metrics(),
        per_type: per_type.into_iter().map(|(t, c)| (t, c.metrics())).collect(),
    }
}

/// Scores sentence-aligned datasets under the given regimes.
pub fn score(
    gold: &[AnnotatedSentence],
    pred: &[AnnotatedSentence],
    regimes: &[Regime],
) -> Result<EvalReport> {
    check_alignment(gold, pred)?;
    let gold_spans: Vec<Vec<EntitySpan>> = gold.iter().map(AnnotatedSentence::spans).collect();
    let pred_spans: Vec<Vec<EntitySpan>> = pred.iter().map(AnnotatedSentence::spans).collect();
    Ok(EvalReport {
        gold_entities: gold_spans.iter().map(|s| s.len() as u64).sum(),
        pred_entities: pred_spans.iter().map(|s| s.len() as u64).sum(),
        regimes: regimes
            .iter()
            .map(|&r| score_spans(&gold_spans, &pred_spans, r))
            .collect(),
    })
}

/// Strict micro F1 in `[0, 1]`.
pub fn strict_micro_f1(gold: &[AnnotatedSentence], pred: &[AnnotatedSentence]) -> Result<f64> {
    Ok(score(gold, pred, &[Regime::Strict])?.regimes[0].micro.f1)
}

/// One row of a report difference, in percentage points (`a - b`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffRow {
    pub regime: Regime,
    pub entity_type: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Cell-wise `a - b` in percentage points. Types missing on one side count
/// as zero scores there.
pub fn report_diff(a: &EvalReport, b: &EvalReport) -> Result<Vec<DiffRow>> {
    let mut rows = Vec::new();
    for ra in &a.regimes {
        let rb = b.regime(ra.regime).ok_or_else(|| {
            Error::invalid(format!("second report has no {} scores", ra.regime))
        })?;
        let diff = |entity_type: &str, x: &Metrics, y: &Metrics| DiffRow {
            regime: ra.regime,
            entity_type: entity_type.to_owned(),
            precision: (x.precision - y.precision) * 100.0,
            recall: (x.recall - y.recall) * 100.0,
            f1: (x.f1 - y.f1) * 100.0,
        };
        rows.push(diff("ALL", &ra.micro, &rb.micro));
        let types: BTreeSet<&String> = ra.per_type.keys().chain(rb.per_type.keys()).collect();
        let zero = Metrics::default();
        for t in types {
            rows.push(diff(
                t,
                ra.per_type.get(t).unwrap_or(&zero),
                rb.per_type.get(t).unwrap_or(&zero),
            ));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(s: usize, e: usize, t: &str) -> EntitySpan {
        EntitySpan::new(s, e, t)
    }

    #[test]
    fn overlapping_boundary_is_fuzzy_only() {
        let gold = vec![vec![sp(0, 2, "pers")]];
        let pred = vec![vec![sp(1, 3, "pers")]];
        assert_eq!(score_spans(&gold, &pred, Regime::Strict).micro.f1, 0.0);
        assert_eq!(score_spans(&gold, &pred, Regime::Fuzzy).micro.f1, 1.0);
    }

    #[test]
    fn wrong_type_counts_against_both_types() {
        let gold = vec![vec![sp(0, 2, "pers"), sp(4, 5, "loc")]];
        let pred = vec![vec![sp(0, 2, "pers"), sp(4, 5, "org")]];
        let r = score_spans(&gold, &pred, Regime::Strict);
        assert_eq!(r.micro.precision, 0.5);
        assert_eq!(r.micro.recall, 0.5);
        assert_eq!(r.micro.f1, 0.5);
        assert_eq!(r.per_type["loc"].recall, 0.0);
        assert_eq!(r.per_type["org"].counts, Counts { tp: 0, fp: 1, fn_: 0 });
    }

    #[test]
    fn one_prediction_cannot_match_two_gold_spans() {
        let gold = vec![vec![sp(0, 1, "loc"), sp(1, 2, "loc")]];
        let pred = vec![vec![sp(0, 2, "loc")]];
        let r = score_spans(&gold, &pred, Regime::Fuzzy);
        assert_eq!(r.micro.counts, Counts { tp: 1, fp: 0, fn_: 1 });
    }

    #[test]
    fn empty_inputs_give_zero_scores() {
        let r = score_spans(&[vec![]], &[vec![]], Regime::Strict);
        assert_eq!(r.micro, Metrics::default());
    }

    #[test]
    fn misalignment_names_the_sentence() {
        let s = |toks: &[&str]| AnnotatedSentence {
            tokens: toks.iter().map(|t| t.to_string()).collect(),
            labels: vec!["O".into(); toks.len()],
            language: "de".into(),
            doc_id: "d".into(),
        };
        let gold = vec![s(&["a"]), s(&["b", "c"])];
        let pred = vec![s(&["a"]), s(&["b", "x"])];
        match score(&gold, &pred, &[Regime::Strict]) {
            Err(Error::Misaligned { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        assert!(score(&gold, &gold[..1], &[Regime::Strict]).is_err());
    }

    fn report_with_f1(f1: f64) -> EvalReport {
        EvalReport {
            gold_entities: 0,
            pred_entities: 0,
            regimes: vec![RegimeReport {
                regime: Regime::Strict,
                micro: Metrics { f1, ..Default::default() },
                per_type: BTreeMap::new(),
            }],
        }
    }

    #[test]
    fn diff_in_percentage_points() {
        let d = report_diff(&report_with_f1(0.8668), &report_with_f1(0.8621)).unwrap();
        assert!((d[0].f1 - 0.47).abs() < 1e-9);
        let d = report_diff(&report_with_f1(0.8485), &report_with_f1(0.8498)).unwrap();
        assert!((d[0].f1 + 0.13).abs() < 1e-9);
        let a = report_with_f1(0.5);
        assert!(report_diff(&a, &a).unwrap().iter().all(|r| r.f1 == 0.0));
    }

    #[test]
    fn csv_formats_percentages() {
        let gold = vec![vec![sp(0, 1, "loc")]];
        let r = EvalReport {
            gold_entities: 1,
            pred_entities: 1,
            regimes: vec![score_spans(&gold, &gold, Regime::Strict)],
        };
        assert_eq!(
            r.to_csv(),
            "regime,type,precision,recall,f1,tp,fp,fn\nstrict,ALL,100.0,100.0,100.0,1,0,0\nstrict,loc,100.0,100.0,100.0,1,0,0\n"
        );
    }
}
