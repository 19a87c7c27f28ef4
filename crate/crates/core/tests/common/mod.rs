#![allow(dead_code)]

use std::path::PathBuf;

use histoner_core::harness::LanguageData;
use histoner_core::ner::{AnnotatedSentence, EntitySpan};
use histoner_core::wordpiece::{train_vocab, TrainerConfig, WordpieceVocab};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn sent(language: &str, doc: &str, tokens: &str, labels: &str) -> AnnotatedSentence {
    let tokens: Vec<String> = tokens.split_whitespace().map(str::to_owned).collect();
    let labels: Vec<String> = labels.split_whitespace().map(str::to_owned).collect();
    assert_eq!(tokens.len(), labels.len(), "{tokens:?}");
    AnnotatedSentence {
        tokens,
        labels,
        language: language.into(),
        doc_id: doc.into(),
    }
}

const PERSONS: [&str; 8] = ["Ajax", "Hector", "Priam", "Helen", "Paris", "Achilles", "Nestor", "Odysseus"];
const PLACES: [&str; 5] = ["Troy", "Sparta", "Athens", "Ithaca", "Argos"];

/// Twenty sentences a linear tagger can memorize.
pub fn separable_fixture() -> Vec<AnnotatedSentence> {
    let mut out = Vec::new();
    for i in 0..20 {
        let p = PERSONS[i % PERSONS.len()];
        let q = PERSONS[(i + 3) % PERSONS.len()];
        let l = PLACES[i % PLACES.len()];
        let s = match i % 4 {
            0 => sent("en", "sep", &format!("{p} sailed to {l} ."), "B-pers O O B-loc O"),
            1 => sent("en", "sep", &format!("{p} met {q} near Mount Ida"), "B-pers O B-pers O B-loc I-loc"),
            2 => sent("en", "sep", &format!("In {l} , {p} wept"), "O B-loc O B-pers O"),
            _ => sent("en", "sep", &format!("the council of {l} heard {p}"), "O B-org I-org I-org O B-pers"),
        };
        out.push(s);
    }
    out
}

/// Two languages sharing entity names and label structure, with
/// language-specific function words. One annotation convention differs: the
/// ship name in a context identical across languages is `org` in English and
/// `loc` in German, which a merged model cannot satisfy for both.
pub fn transfer_fixture() -> Vec<LanguageData> {
    let frames: [(&str, [&str; 4], &str); 2] = [
        (
            "en",
            ["{p} sailed to {l}", "{p} met {q} in {l}", "the people of {l} praised {p}", "Argo !"],
            "B-org O",
        ),
        (
            "de",
            ["{p} segelte nach {l}", "{p} traf {q} in {l}", "das Volk von {l} lobte {p}", "Argo !"],
            "B-loc O",
        ),
    ];
    frames
        .iter()
        .map(|(lang, templates, ship)| {
            let labels = ["B-pers O O B-loc", "B-pers O B-pers O B-loc", "O O O B-loc O B-pers", ship];
            let make = |i: usize| {
                let k = i % 4;
                let text = templates[k]
                    .replace("{p}", PERSONS[i % PERSONS.len()])
                    .replace("{q}", PERSONS[(i + 5) % PERSONS.len()])
                    .replace("{l}", PLACES[(i * 2) % PLACES.len()]);
                sent(lang, &format!("{lang}-{i}"), &text, labels[k])
            };
            LanguageData {
                language: lang.to_string(),
                train: (0..16).map(make).collect(),
                dev: (16..24).map(make).collect(),
            }
        })
        .collect()
}

pub fn vocab_for(sentences: &[AnnotatedSentence], size: usize) -> WordpieceVocab {
    let texts: Vec<String> = sentences.iter().map(|s| s.tokens.join(" ")).collect();
    train_vocab(
        texts.iter().map(String::as_str),
        &TrainerConfig {
            vocab_size: size,
            min_frequency: 1,
        },
    )
    .unwrap()
}

/// Maximum one-to-one matching between gold and predicted spans where
/// `ok(g, p)` allows a pair, by exhaustive search.
pub fn max_matching(gold: &[EntitySpan], pred: &[EntitySpan], ok: &dyn Fn(&EntitySpan, &EntitySpan) -> bool) -> usize {
    fn go(
        i: usize,
        gold: &[EntitySpan],
        pred: &[EntitySpan],
        used: &mut Vec<bool>,
        ok: &dyn Fn(&EntitySpan, &EntitySpan) -> bool,
    ) -> usize {
        if i == gold.len() {
            return 0;
        }
        let mut best = go(i + 1, gold, pred, used, ok);
        for j in 0..pred.len() {
            if !used[j] && ok(&gold[i], &pred[j]) {
                used[j] = true;
                best = best.max(1 + go(i + 1, gold, pred, used, ok));
                used[j] = false;
            }
        }
        best
    }
    go(0, gold, pred, &mut vec![false; pred.len()], ok)
}

pub fn fuzzy_ok(g: &EntitySpan, p: &EntitySpan) -> bool {
    g.entity_type == p.entity_type && g.start < p.end && p.start < g.end
}

pub fn strict_ok(g: &EntitySpan, p: &EntitySpan) -> bool {
    g == p
}

/// Spearman's rho from the tie-corrected rank-difference formula
/// `(Sx + Sy - Σd²) / (2·sqrt(Sx·Sy))` with `S = (n³ - n)/12 - Σ(t³ - t)/12`.
pub fn spearman_formula(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> (Vec<f64>, f64) {
        let n = v.len();
        let mut r = vec![0.0; n];
        let mut ties = 0.0;
        for i in 0..n {
            let less = v.iter().filter(|&&w| w < v[i]).count() as f64;
            let equal = v.iter().filter(|&&w| w == v[i]).count() as f64;
            r[i] = less + (equal + 1.0) / 2.0;
        }
        let mut seen: Vec<f64> = Vec::new();
        for &a in v {
            if !seen.contains(&a) {
                seen.push(a);
                let t = v.iter().filter(|&&w| w == a).count() as f64;
                ties += (t * t * t - t) / 12.0;
            }
        }
        (r, ties)
    }
    let n = x.len() as f64;
    let (rx, tx) = ranks(x);
    let (ry, ty) = ranks(y);
    let base = (n * n * n - n) / 12.0;
    let sx = base - tx;
    let sy = base - ty;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    (sx + sy - d2) / (2.0 * (sx * sy).sqrt())
}
