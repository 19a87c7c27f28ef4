//! Deterministic synthetic inputs for the throughput benchmarks.

use histoner_core::ner::AnnotatedSentence;

const STEMS: [&str; 16] = [
    "zeitung", "regierung", "ſtadt", "bürger", "kaiſer", "verſammlung", "handel", "eiſenbahn",
    "gemeinde", "kirche", "schule", "armee", "provinz", "geſetz", "markt", "hafen",
];
const SUFFIXES: [&str; 6] = ["", "en", "es", "ern", "lich", "ſchaft"];
const NAMES: [&str; 8] = ["Bismarck", "Moltke", "Wien", "Berlin", "Goethe", "Zürich", "Bern", "Paris"];

/// Small multiplicative generator; enough to vary inputs without a dependency.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self, n: usize) -> usize {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 33) % n as u64) as usize
    }
}

/// Roughly `words` whitespace-separated words of newspaper-like text, one
/// sentence per line.
pub fn text(words: usize, seed: u64) -> String {
    let mut rng = Lcg(seed);
    let mut out = String::with_capacity(words * 9);
    for i in 0..words {
        if rng.next(10) == 0 {
            out.push_str(NAMES[rng.next(NAMES.len())]);
        } else {
            out.push_str(STEMS[rng.next(STEMS.len())]);
            out.push_str(SUFFIXES[rng.next(SUFFIXES.len())]);
        }
        out.push(if i % 14 == 13 { '\n' } else { ' ' });
    }
    out
}

/// `n` labelled sentences; names carry `B-pers` or `B-loc`.
pub fn sentences(n: usize, seed: u64) -> Vec<AnnotatedSentence> {
    let mut rng = Lcg(seed);
    (0..n)
        .map(|i| {
            let len = 6 + rng.next(20);
            let mut tokens = Vec::with_capacity(len);
            let mut labels = Vec::with_capacity(len);
            for _ in 0..len {
                if rng.next(6) == 0 {
                    let k = rng.next(NAMES.len());
                    tokens.push(NAMES[k].to_owned());
                    labels.push(if k.is_multiple_of(2) { "B-pers" } else { "B-loc" }.to_owned());
                } else {
                    tokens.push(STEMS[rng.next(STEMS.len())].to_owned());
                    labels.push("O".to_owned());
                }
            }
            AnnotatedSentence {
                tokens,
                labels,
                language: "de".into(),
                doc_id: format!("doc{}", i / 20),
            }
        })
        .collect()
}

/// Copies `gold` with every `every`-th entity label turned into `O`.
pub fn degrade(gold: &[AnnotatedSentence], every: usize) -> Vec<AnnotatedSentence> {
    let mut k = 0;
    gold.iter()
        .map(|s| {
            let mut s = s.clone();
            for l in &mut s.labels {
                if l != "O" {
                    k += 1;
                    if k % every == 0 {
                        *l = "O".into();
                    }
                }
            }
            s
        })
        .collect()
}
