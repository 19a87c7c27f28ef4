mod common;

use std::path::Path;

use proptest::prelude::*;

use histoner_core::attr::{self, bucketize, population_std, spearman};
use histoner_core::ner::{self, spans_from_iob, spans_to_iob, AnnotatedSentence, HipeOptions};
use histoner_core::scorer::{self, match_spans, Regime};

use common::{fuzzy_ok, max_matching, strict_ok};

fn label_seq(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["O", "O", "B-pers", "I-pers", "B-loc", "I-loc"]), len)
        .prop_map(|v| v.into_iter().map(str::to_owned).collect())
}

fn sentence(labels: Vec<String>) -> AnnotatedSentence {
    AnnotatedSentence {
        tokens: (0..labels.len()).map(|i| format!("t{i}")).collect(),
        labels,
        language: "en".into(),
        doc_id: "d".into(),
    }
}

fn aligned_pair() -> impl Strategy<Value = (Vec<AnnotatedSentence>, Vec<AnnotatedSentence>)> {
    prop::collection::vec((1usize..9).prop_flat_map(|n| (label_seq(n..n + 1), label_seq(n..n + 1))), 1..12)
        .prop_map(|pairs| pairs.into_iter().map(|(g, p)| (sentence(g), sentence(p))).unzip())
}

proptest! {
    #[test]
    fn span_extraction_inverts_iob_rendering(labels in label_seq(0..15)) {
        let spans = spans_from_iob(&labels).spans;
        let rendered = spans_to_iob(&spans, labels.len());
        prop_assert_eq!(&spans_from_iob(&rendered).spans, &spans);
        prop_assert!(spans_from_iob(&rendered).repairs.is_empty());
        for w in spans.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
    }

    #[test]
    fn hipe_rendering_round_trips(sents in prop::collection::vec(label_seq(1..8), 1..6)) {
        let sentences: Vec<AnnotatedSentence> = sents.into_iter().map(sentence).collect();
        let text = ner::to_hipe_tsv(&sentences, "NE-COARSE-LIT");
        let back = ner::parse_hipe_str(&text, Path::new("mem.tsv"), &HipeOptions::default()).unwrap();
        prop_assert_eq!(back.len(), sentences.len());
        for (a, b) in back.iter().zip(&sentences) {
            prop_assert_eq!(&a.tokens, &b.tokens);
            prop_assert_eq!(&a.labels, &b.labels);
        }
    }

    #[test]
    fn strict_never_exceeds_fuzzy((gold, pred) in aligned_pair()) {
        let r = scorer::score(&gold, &pred, &Regime::ALL).unwrap();
        let s = &r.regime(Regime::Strict).unwrap().micro;
        let f = &r.regime(Regime::Fuzzy).unwrap().micro;
        prop_assert!(s.counts.tp <= f.counts.tp);
        prop_assert!(s.f1 <= f.f1 + 1e-12);
        for m in [s, f] {
            for v in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn swapping_sides_swaps_precision_and_recall((gold, pred) in aligned_pair()) {
        for regime in Regime::ALL {
            let a = &scorer::score(&gold, &pred, &[regime]).unwrap().regimes[0].micro;
            let b = &scorer::score(&pred, &gold, &[regime]).unwrap().regimes[0].micro;
            prop_assert_eq!(a.counts.tp, b.counts.tp);
            prop_assert!((a.precision - b.recall).abs() < 1e-12);
            prop_assert!((a.recall - b.precision).abs() < 1e-12);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        }
    }

    #[test]
    fn self_scoring_is_perfect((gold, _) in aligned_pair()) {
        let r = scorer::score(&gold, &gold, &Regime::ALL).unwrap();
        for rr in &r.regimes {
            prop_assert_eq!(rr.micro.counts.fp + rr.micro.counts.fn_, 0);
        }
    }

    #[test]
    fn greedy_matching_is_maximum(g in label_seq(1..10), p in label_seq(1..10)) {
        let n = g.len().min(p.len());
        let gs = spans_from_iob(&g[..n]).spans;
        let ps = spans_from_iob(&p[..n]).spans;
        prop_assume!(gs.len() <= 4 && ps.len() <= 4);
        let fuzzy = match_spans(&gs, &ps, Regime::Fuzzy).iter().flatten().count();
        let strict = match_spans(&gs, &ps, Regime::Strict).iter().flatten().count();
        prop_assert_eq!(fuzzy, max_matching(&gs, &ps, &fuzzy_ok));
        prop_assert_eq!(strict, max_matching(&gs, &ps, &strict_ok));
    }

    #[test]
    fn fixing_a_prediction_never_lowers_strict_f1((gold, pred) in aligned_pair(), k in any::<prop::sample::Index>()) {
        let before = scorer::strict_micro_f1(&gold, &pred).unwrap();
        let mut fixed = pred.clone();
        let i = k.index(fixed.len());
        fixed[i].labels = gold[i].labels.clone();
        let after = scorer::strict_micro_f1(&gold, &fixed).unwrap();
        prop_assert!(after + 1e-12 >= before, "{before} -> {after}");
    }
}

proptest! {
    #[test]
    fn buckets_partition_in_value_order(values in prop::collection::vec(0u8..12, 1..60), n in 2usize..7) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let b = bucketize(&v, n).unwrap();
        prop_assert!(b.len() <= n);
        prop_assert_eq!(b.sizes().iter().sum::<usize>(), v.len());
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] <= v[j] {
                    prop_assert!(b.assignment[i] <= b.assignment[j]);
                }
            }
        }
        for &e in &b.upper {
            prop_assert!(v.contains(&e));
        }
        prop_assert!(b.upper.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rho_ignores_increasing_transforms(
        x in prop::collection::vec(-50i32..50, 2..10),
        y in prop::collection::vec(-50i32..50, 2..10),
    ) {
        let n = x.len().min(y.len());
        let x: Vec<f64> = x[..n].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = y[..n].iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = x.iter().map(|v| v * v * v + 3.0 * v + 7.0).collect();
        let a = spearman(&x, &y);
        let b = spearman(&t, &y);
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (None, None) => {}
            _ => prop_assert!(false, "defined on one side only"),
        }
        if let Some(r) = a {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - common::spearman_formula(&x, &y)).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_p_value_of_perfect_order(n in 2usize..7) {
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let p = attr::spearman_p_value(&x, &x).unwrap();
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        let want = 2.0 / fact;
        prop_assert!((p - want).abs() < 1e-12, "n={n}: {p} vs {want}");
    }

    #[test]
    fn stddev_is_zero_only_for_constant_values(v in prop::collection::vec(0u8..5, 1..8)) {
        let f: Vec<f64> = v.iter().map(|&x| x as f64 / 4.0).collect();
        let constant = f.iter().all(|&x| x == f[0]);
        prop_assert_eq!(population_std(&f) == 0.0, constant);
    }
}
