//! Scoring oracles: the determiner golden cases, hand-derived F1 values,
//! agreement with an independent reference scorer, and invariance
//! properties.

use std::collections::BTreeMap;

use lrqa_core::data::{Answer, Article, Dataset, Paragraph, QAExample};
use lrqa_core::metrics::{evaluate, exact_match, f1, normalize_answer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

// ---------------------------------------------------------------------------
// Independent reference scorer, written against the same rules but along a
// different code path: regex-free char scan, sorted-list overlap.
// ---------------------------------------------------------------------------

fn reference_tokens(text: &str) -> Vec<String> {
    let lowered: String = text
        .chars()
        .flat_map(|c| c.to_lowercase())
        .map(|c| if c == '\u{2019}' { '\'' } else { c })
        .map(|c| {
            if c.is_alphanumeric() || c == '\'' {
                c
            } else {
                ' '
            }
        })
        .collect();
    let mut tokens: Vec<String> = Vec::new();
    for word in lowered.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            current.push(ch);
            if ch == '\'' {
                tokens.push(core::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    const DETERMINERS: [&str; 10] = ["le", "la", "les", "l'", "du", "des", "au", "aux", "un", "une"];
    tokens.retain(|t| !DETERMINERS.contains(&t.as_str()));
    tokens
}

fn reference_em(pred: &str, golds: &[&str]) -> u8 {
    let p = reference_tokens(pred).join(" ");
    golds
        .iter()
        .any(|g| reference_tokens(g).join(" ") == p) as u8
}

fn reference_f1(pred: &str, golds: &[&str]) -> f64 {
    let p = reference_tokens(pred);
    let mut best: f64 = 0.0;
    for g in golds {
        let g = reference_tokens(g);
        best = best.max(reference_pair_f1(&p, &g));
    }
    best
}

fn reference_pair_f1(p: &[String], g: &[String]) -> f64 {
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    // multiset intersection by sorting both sides
    let mut ps = p.to_vec();
    let mut gs = g.to_vec();
    ps.sort();
    gs.sort();
    let (mut i, mut j, mut overlap) = (0usize, 0usize, 0usize);
    while i < ps.len() && j < gs.len() {
        match ps[i].cmp(&gs[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                overlap += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / ps.len() as f64;
    let recall = overlap as f64 / gs.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

// ---------------------------------------------------------------------------

#[test]
fn golden_determiner_cases() {
    // every determiner of the normalization footnote, plus the "de stays"
    // case
    let cases = [
        ("Le chat", "chat"),
        ("La tour", "tour"),
        ("Les montagnes", "montagnes"),
        ("L'église", "église"),
        ("du pain", "pain"),
        ("des fleurs", "fleurs"),
        ("au marché", "marché"),
        ("aux champs", "champs"),
        ("un livre", "livre"),
        ("une pomme", "pomme"),
        ("l'Église de Paris!", "église de paris"),
        ("La mer du Nord", "mer nord"),
    ];
    for (input, want) in cases {
        assert_eq!(normalize_answer(input), want, "input {input:?}");
    }
}

proptest! {
    #[test]
    fn normalize_is_idempotent(s in "\\PC{0,40}") {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once);
    }
}

#[test]
fn exact_match_cases() {
    assert_eq!(exact_match("Le chat", &["chat"]).unwrap(), 1);
    assert_eq!(exact_match("chat noir", &["chat"]).unwrap(), 0);
    assert_eq!(
        exact_match("La tour Eiffel", &["tour Eiffel", "la Tour EIFFEL"]).unwrap(),
        1
    );
    assert!(exact_match("x", &[]).is_err());
}

#[test]
fn f1_hand_cases() {
    assert_eq!(f1("la tour eiffel", &["La tour Eiffel"]).unwrap(), 1.0);
    // normalized tokens: pred {tour, eiffel}; gold {tour, eiffel, de, paris}
    // P = 1.0, R = 0.5, F1 = 2/3
    let got = f1("La tour Eiffel", &["tour Eiffel de Paris"]).unwrap();
    assert!((got - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(f1("pomme poire", &["chat chien"]).unwrap(), 0.0);
}

#[test]
fn f1_multiset_overlap_counts_duplicates_once_each() {
    // pred has "chat" twice, gold once: overlap is 1, not 2
    let got = f1("chat chat", &["chat noir"]).unwrap();
    let expected = {
        let p = 1.0 / 2.0;
        let r = 1.0 / 2.0;
        2.0 * p * r / (p + r)
    };
    assert!((got - expected).abs() < 1e-12);
}

fn two_example_dataset() -> Dataset {
    let c1 = "La tour Eiffel est à Paris.";
    let c2 = "Le chat dort sur le tapis.";
    Dataset {
        version: "1.1".into(),
        data: vec![Article {
            title: "T".into(),
            paragraphs: vec![
                Paragraph {
                    context: c1.into(),
                    qas: vec![QAExample {
                        id: "e1".into(),
                        question: "Quoi ?".into(),
                        answers: vec![Answer {
                            text: "tour Eiffel".into(),
                            answer_start: 3,
                        }],
                    }],
                },
                Paragraph {
                    context: c2.into(),
                    qas: vec![QAExample {
                        id: "e2".into(),
                        question: "Qui ?".into(),
                        answers: vec![Answer {
                            text: "chat".into(),
                            answer_start: 3,
                        }],
                    }],
                },
            ],
        }],
    }
}

#[test]
fn evaluate_perfect_predictions() {
    let ds = two_example_dataset();
    let mut preds = BTreeMap::new();
    for (_, qa) in ds.examples() {
        preds.insert(qa.id.clone(), qa.answers[0].text.clone());
    }
    let report = evaluate(&preds, &ds);
    assert_eq!(report.exact_match, 100.0);
    assert_eq!(report.f1, 100.0);
    assert!(report.missing.is_empty());
}

#[test]
fn evaluate_mixed_fixture_means() {
    // e1 exact; e2 scores EM 0 with F1 2/3 ("chat" vs "chat noir" style)
    let ds = two_example_dataset();
    let mut preds = BTreeMap::new();
    preds.insert("e1".to_string(), "la tour EIFFEL".to_string());
    preds.insert("e2".to_string(), "chat dort".to_string());
    let report = evaluate(&preds, &ds);
    assert!((report.exact_match - 50.0).abs() < 1e-9);
    // F1: (1 + 2/3) / 2 * 100 = 83.33...
    assert!((report.f1 - 250.0 / 3.0).abs() < 1e-9);
    assert_eq!(report.summary_row(), "83.3 / 50.0");
    // per-example f1 >= em, and in aggregate
    for e in &report.per_example {
        assert!(e.f1 >= e.em as f64);
    }
    assert!(report.f1 >= report.exact_match);
}

#[test]
fn evaluate_empty_prediction_map_warns_everywhere() {
    let ds = two_example_dataset();
    let report = evaluate(&BTreeMap::new(), &ds);
    assert_eq!(report.exact_match, 0.0);
    assert_eq!(report.f1, 0.0);
    assert_eq!(report.missing.len(), 2);
}

#[test]
fn agreement_with_reference_scorer_on_randomized_pairs() {
    let vocab = [
        "le", "la", "les", "l'", "du", "des", "au", "aux", "un", "une", "chat", "tour",
        "Eiffel", "Paris", "église", "de", "mer", "Nord", "montagne", "1889", "curie",
        "radium", "prix", "nobel", "ville?", "fleuve!", "SUR", "Tapis,",
    ];
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    for case in 0..200 {
        let draw = |rng: &mut ChaCha12Rng| -> String {
            let n = rng.gen_range(0..7);
            (0..n)
                .map(|_| vocab[rng.gen_range(0..vocab.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let pred = draw(&mut rng);
        let n_golds = rng.gen_range(1..4);
        let golds_owned: Vec<String> = (0..n_golds).map(|_| draw(&mut rng)).collect();
        let golds: Vec<&str> = golds_owned.iter().map(|s| s.as_str()).collect();

        let em_impl = exact_match(&pred, &golds).unwrap();
        let f1_impl = f1(&pred, &golds).unwrap();
        assert_eq!(em_impl, reference_em(&pred, &golds), "case {case}: {pred:?} vs {golds:?}");
        assert!(
            (f1_impl - reference_f1(&pred, &golds)).abs() < 1e-12,
            "case {case}: {pred:?} vs {golds:?}"
        );
        assert!(f1_impl >= em_impl as f64);
    }
}

#[test]
fn scores_invariant_under_gold_reordering_and_perturbation() {
    let golds = ["la tour Eiffel", "tour Eiffel de Paris"];
    let reversed = ["tour Eiffel de Paris", "la tour Eiffel"];
    let pred = "Tour Eiffel";
    assert_eq!(
        exact_match(pred, &golds).unwrap(),
        exact_match(pred, &reversed).unwrap()
    );
    assert_eq!(f1(pred, &golds).unwrap(), f1(pred, &reversed).unwrap());

    // case, punctuation, and determiner perturbations of the prediction
    for variant in ["TOUR EIFFEL", "tour... Eiffel!!", "la tour Eiffel", "Le tour Eiffel"] {
        assert_eq!(
            exact_match(variant, &golds).unwrap(),
            exact_match(pred, &golds).unwrap(),
            "variant {variant:?}"
        );
        assert!((f1(variant, &golds).unwrap() - f1(pred, &golds).unwrap()).abs() < 1e-12);
    }
}
