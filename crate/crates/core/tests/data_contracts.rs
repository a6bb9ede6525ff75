//! Dataset and featurization contracts against constructed fixtures.

use lrqa_core::data::{
    char_len, char_slice, concat_datasets, corpus_stats, emit_squad, featurize, parse_squad,
    split_validation, Answer, Article, DataError, Dataset, Paragraph, QAExample,
};
use lrqa_core::tokenizer::{train_tokenizer, Casing};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn char_offset_of(context: &str, answer: &str) -> usize {
    let byte = context.find(answer).expect("answer present");
    context[..byte].chars().count()
}

fn qa(id: &str, question: &str, context: &str, answer: &str) -> QAExample {
    QAExample {
        id: id.into(),
        question: question.into(),
        answers: vec![Answer {
            text: answer.into(),
            answer_start: char_offset_of(context, answer),
        }],
    }
}

/// Three articles, five paragraphs, twelve questions, by construction.
fn synthetic_corpus() -> Dataset {
    let c1 = "La tour Eiffel se dresse à Paris. Elle fut achevée en 1889.";
    let c2 = "Le fleuve traverse la ville. Son delta rejoint la mer du Nord.";
    let c3 = "Marie Curie reçut deux prix Nobel. Elle étudia le radium à Paris.";
    let c4 = "Le mont Blanc culmine à 4808 mètres. Il domine les Alpes.";
    let c5 = "La baguette est un pain français. Elle se mange fraîche.";
    Dataset {
        version: "1.1".into(),
        data: vec![
            Article {
                title: "Paris".into(),
                paragraphs: vec![
                    Paragraph {
                        context: c1.into(),
                        qas: vec![
                            qa("p1", "Où se dresse la tour Eiffel ?", c1, "Paris"),
                            qa("p2", "Quand fut-elle achevée ?", c1, "1889"),
                            qa("p3", "Quel monument se dresse à Paris ?", c1, "La tour Eiffel"),
                        ],
                    },
                    Paragraph {
                        context: c2.into(),
                        qas: vec![
                            qa("p4", "Que traverse le fleuve ?", c2, "la ville"),
                            qa("p5", "Quelle mer le delta rejoint-il ?", c2, "la mer du Nord"),
                        ],
                    },
                ],
            },
            Article {
                title: "Sciences".into(),
                paragraphs: vec![
                    Paragraph {
                        context: c3.into(),
                        qas: vec![
                            qa("s1", "Qui reçut deux prix Nobel ?", c3, "Marie Curie"),
                            qa("s2", "Qu'étudia-t-elle ?", c3, "le radium"),
                            qa("s3", "Combien de prix Nobel ?", c3, "deux"),
                        ],
                    },
                    Paragraph {
                        context: c4.into(),
                        qas: vec![
                            qa("s4", "Quelle est l'altitude du mont Blanc ?", c4, "4808 mètres"),
                            qa("s5", "Que domine-t-il ?", c4, "les Alpes"),
                        ],
                    },
                ],
            },
            Article {
                title: "Cuisine".into(),
                paragraphs: vec![Paragraph {
                    context: c5.into(),
                    qas: vec![
                        qa("g1", "Qu'est-ce que la baguette ?", c5, "un pain français"),
                        qa("g2", "Comment se mange-t-elle ?", c5, "fraîche"),
                    ],
                }],
            },
        ],
    }
}

#[test]
fn minimal_file_round_trips() {
    let json = r#"{
        "version": "1.1",
        "data": [{"title": "T", "paragraphs": [{"context": "Le chat dort.",
            "qas": [{"id": "q1", "question": "Qui dort ?",
                     "answers": [{"text": "Le chat", "answer_start": 0}]}]}]}]
    }"#;
    let parsed = parse_squad(json.as_bytes()).unwrap();
    let emitted = emit_squad(&parsed);
    let reparsed = parse_squad(emitted.as_bytes()).unwrap();
    assert_eq!(parsed, reparsed);
    // canonical form is a fixed point
    assert_eq!(emitted, emit_squad(&reparsed));
}

#[test]
fn wrong_answer_start_names_the_example() {
    let json = r#"{
        "data": [{"title": "T", "paragraphs": [{"context": "Le chat dort.",
            "qas": [{"id": "broken", "question": "Qui ?",
                     "answers": [{"text": "chat", "answer_start": 0}]}]}]}]
    }"#;
    match parse_squad(json.as_bytes()) {
        Err(DataError::SpanInvariant { id, .. }) => assert_eq!(id, "broken"),
        other => panic!("expected span invariant error, got {other:?}"),
    }
}

#[test]
fn malformed_json_is_a_json_error() {
    assert!(matches!(
        parse_squad(b"{\"data\": ["),
        Err(DataError::Json(_))
    ));
}

#[test]
fn synthetic_corpus_counts() {
    let ds = synthetic_corpus();
    ds.validate().unwrap();
    assert_eq!(ds.title_count(), 3);
    assert_eq!(ds.paragraph_count(), 5);
    assert_eq!(ds.question_count(), 12);
    assert_eq!(ds.answer_count(), 12);
}

#[test]
fn accented_answers_use_char_offsets() {
    // answer after a multibyte character: é is one char, two bytes
    let context = "L'été à Paris est chaud.";
    let ans = "Paris";
    let start = char_offset_of(context, ans);
    assert_eq!(char_slice(context, start, start + char_len(ans)), "Paris");
    let ds = Dataset {
        version: "1.1".into(),
        data: vec![Article {
            title: "A".into(),
            paragraphs: vec![Paragraph {
                context: context.into(),
                qas: vec![qa("e1", "Où ?", context, "Paris")],
            }],
        }],
    };
    ds.validate().unwrap();
}

#[test]
fn split_is_a_seeded_partition() {
    // 100 examples across paragraphs of 4
    let mut data = Vec::new();
    for a in 0..25 {
        let context = format!("Phrase numero {a} avec assez de mots.");
        let mut qas = Vec::new();
        for q in 0..4 {
            qas.push(QAExample {
                id: format!("ex{a}-{q}"),
                question: "Quel numero ?".into(),
                answers: vec![Answer {
                    text: format!("numero {a}"),
                    answer_start: char_offset_of(&context, &format!("numero {a}")),
                }],
            });
        }
        data.push(Article {
            title: format!("A{a}"),
            paragraphs: vec![Paragraph {
                context,
                qas,
            }],
        });
    }
    let ds = Dataset {
        version: "1.1".into(),
        data,
    };
    let (train, val) = split_validation(&ds, 0.10, 17).unwrap();
    assert_eq!(train.question_count(), 90);
    assert_eq!(val.question_count(), 10);

    // same seed, same membership
    let (_, val2) = split_validation(&ds, 0.10, 17).unwrap();
    assert_eq!(val.example_ids(), val2.example_ids());

    // partition: disjoint and exhaustive
    let union: std::collections::BTreeSet<_> =
        train.example_ids().union(&val.example_ids()).cloned().collect();
    assert_eq!(union, ds.example_ids());
    assert!(train.example_ids().is_disjoint(&val.example_ids()));
}

#[test]
fn split_rejects_bad_inputs() {
    let ds = synthetic_corpus();
    assert!(matches!(
        split_validation(&ds, 0.0, 1),
        Err(DataError::BadFraction { .. })
    ));
    assert!(matches!(
        split_validation(&Dataset::empty(), 0.1, 1),
        Err(DataError::EmptyDataset)
    ));
}

#[test]
fn concat_adds_counts_and_keeps_empty_identity() {
    let ds = synthetic_corpus();
    let merged = concat_datasets(&ds, &Dataset::empty());
    assert_eq!(merged.question_count(), ds.question_count());
    assert_eq!(merged.example_ids(), ds.example_ids());

    let (seven, rest) = split_validation(&ds, 7.0 / 12.0, 3).unwrap();
    assert_eq!(seven.question_count() + rest.question_count(), 12);
    let merged = concat_datasets(&rest, &seven);
    assert_eq!(merged.question_count(), 12);
}

#[test]
fn concat_namespaces_colliding_ids() {
    let ds = synthetic_corpus();
    let merged = concat_datasets(&ds, &ds);
    assert_eq!(merged.question_count(), 24);
    let ids = merged.example_ids();
    assert_eq!(ids.len(), 24, "colliding ids must be namespaced apart");
    assert!(ids.contains("0:p1") && ids.contains("1:p1"));
}

#[test]
fn stats_on_handmade_paragraph() {
    // 2 sentences, 10 whitespace tokens, 57 characters, counted by hand
    let context = "Le chaton dormait sous le grand tapis. Le chien mangeait.";
    assert_eq!(char_len(context), 57);
    assert_eq!(context.split_whitespace().count(), 10);
    let ds = Dataset {
        version: "1.1".into(),
        data: vec![Article {
            title: "T".into(),
            paragraphs: vec![Paragraph {
                context: context.into(),
                qas: vec![qa("q", "Qui dort ?", context, "chaton")],
            }],
        }],
    };
    let stats = corpus_stats(&ds);
    assert_eq!(stats.sentences_per_paragraph, 2.0);
    assert_eq!(stats.tokens_per_paragraph, 10.0);
    assert_eq!(stats.chars_per_paragraph, 57.0);
}

#[test]
fn stats_on_empty_dataset_are_zero() {
    let stats = corpus_stats(&Dataset::empty());
    assert_eq!(stats.titles, 0);
    assert_eq!(stats.paragraphs, 0);
    assert_eq!(stats.questions, 0);
    assert_eq!(stats.answers, 0);
    assert_eq!(stats.sentences_per_paragraph, 0.0);
    assert_eq!(stats.tokens_per_answer, 0.0);
}

#[test]
fn tokenize_round_trips_fixture_strings() {
    let corpus = "le chat mange la souris et le chien regarde la lune \
                  paris lyon nantes fleuve montagne soleil hiver";
    let tok = train_tokenizer(corpus, 160, Casing::Lower).unwrap();
    let words: Vec<&str> = corpus.split_whitespace().collect();
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.gen_range(1..8);
        let sentence: Vec<&str> = (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect();
        let text = sentence.join(" ");
        let spans = tok.tokenize(&text);
        // ranges strictly increasing and non-overlapping
        for w in spans.windows(2) {
            assert!(w[0].end <= w[1].start);
            assert!(w[0].start < w[0].end);
        }
        // concatenated slices reconstruct the normalized input
        let ids: Vec<usize> = spans.iter().map(|s| s.id).collect();
        assert_eq!(tok.detokenize(&ids), text);
    }
}

#[test]
fn featurize_single_window_answer_decodes_exactly() {
    let context = "la tour eiffel domine paris depuis longtemps";
    let example = qa("f1", "que domine la tour ?", context, "tour eiffel");
    let tok = train_tokenizer(context, 200, Casing::Lower).unwrap();
    let feats = featurize(&example, context, &tok, 64, 16).unwrap();
    assert_eq!(feats.len(), 1);
    let f = &feats[0];
    let (s, e) = (f.start_position.unwrap(), f.end_position.unwrap());
    assert!(s <= e);
    let (c0, _) = f.offsets[s].unwrap();
    let (_, c1) = f.offsets[e].unwrap();
    assert_eq!(char_slice(context, c0, c1), "tour eiffel");
}

#[test]
fn featurize_layout_and_padding() {
    let context = "un deux trois";
    let example = qa("f2", "combien ?", context, "deux");
    let tok = train_tokenizer("un deux trois combien", 80, Casing::Lower).unwrap();
    let feats = featurize(&example, context, &tok, 32, 8).unwrap();
    let f = &feats[0];
    assert_eq!(f.input_ids.len(), 32);
    assert_eq!(f.attention_mask.len(), 32);
    assert_eq!(f.input_ids[0], lrqa_core::tokenizer::CLS);
    // mask covers exactly the real tokens
    let real = f.attention_mask.iter().filter(|&&m| m == 1).count();
    assert!(real < 32);
    assert!(f.input_ids[real..].iter().all(|&id| id == lrqa_core::tokenizer::PAD));
    // type ids: zeros through the first [SEP], ones for the context segment
    let first_sep = f.input_ids.iter().position(|&id| id == lrqa_core::tokenizer::SEP).unwrap();
    assert!(f.type_ids[..=first_sep].iter().all(|&t| t == 0));
    assert!(f.type_ids[first_sep + 1..real].iter().all(|&t| t == 1));
}

#[test]
fn featurize_straddling_answer_lands_in_overlapping_window() {
    // twenty single-token words; answer at tokens 8..=9
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let context = words.join(" ");
    let example = qa("f3", "w1 ?", &context, "w8 w9");
    let tok = train_tokenizer(&context, 256, Casing::Lower).unwrap();
    // capacity = 16 - q_tokens - 3; question "w1 ?" is 2 tokens ("w1", "?")
    // ... "?" is unseen, becomes [UNK], still one token
    let q_tokens = tok.tokenize("w1 ?").len();
    let max_len = q_tokens + 3 + 8; // capacity exactly 8 context tokens
    let feats = featurize(&example, &context, &tok, max_len, 4).unwrap();
    assert!(feats.len() >= 3);
    // window 0 covers tokens [0,8): answer straddles out -> None
    assert_eq!(feats[0].start_position, None);
    assert_eq!(feats[0].end_position, None);
    // some later window covers 8..=9 fully
    let with_answer: Vec<_> = feats
        .iter()
        .filter(|f| f.start_position.is_some())
        .collect();
    assert!(!with_answer.is_empty());
    for f in with_answer {
        let (s, e) = (f.start_position.unwrap(), f.end_position.unwrap());
        let (c0, _) = f.offsets[s].unwrap();
        let (_, c1) = f.offsets[e].unwrap();
        assert_eq!(char_slice(&context, c0, c1), "w8 w9");
    }
}

#[test]
fn featurize_window_arithmetic_and_coverage() {
    // 1000 single-token words, stride 128
    let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
    let context = std::iter::repeat_n(words.join(" "), 100)
        .collect::<Vec<_>>()
        .join(" ");
    let tok = train_tokenizer(&context, 200, Casing::Lower).unwrap();
    assert_eq!(tok.tokenize(&context).len(), 1000);
    let example = qa("f4", "w1 w2", &context, "w5 w6");
    let feats = featurize(&example, &context, &tok, 384, 128).unwrap();
    let q_len = tok.tokenize("w1 w2").len();
    let capacity = 384 - q_len - 3;
    // starts advance by the stride
    for (k, f) in feats.iter().enumerate() {
        assert_eq!(f.window_index, k);
        let first_ctx = f.offsets.iter().flatten().next().unwrap().0;
        let first_token_index = tok
            .tokenize(&context)
            .iter()
            .position(|s| s.start == first_ctx)
            .unwrap();
        assert_eq!(first_token_index, k * 128);
    }
    // full coverage: every context token appears in at least one window
    let mut covered = vec![false; 1000];
    let all = tok.tokenize(&context);
    for f in &feats {
        for off in f.offsets.iter().flatten() {
            let idx = all.iter().position(|s| (s.start, s.end) == *off).unwrap();
            covered[idx] = true;
        }
    }
    assert!(covered.iter().all(|&c| c));
    let expected_windows = {
        let mut n = 1;
        let mut start = 0;
        while start + capacity < 1000 {
            start += 128;
            n += 1;
        }
        n
    };
    assert_eq!(feats.len(), expected_windows);
}

#[test]
fn featurize_rejects_window_smaller_than_question() {
    let context = "un deux";
    let example = qa("f5", "un deux un deux un deux", context, "deux");
    let tok = train_tokenizer("un deux", 32, Casing::Lower).unwrap();
    assert!(matches!(
        featurize(&example, context, &tok, 8, 4),
        Err(DataError::WindowTooSmall { .. })
    ));
}

use proptest::prelude::*;

/// Small valid datasets: word-built contexts with word-aligned answers.
fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    let word = prop_oneof![
        Just("chat"),
        Just("tour"),
        Just("paris"),
        Just("mer"),
        Just("été"),
        Just("montagne"),
        Just("l'eau"),
    ];
    let paragraph = (proptest::collection::vec(word, 3..9), 0usize..3).prop_map(
        |(words, answer_word)| {
            let context = words.join(" ");
            let answer = words[answer_word.min(words.len() - 1)];
            let byte = context.find(answer).unwrap();
            Paragraph {
                qas: vec![QAExample {
                    id: String::new(), // filled below
                    question: "laquelle ?".into(),
                    answers: vec![Answer {
                        text: answer.into(),
                        answer_start: context[..byte].chars().count(),
                    }],
                }],
                context,
            }
        },
    );
    proptest::collection::vec(paragraph, 1..5).prop_map(|mut paragraphs| {
        for (k, p) in paragraphs.iter_mut().enumerate() {
            p.qas[0].id = format!("g{k}");
        }
        Dataset {
            version: "1.1".into(),
            data: vec![Article {
                title: "gen".into(),
                paragraphs,
            }],
        }
    })
}

proptest! {
    // canonical form: parse(emit(parse(x))) emits the same text again
    #[test]
    fn parse_emit_parse_is_a_fixed_point(ds in dataset_strategy()) {
        prop_assert!(ds.validate().is_ok());
        let emitted = emit_squad(&ds);
        let reparsed = parse_squad(emitted.as_bytes()).unwrap();
        prop_assert_eq!(&reparsed, &ds);
        prop_assert_eq!(emit_squad(&reparsed), emitted);
    }
}
