mod common;

use dse_core::corpus::{
    corpus_to_string, gen_synthetic, parse_corpus, passes_length_filter, tokenize, topic_pool, word_count, Dialogue,
    Speaker, Turn, NUM_RESERVED,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn length_filter_agrees_with_manual_split() {
    let mut r = common::rng(11);
    let pieces = ["a", "bb", " ", "  ", "\t", "\n", "x.", "ü", "[SEP]"];
    for _ in 0..1000 {
        let s: String = (0..r.gen_range(0..14)).map(|_| pieces[r.gen_range(0..pieces.len())]).collect();
        let mut words = 0;
        let mut in_word = false;
        for c in s.chars() {
            if c.is_whitespace() {
                in_word = false;
            } else if !in_word {
                in_word = true;
                words += 1;
            }
        }
        assert_eq!(word_count(&s), words, "{s:?}");
        assert_eq!(passes_length_filter(&s), words >= 4, "{s:?}");
    }
}

#[test]
fn synthetic_topic_pools_are_disjoint() {
    let pools: Vec<Vec<String>> = (0..8).map(|t| topic_pool(t, 30)).collect();
    let mut all: Vec<&String> = pools.iter().flatten().collect();
    let n = all.len();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), n);
}

#[test]
fn synthetic_corpus_round_trips_and_is_seeded() {
    let a = gen_synthetic(3, 4, 5, 6, 9).unwrap();
    let text = corpus_to_string(&a);
    assert_eq!(parse_corpus(&text, "mem").unwrap(), a);
    assert_eq!(gen_synthetic(3, 4, 5, 6, 9).unwrap(), a);
    assert_ne!(gen_synthetic(3, 4, 5, 6, 10).unwrap(), a);
    for d in &a {
        let topic = d.synthetic_topic().unwrap();
        let pool = topic_pool(topic, 30);
        assert!(d.turns.iter().flat_map(|t| t.text.split(' ')).all(|w| pool.iter().any(|p| p == w)));
    }
}

#[test]
fn duplicate_ids_and_empty_turns_are_rejected() {
    let line = r#"{"id":"a","turns":[{"speaker":"usr","text":"hi"}]}"#;
    assert!(parse_corpus(&format!("{line}\n{line}\n"), "f").is_err());
    let empty = r#"{"id":"b","turns":[{"speaker":"sys","text":"  "}]}"#;
    let e = parse_corpus(&format!("{line}\n\n{empty}\n"), "f").unwrap_err().to_string();
    assert!(e.contains("f:3"), "{e}");
}

fn arb_dialogue() -> impl Strategy<Value = Dialogue> {
    (
        "[a-z0-9]{1,8}",
        prop::collection::vec((any::<bool>(), "[a-zA-Z ,.!?\"\\\\é]{0,20}[a-z]"), 1..6),
    )
        .prop_map(|(id, turns)| Dialogue {
            id,
            turns: turns
                .into_iter()
                .map(|(u, t)| Turn::new(if u { Speaker::Usr } else { Speaker::Sys }, t))
                .collect(),
        })
}

proptest! {
    #[test]
    fn corpus_text_round_trip(d in arb_dialogue()) {
        let text = corpus_to_string(std::slice::from_ref(&d));
        let back = parse_corpus(&text, "p").unwrap();
        prop_assert_eq!(corpus_to_string(&back), text);
        prop_assert_eq!(back, vec![d]);
    }

    #[test]
    fn tokenize_is_pure_and_in_range(text in "\\PC{0,40}", vocab in 8usize..5000, seed in any::<u64>()) {
        let a = tokenize(&text, vocab, seed);
        prop_assert_eq!(&a, &tokenize(&text, vocab, seed));
        prop_assert_eq!(a.ids.len(), word_count(&text));
        for (&id, w) in a.ids.iter().zip(text.to_lowercase().split_whitespace()) {
            prop_assert!((id as usize) < vocab);
            let reserved = matches!(w, "[sep]" | "[sys]" | "[usr]");
            prop_assert_eq!(id < NUM_RESERVED, reserved);
        }
    }
}
