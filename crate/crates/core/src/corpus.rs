//! Dialogue data model, corpus ingestion and tokenization.
//!
//! Corpus files are JSON Lines, one dialogue per line:
//!
//! ```text
//! {"id":"d1","turns":[{"speaker":"usr","text":"I am looking for restaurants"},{"speaker":"sys","text":"what type of food do you like"}]}
//! ```
//!
//! Tokens are maximal runs of non-whitespace characters after lowercasing.
//! Punctuation is kept as part of the word. Ordinary words are hashed with
//! seeded 64-bit FNV-1a into `[3, vocab_size)`; ids 0, 1 and 2 are reserved
//! for `[SEP]`, `[SYS]` and `[USR]`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};
use crate::rng;

pub const SEP_ID: u32 = 0;
pub const SYS_ID: u32 = 1;
pub const USR_ID: u32 = 2;
pub const NUM_RESERVED: u32 = 3;

pub const SEP_TOKEN: &str = "[SEP]";
pub const SYS_TOKEN: &str = "[SYS]";
pub const USR_TOKEN: &str = "[USR]";

pub const DEFAULT_VOCAB_SIZE: usize = 30_000;
pub const MIN_VOCAB_SIZE: usize = 8;

/// Minimum number of whitespace words an utterance needs to be used for
/// training pairs.
pub const MIN_TRAIN_WORDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Usr,
    Sys,
}

impl Speaker {
    pub fn marker(self) -> &'static str {
        match self {
            Speaker::Usr => USR_TOKEN,
            Speaker::Sys => SYS_TOKEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Turn {
            speaker,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Topic index encoded in ids produced by [`gen_synthetic`].
    pub fn synthetic_topic(&self) -> Option<usize> {
        synthetic_topic_of(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub word_count: usize,
}

fn parse_line(line: &str, lineno: usize, file: &str) -> Result<Dialogue> {
    let perr = |message: String| DseError::Parse {
        file: file.to_string(),
        line: lineno,
        message,
    };
    let dialogue: Dialogue = serde_json::from_str(line).map_err(|e| perr(e.to_string()))?;
    if dialogue.turns.is_empty() {
        return Err(perr("dialogue has no turns".into()));
    }
    for (t, turn) in dialogue.turns.iter().enumerate() {
        if turn.text.trim().is_empty() {
            return Err(perr(format!("turn {t} has empty text")));
        }
    }
    Ok(dialogue)
}

/// Parse corpus text. Blank lines are ignored; line numbers are 1-based.
pub fn parse_corpus(content: &str, file: &str) -> Result<Vec<Dialogue>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d = parse_line(line, idx + 1, file)?;
        if !seen.insert(d.id.clone()) {
            return Err(DseError::DuplicateDialogue {
                id: d.id,
                line: idx + 1,
            });
        }
        out.push(d);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| DseError::io(path, e))?;
    parse_corpus(&content, &path.display().to_string())
}

/// Canonical serialization: compact JSON, one dialogue per line, trailing
/// newline after every line.
pub fn corpus_to_string(dialogues: &[Dialogue]) -> String {
    let mut s = String::new();
    for d in dialogues {
        s.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
        s.push('\n');
    }
    s
}

pub fn save_corpus(dialogues: &[Dialogue], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| DseError::io(path, e))?;
    f.write_all(corpus_to_string(dialogues).as_bytes())
        .map_err(|e| DseError::io(path, e))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a whose offset basis is xored with `seed` (seed 0 is plain
/// FNV-1a).
pub fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    bytes.iter().fold(FNV_OFFSET ^ seed, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn passes_length_filter(text: &str) -> bool {
    word_count(text) >= MIN_TRAIN_WORDS
}

/// Id of one lowercased word.
pub fn word_id(word: &str, vocab_size: usize, hash_seed: u64) -> u32 {
    match word {
        "[sep]" => SEP_ID,
        "[sys]" => SYS_ID,
        "[usr]" => USR_ID,
        w => {
            let span = (vocab_size as u64) - u64::from(NUM_RESERVED);
            (u64::from(NUM_RESERVED) + fnv1a64(w.as_bytes(), hash_seed) % span) as u32
        }
    }
}

/// Tokenize `text`. `vocab_size` must be at least [`MIN_VOCAB_SIZE`]; callers
/// holding a validated encoder config always satisfy this.
pub fn tokenize(text: &str, vocab_size: usize, hash_seed: u64) -> TokenSeq {
    assert!(
        vocab_size >= MIN_VOCAB_SIZE,
        "vocab_size must be >= {MIN_VOCAB_SIZE}"
    );
    let lower = text.to_lowercase();
    let ids: Vec<u32> = lower
        .split_whitespace()
        .map(|w| word_id(w, vocab_size, hash_seed))
        .collect();
    TokenSeq {
        word_count: ids.len(),
        ids,
    }
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Pronounceable pseudo-word for a global index; injective in `index`.
fn pseudo_word(index: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    // Offset by `base` so every word has at least two syllables.
    let mut n = index + base;
    let mut syllables = Vec::new();
    while n > 0 {
        let s = n % base;
        syllables.push(format!("{}{}", ONSETS[s / VOWELS.len()], VOWELS[s % VOWELS.len()]));
        n /= base;
    }
    syllables.reverse();
    syllables.concat()
}

/// Word pool of one synthetic topic. Pools depend only on the topic index and
/// pool size, so corpora generated with different seeds share vocabulary.
pub fn topic_pool(topic: usize, pool_size: usize) -> Vec<String> {
    (0..pool_size)
        .map(|i| pseudo_word(topic * pool_size + i))
        .collect()
}

pub const DEFAULT_POOL_SIZE: usize = 30;

pub fn synthetic_dialogue_id(topic: usize, index: usize) -> String {
    format!("topic{topic}-dlg{index}")
}

pub fn synthetic_topic_of(id: &str) -> Option<usize> {
    let rest = id.strip_prefix("topic")?;
    let (topic, _) = rest.split_once('-')?;
    topic.parse().ok()
}

/// Generate a topic-structured corpus with [`DEFAULT_POOL_SIZE`] words per
/// topic.
pub fn gen_synthetic(
    num_topics: usize,
    dialogues_per_topic: usize,
    turns_per_dialogue: usize,
    words_per_turn: usize,
    seed: u64,
) -> Result<Vec<Dialogue>> {
    gen_synthetic_with_pool(
        num_topics,
        dialogues_per_topic,
        turns_per_dialogue,
        words_per_turn,
        DEFAULT_POOL_SIZE,
        seed,
    )
}

pub fn gen_synthetic_with_pool(
    num_topics: usize,
    dialogues_per_topic: usize,
    turns_per_dialogue: usize,
    words_per_turn: usize,
    pool_size: usize,
    seed: u64,
) -> Result<Vec<Dialogue>> {
    for (field, v, min) in [
        ("num_topics", num_topics, 1),
        ("dialogues_per_topic", dialogues_per_topic, 1),
        ("turns_per_dialogue", turns_per_dialogue, 1),
        ("words_per_turn", words_per_turn, MIN_TRAIN_WORDS),
        ("pool_size", pool_size, 1),
    ] {
        if v < min {
            return Err(DseError::config(field, format!("must be >= {min}, got {v}")));
        }
    }
    let mut rng = rng::rng_from(seed, &[0x5917]);
    let mut out = Vec::with_capacity(num_topics * dialogues_per_topic);
    for topic in 0..num_topics {
        let pool = topic_pool(topic, pool_size);
        for d in 0..dialogues_per_topic {
            let turns = (0..turns_per_dialogue)
                .map(|t| {
                    let words: Vec<&str> = (0..words_per_turn)
                        .map(|_| pool.choose(&mut rng).expect("non-empty pool").as_str())
                        .collect();
                    let speaker = if t % 2 == 0 { Speaker::Usr } else { Speaker::Sys };
                    Turn::new(speaker, words.join(" "))
                })
                .collect();
            out.push(Dialogue {
                id: synthetic_dialogue_id(topic, d),
                turns,
            });
        }
    }
    // Interleave topics so file order carries no label information.
    out.shuffle(&mut rng);
    Ok(out)
}
