//! Parallel corpora: ingestion, tokenization and the bundled synthetic set.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seed and size of the bundled corpus.
pub const TOY_SEED: u64 = 2024;
pub const TOY_PAIRS: usize = 2000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub source: String,
    pub target: String,
}

/// Lowercased whitespace tokens with punctuation split off.
pub fn tokenize(s: &str) -> Vec<String> {
    let mut out = vec![];
    for chunk in s.split_whitespace() {
        let lower = chunk.to_lowercase();
        let mut rest = lower.as_str();
        while let Some(c) = rest.chars().next().filter(|c| "¿¡\"(".contains(*c)) {
            out.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        }
        let mut tail = vec![];
        while let Some(c) = rest.chars().next_back().filter(|c| ".,!?;:\")".contains(*c)) {
            tail.push(c.to_string());
            rest = &rest[..rest.len() - c.len_utf8()];
        }
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
        out.extend(tail.into_iter().rev());
    }
    out
}

/// Parses `target\tsource` lines; blank lines are skipped and extra columns
/// (attribution in the common dumps) ignored.
pub fn parse_tsv(text: &str) -> Result<Vec<Pair>> {
    let mut out = vec![];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(t), Some(s)) => out.push(Pair { source: s.to_string(), target: t.to_string() }),
            _ => return Err(Error::InvalidArgument(format!("line {}: expected target<TAB>source", i + 1))),
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("corpus is empty".into()));
    }
    Ok(out)
}

pub fn load_tsv(path: &Path) -> Result<Vec<Pair>> {
    parse_tsv(&std::fs::read_to_string(path)?)
}

pub fn to_tsv(pairs: &[Pair]) -> String {
    pairs.iter().map(|p| format!("{}\t{}\n", p.target, p.source)).collect()
}

/// Source noun whose translation depends on a context phrase.
struct Homonym {
    source: &'static str,
    senses: &'static [(&'static str, &'static [(&'static str, &'static str)])],
}

const HOMONYMS: &[Homonym] = &[
    Homonym {
        source: "el banco",
        senses: &[
            ("the bank", &[("con el dinero", "with the money"), ("junto al cajero", "next to the cashier")]),
            ("the bench", &[("en el parque", "in the park"), ("del jardín", "of the garden")]),
        ],
    },
    Homonym {
        source: "la vela",
        senses: &[
            ("the sail", &[("en el barco", "on the boat"), ("cerca del mar", "near the sea")]),
            ("the candle", &[("sobre la mesa", "on the table"), ("para la cena", "for the dinner")]),
        ],
    },
    Homonym {
        source: "la carta",
        senses: &[
            ("the menu", &[("en el restaurante", "in the restaurant")]),
            ("the letter", &[("del correo", "from the mail")]),
            ("the card", &[("del juego", "from the game")]),
        ],
    },
    Homonym {
        source: "la muñeca",
        senses: &[
            ("the doll", &[("en la juguetería", "in the toy store")]),
            ("the wrist", &[("con el reloj", "with the watch")]),
        ],
    },
    Homonym {
        source: "la llama",
        senses: &[
            ("the flame", &[("del fuego", "of the fire")]),
            ("the llama", &[("en la montaña", "on the mountain")]),
        ],
    },
    Homonym {
        source: "la cola",
        senses: &[
            ("the line", &[("en la tienda", "at the store")]),
            ("the tail", &[("del perro", "of the dog")]),
        ],
    },
];

const SUBJECTS: &[(&str, &str)] = &[
    ("el niño", "the boy"),
    ("la niña", "the girl"),
    ("mi padre", "my father"),
    ("su madre", "her mother"),
    ("el hombre", "the man"),
    ("la mujer", "the woman"),
];

const VERBS: &[(&str, &str)] = &[
    ("ve", "sees"),
    ("busca", "looks for"),
    ("encuentra", "finds"),
    ("pinta", "paints"),
    ("quiere", "wants"),
    ("mira", "watches"),
    ("toca", "touches"),
];

const PLAIN_NOUNS: &[(&str, &str)] = &[
    ("el libro", "the book"),
    ("la casa", "the house"),
    ("la manzana", "the apple"),
    ("el coche", "the car"),
];

/// One sentence pair. Homonyms take the sense named by their context phrase,
/// which appears before or after the clause.
fn sample_pair(rng: &mut ChaCha8Rng) -> Pair {
    let (ss, st) = *SUBJECTS.choose(rng).expect("nonempty");
    let (vs, vt) = *VERBS.choose(rng).expect("nonempty");
    let ((ns, nt), (cs, ct)) = if rng.random_bool(0.7) {
        let h = HOMONYMS.choose(rng).expect("nonempty");
        let (sense, contexts) = h.senses.choose(rng).expect("nonempty");
        ((h.source, *sense), *contexts.choose(rng).expect("nonempty"))
    } else {
        let h = HOMONYMS.choose(rng).expect("nonempty");
        let (_, contexts) = h.senses.choose(rng).expect("nonempty");
        (*PLAIN_NOUNS.choose(rng).expect("nonempty"), *contexts.choose(rng).expect("nonempty"))
    };
    if rng.random_bool(0.5) {
        Pair { source: format!("{ss} {vs} {ns} {cs} ."), target: format!("{st} {vt} {nt} {ct} .") }
    } else {
        let (cs, ct) = (capitalize(cs), capitalize(ct));
        Pair { source: format!("{cs} , {ss} {vs} {ns} ."), target: format!("{ct} , {st} {vt} {nt} .") }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// The deterministic synthetic corpus shipped as `data/toy_corpus.tsv`.
pub fn synthetic_corpus(seed: u64, pairs: usize) -> Vec<Pair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs).map(|_| sample_pair(&mut rng)).collect()
}

/// The bundled corpus as compiled into the crate.
pub fn bundled_corpus() -> Vec<Pair> {
    parse_tsv(include_str!("../../data/toy_corpus.tsv")).expect("bundled corpus parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("¿Dónde está, Juan?"), ["¿", "dónde", "está", ",", "juan", "?"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn tsv_round_trip_and_errors() {
        let pairs = synthetic_corpus(1, 5);
        assert_eq!(parse_tsv(&to_tsv(&pairs)).unwrap(), pairs);
        assert!(parse_tsv("no tab here").is_err());
        assert!(parse_tsv("\n\n").is_err());
        let extra = parse_tsv("Go.\tVe.\tCC-BY 2.0\n").unwrap();
        assert_eq!(extra[0].source, "Ve.");
    }

    #[test]
    fn bundled_file_matches_generator() {
        assert_eq!(bundled_corpus(), synthetic_corpus(TOY_SEED, TOY_PAIRS));
    }
}
