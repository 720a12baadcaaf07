//! Regenerates `data/toy_corpus.tsv`.

use crnn_core::seq2seq::corpus::{synthetic_corpus, to_tsv, TOY_PAIRS, TOY_SEED};

fn main() -> std::io::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_corpus.tsv");
    std::fs::write(path, to_tsv(&synthetic_corpus(TOY_SEED, TOY_PAIRS)))?;
    println!("wrote {path}");
    Ok(())
}
