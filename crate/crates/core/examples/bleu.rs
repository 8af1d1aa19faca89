//! Smoothed sentence BLEU for generated code summaries.

use qcg::eval::BleuPair;

fn main() -> qcg::Result<()> {
    let pairs = [
        ("returns the sum of two numbers", "returns the sum of two numbers"),
        ("a b c d", "a b c e"),
        ("computes the sum of the list", "returns the sum of all list elements"),
        ("sum", "returns the sum of two numbers"),
        ("opens a socket", "returns the sum of two numbers"),
    ];
    for (candidate, reference) in pairs {
        let pair = BleuPair {
            candidate: candidate.into(),
            reference: reference.into(),
        };
        println!("{:.4}  {candidate:?} vs {reference:?}", pair.score(4)?);
    }
    Ok(())
}
