//! Prompt perturbation at three levels, then pass@1 drop and a rank-sum test.

use qcg::eval::{rank_sum_test, robustness_drop};
use qcg::perturb::{perturb_char, perturb_sentence, perturb_word, ParaphraseTable, SynonymLexicon, DEFAULT_CHAR_RATE};

const PROMPT: &str =
    "Write a python function to determine whether all the numbers are different from each other are not.";

fn main() -> qcg::Result<()> {
    let lexicon = SynonymLexicon::from_tsv("different\tunlike\tdistinct\nnumbers\tvalues\n".as_bytes())?;
    let paraphrases = ParaphraseTable::from_jsonl(
        r#"{"id": "S1", "paraphrase": "Write a Python function to see if all numbers differ from each other."}"#
            .as_bytes(),
    )?;
    println!("original: {PROMPT}");
    println!("char:     {}", perturb_char(PROMPT, DEFAULT_CHAR_RATE, 7)?);
    println!("word:     {}", perturb_word(PROMPT, &lexicon, 1.0, 7)?);
    println!("sentence: {}", perturb_sentence("S1", &paraphrases)?);

    // Per-task pass@1 before and after perturbation for a small benchmark.
    let clean = [0.9, 0.7, 0.4, 1.0, 0.0, 0.6, 0.3, 0.8];
    let perturbed = [0.8, 0.5, 0.4, 0.9, 0.0, 0.3, 0.3, 0.6];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "\npass@1 {:.4} -> {:.4}, drop {:.2}%",
        mean(&clean),
        mean(&perturbed),
        robustness_drop(mean(&clean), mean(&perturbed))?
    );
    let t = rank_sum_test(&clean, &perturbed)?;
    println!(
        "rank-sum U = {}, p = {:.4} ({})",
        t.u,
        t.p_value,
        if t.exact { "exact" } else { "normal" }
    );
    Ok(())
}
