//! Evaluation metrics: pass@k, robustness drop, rank-sum significance and
//! smoothed BLEU.

mod bleu;
mod passk;
mod ranksum;

pub use bleu::{smoothed_bleu, tokenize, BleuPair};
pub use passk::{aggregate_pass_at_k, pass_at_k, PassMatrix, TaskResult};
pub use ranksum::{rank_sum_test, RankSumResult, EXACT_LIMIT};

use crate::error::{Error, Result};

/// Relative pass@1 drop under perturbation, in percent. Negative means the
/// perturbed score is higher.
pub fn robustness_drop(pass1_unperturbed: f64, pass1_perturbed: f64) -> Result<f64> {
    if pass1_unperturbed <= 0.0 || !pass1_unperturbed.is_finite() {
        return Err(Error::UndefinedDrop);
    }
    Ok(100.0 * (pass1_unperturbed - pass1_perturbed) / pass1_unperturbed)
}
