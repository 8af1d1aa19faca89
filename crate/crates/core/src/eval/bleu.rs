use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate/reference line of a BLEU input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuPair {
    pub candidate: String,
    pub reference: String,
}

impl BleuPair {
    pub fn score(&self, max_n: usize) -> Result<f64> {
        smoothed_bleu(&tokenize(&self.candidate), &tokenize(&self.reference), max_n)
    }
}

pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_ascii_whitespace().collect()
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU with add-one smoothing on n-gram orders 2 and above.
pub fn smoothed_bleu(candidate: &[&str], reference: &[&str], max_n: usize) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("BLEU reference"));
    }
    if max_n == 0 {
        return Err(Error::param("max_n must be at least 1"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let total = candidate.len().saturating_sub(n - 1);
        let p = if n == 1 {
            if matched == 0 {
                return Ok(0.0);
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok((bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0))
}
