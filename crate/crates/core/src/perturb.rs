//! Prompt perturbations for robustness evaluation.
//!
//! Three levels are supported: random uppercasing of characters, synonym
//! substitution from a lexicon file, and lookup of a stored paraphrase.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const DEFAULT_CHAR_RATE: f64 = 0.15;
pub const DEFAULT_WORD_RATE: f64 = 0.15;

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::param(format!("perturbation rate {rate} outside [0, 1]")))
    }
}

/// Single-character uppercase form of `c`, if it round-trips back to `c`.
fn simple_upper(c: char) -> Option<char> {
    if !c.is_lowercase() || !c.is_alphabetic() {
        return None;
    }
    let mut up = c.to_uppercase();
    match (up.next(), up.next()) {
        (Some(u), None) if u != c && u.to_lowercase().eq(std::iter::once(c)) => Some(u),
        _ => None,
    }
}

/// Uppercases each lowercase letter independently with probability `rate`.
pub fn perturb_char(text: &str, rate: f64, seed: u64) -> Result<String> {
    check_rate(rate)?;
    let mut rng = Rng::new(seed);
    Ok(text
        .chars()
        .map(|c| match simple_upper(c) {
            Some(u) if rng.bernoulli(rate) => u,
            _ => c,
        })
        .collect())
}

/// Lowercase word to synonym list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, synonyms: Vec<String>) -> Result<()> {
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::param(format!("invalid lexicon word {word:?}")));
        }
        if synonyms.is_empty() {
            return Err(Error::param(format!("no synonyms for {word:?}")));
        }
        if let Some(s) = synonyms
            .iter()
            .find(|s| s.is_empty() || s.chars().any(char::is_whitespace))
        {
            return Err(Error::param(format!("invalid synonym {s:?} for {word:?}")));
        }
        self.entries.insert(word.to_lowercase(), synonyms);
        Ok(())
    }

    /// Reads `word<TAB>syn1<TAB>syn2...` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_tsv(reader: impl BufRead) -> Result<Self> {
        let mut lex = SynonymLexicon::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let word = fields.next().unwrap_or_default();
            let synonyms: Vec<String> = fields.map(str::to_string).collect();
            lex.insert(word, synonyms)
                .map_err(|e| Error::parse(format!("line {}", i + 1), e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_tsv(std::io::BufReader::new(file)).map_err(|e| e.in_file(path))
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn match_case(original: &str, replacement: &str) -> String {
    let upper_first = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        Some(first) if upper_first => first.to_uppercase().chain(chars).collect(),
        _ => replacement.to_string(),
    }
}

/// Replaces lexicon words with a random synonym with probability `rate`.
/// Whitespace runs and trailing punctuation are kept as they are.
pub fn perturb_word(text: &str, lexicon: &SynonymLexicon, rate: f64, seed: u64) -> Result<String> {
    check_rate(rate)?;
    let mut rng = Rng::new(seed);
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        let ws = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_whitespace()).len();
        out.push_str(&rest[..ws]);
        rest = &rest[ws..];
        let end = rest.find(|c: char| c.is_ascii_whitespace()).unwrap_or(rest.len());
        let word = &rest[..end];
        rest = &rest[end..];
        let core = word.trim_end_matches(|c: char| !c.is_alphanumeric());
        let tail = &word[core.len()..];
        match lexicon.get(core) {
            Some(syns) if !core.is_empty() && rng.bernoulli(rate) => {
                let pick = &syns[rng.below(syns.len() as u64) as usize];
                out.push_str(&match_case(core, pick));
                out.push_str(tail);
            }
            _ => out.push_str(word),
        }
    }
    Ok(out)
}

/// One line of a paraphrase file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseEntry {
    pub id: String,
    pub paraphrase: String,
}

/// Prompt id to precomputed paraphrase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParaphraseTable {
    entries: HashMap<String, String>,
}

impl ParaphraseTable {
    pub fn from_entries(entries: Vec<ParaphraseEntry>) -> Result<Self> {
        let mut map = HashMap::with_capacity(entries.len());
        for e in entries {
            if map.insert(e.id.clone(), e.paraphrase).is_some() {
                return Err(Error::Inconsistent(format!("duplicate paraphrase id {:?}", e.id)));
            }
        }
        Ok(ParaphraseTable { entries: map })
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        Self::from_entries(crate::jsonl::read_lines(reader)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_entries(crate::jsonl::read_file(path)?).map_err(|e| e.in_file(path))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Stored paraphrase for `prompt_id`, verbatim.
pub fn perturb_sentence(prompt_id: &str, table: &ParaphraseTable) -> Result<String> {
    table
        .entries
        .get(prompt_id)
        .cloned()
        .ok_or_else(|| Error::Lookup(prompt_id.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbLevel {
    Char,
    Word,
    Sentence,
}

impl FromStr for PerturbLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(PerturbLevel::Char),
            "word" => Ok(PerturbLevel::Word),
            "sentence" => Ok(PerturbLevel::Sentence),
            other => Err(Error::param(format!("unknown perturbation level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    pub level: PerturbLevel,
    pub rate: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn new(level: PerturbLevel, rate: f64, seed: u64) -> Result<Self> {
        check_rate(rate)?;
        Ok(PerturbSpec { level, rate, seed })
    }

    pub fn with_default_rate(level: PerturbLevel, seed: u64) -> Self {
        let rate = match level {
            PerturbLevel::Char => DEFAULT_CHAR_RATE,
            PerturbLevel::Word => DEFAULT_WORD_RATE,
            PerturbLevel::Sentence => 1.0,
        };
        PerturbSpec { level, rate, seed }
    }
}

/// One line of a prompt file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
}

/// Data a perturbation level may need beyond the prompt itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct Resources<'a> {
    pub lexicon: Option<&'a SynonymLexicon>,
    pub paraphrases: Option<&'a ParaphraseTable>,
}

/// Perturbs every prompt. Prompt `i` draws from stream `i` of the seed, so
/// results do not depend on scheduling.
pub fn perturb_prompts(prompts: &[Prompt], spec: &PerturbSpec, res: Resources<'_>) -> Result<Vec<Prompt>> {
    check_rate(spec.rate)?;
    let root = Rng::new(spec.seed);
    prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = root.fork(i as u64).next_u64();
            let text = match spec.level {
                PerturbLevel::Char => perturb_char(&p.text, spec.rate, seed)?,
                PerturbLevel::Word => {
                    let lex = res.lexicon.ok_or_else(|| Error::param("word level needs a lexicon"))?;
                    perturb_word(&p.text, lex, spec.rate, seed)?
                }
                PerturbLevel::Sentence => {
                    let table = res
                        .paraphrases
                        .ok_or_else(|| Error::param("sentence level needs a paraphrase file"))?;
                    perturb_sentence(&p.id, table)?
                }
            };
            Ok(Prompt { id: p.id.clone(), text })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const S1: &str =
        "Write a python function to determine whether all the numbers are different from each other are not.";

    fn lexicon(tsv: &str) -> SynonymLexicon {
        SynonymLexicon::from_tsv(tsv.as_bytes()).unwrap()
    }

    #[test]
    fn char_rates() {
        assert_eq!(perturb_char("abc def", 0.0, 3).unwrap(), "abc def");
        assert_eq!(perturb_char("abc def", 1.0, 3).unwrap(), "ABC DEF");
        assert_eq!(perturb_char("ß1-x", 1.0, 3).unwrap(), "ß1-X");
        let a = perturb_char(S1, 0.3, 7).unwrap();
        assert_eq!(a, perturb_char(S1, 0.3, 7).unwrap());
        assert_ne!(a, S1);
        assert_eq!(a.to_lowercase(), S1.to_lowercase());
        assert!(perturb_char("x", 1.5, 0).is_err());
    }

    #[test]
    fn word_level_sample() {
        let lex = lexicon("different\tunlike\n");
        assert_eq!(
            perturb_word(S1, &lex, 1.0, 0).unwrap(),
            "Write a python function to determine whether all the numbers are unlike from each other are not."
        );
        assert_eq!(perturb_word(S1, &SynonymLexicon::new(), 1.0, 0).unwrap(), S1);
    }

    #[test]
    fn word_punctuation_and_case() {
        let lex = lexicon("not\tnever\nwrite\tcompose\n");
        assert_eq!(
            perturb_word(S1, &lex, 1.0, 0).unwrap(),
            "Compose a python function to determine whether all the numbers are different from each other are never."
        );
        assert_eq!(perturb_word("a  \tb", &lex, 1.0, 0).unwrap(), "a  \tb");
    }

    #[test]
    fn lexicon_errors() {
        assert!(SynonymLexicon::from_tsv("word\n".as_bytes()).is_err());
        assert!(SynonymLexicon::from_tsv("word\ttwo words\n".as_bytes()).is_err());
        let lex = lexicon("# comment\n\nBig\tlarge\thuge\n");
        assert_eq!(lex.get("big").unwrap().len(), 2);
    }

    #[test]
    fn sentence_lookup() {
        let para = "Write a Python function to see if all numbers differ from each other.";
        let line = serde_json::to_string(&ParaphraseEntry {
            id: "S1".into(),
            paraphrase: para.into(),
        })
        .unwrap();
        let table = ParaphraseTable::from_jsonl(line.as_bytes()).unwrap();
        assert_eq!(perturb_sentence("S1", &table).unwrap(), para);
        assert!(matches!(perturb_sentence("S2", &table), Err(Error::Lookup(_))));
    }

    #[test]
    fn prompt_batch_is_deterministic() {
        let prompts: Vec<Prompt> = (0..20)
            .map(|i| Prompt {
                id: format!("p{i}"),
                text: S1.into(),
            })
            .collect();
        let spec = PerturbSpec::new(PerturbLevel::Char, 0.3, 11).unwrap();
        let a = perturb_prompts(&prompts, &spec, Resources::default()).unwrap();
        let b = perturb_prompts(&prompts, &spec, Resources::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].text, a[1].text);
    }
}
