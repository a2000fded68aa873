//! Ground-truth recognizers and labeled dataset generators.

mod bp;
mod copy;
mod io;
mod palindrome;
mod tomita;

use std::collections::HashSet;

pub use bp::{bp_accepts, bp_alphabet, gen_bp, BpSpec};
pub use copy::{
    copy_alphabet, copy_baseline_ce, gen_copy_memory, CopySpec, COPY_BLANK, COPY_MARKER,
};
pub use io::{read_dataset, write_dataset};
pub use palindrome::{gen_palindrome, is_palindrome, palindrome_alphabet, PalindromeSpec};
pub use tomita::{
    gen_tomita, tomita_accepts, tomita_dfa, TomitaSpec, TOMITA_TRAIN_LENGTHS, TOMITA_VALID_LENGTHS,
};

use crate::error::{Error, Result};

/// Supervision attached to a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Target {
    /// Accept (1) or reject (0).
    Label(usize),
    /// One target symbol id per input position.
    Steps(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledSequence {
    pub tokens: Vec<usize>,
    pub target: Target,
}

impl LabeledSequence {
    pub fn labeled(tokens: Vec<usize>, accept: bool) -> Self {
        LabeledSequence {
            tokens,
            target: Target::Label(usize::from(accept)),
        }
    }

    pub fn with_steps(tokens: Vec<usize>, targets: Vec<usize>) -> Self {
        LabeledSequence {
            tokens,
            target: Target::Steps(targets),
        }
    }

    pub fn label(&self) -> Option<usize> {
        match self.target {
            Target::Label(l) => Some(l),
            Target::Steps(_) => None,
        }
    }

    pub fn steps(&self) -> Option<&[usize]> {
        match &self.target {
            Target::Steps(s) => Some(s),
            Target::Label(_) => None,
        }
    }
}

/// Sequences over a named alphabet; token ids index `alphabet`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub alphabet: Vec<String>,
    pub sequences: Vec<LabeledSequence>,
}

impl Dataset {
    pub fn new(alphabet: Vec<String>, sequences: Vec<LabeledSequence>) -> Result<Self> {
        let ds = Dataset {
            alphabet,
            sequences,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(alphabet: Vec<String>) -> Self {
        Dataset {
            alphabet,
            sequences: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.sequences
            .iter()
            .filter(|s| s.label() == Some(1))
            .count()
    }

    /// Token ids in range, step targets aligned with inputs, labels binary.
    pub fn validate(&self) -> Result<()> {
        let n = self.alphabet.len();
        for s in &self.sequences {
            if let Some(&t) = s.tokens.iter().find(|&&t| t >= n) {
                return Err(Error::UnknownToken { id: t, size: n });
            }
            match &s.target {
                Target::Label(l) if *l > 1 => {
                    return Err(Error::InvalidArgument(format!("label {l} is not binary")));
                }
                Target::Steps(steps) => {
                    if steps.len() != s.tokens.len() {
                        return Err(Error::InvalidArgument(format!(
                            "{} step targets for {} inputs",
                            steps.len(),
                            s.tokens.len()
                        )));
                    }
                    if let Some(&t) = steps.iter().find(|&&t| t >= n) {
                        return Err(Error::UnknownToken { id: t, size: n });
                    }
                }
                Target::Label(_) => {}
            }
        }
        Ok(())
    }

    pub fn symbols(&self, tokens: &[usize]) -> Vec<&str> {
        tokens.iter().map(|&t| self.alphabet[t].as_str()).collect()
    }

    /// Parses whitespace-separated symbols, or single characters when the
    /// input has no whitespace and every symbol is one character long.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        encode(&self.alphabet, text)
    }

    /// Concatenation of two datasets over the same alphabet.
    pub fn union(&self, other: &Dataset) -> Result<Dataset> {
        if self.alphabet != other.alphabet {
            return Err(Error::AlphabetMismatch {
                expected: self.alphabet.join(","),
                found: other.alphabet.join(","),
            });
        }
        let mut sequences = self.sequences.clone();
        sequences.extend(other.sequences.iter().cloned());
        Ok(Dataset {
            alphabet: self.alphabet.clone(),
            sequences,
        })
    }

    pub fn token_set(&self) -> HashSet<Vec<usize>> {
        self.sequences.iter().map(|s| s.tokens.clone()).collect()
    }
}

pub(crate) fn encode(alphabet: &[String], text: &str) -> Result<Vec<usize>> {
    let lookup = |s: &str| {
        alphabet
            .iter()
            .position(|a| a == s)
            .ok_or_else(|| Error::UnknownSymbol(s.to_string()))
    };
    let text = text.trim();
    if text.contains(char::is_whitespace) || !alphabet.iter().all(|a| a.chars().count() == 1) {
        text.split_whitespace().map(lookup).collect()
    } else {
        text.chars().map(|c| lookup(&c.to_string())).collect()
    }
}

pub(crate) fn strs(symbols: &[&str]) -> Vec<String> {
    symbols.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_accepts_compact_and_spaced_forms() {
        let a = strs(&["0", "1"]);
        assert_eq!(encode(&a, "0110").unwrap(), vec![0, 1, 1, 0]);
        assert_eq!(encode(&a, "0 1 1").unwrap(), vec![0, 1, 1]);
        assert_eq!(encode(&a, "").unwrap(), Vec::<usize>::new());
        assert!(encode(&a, "012").is_err());
        let c = copy_alphabet();
        assert_eq!(encode(&c, "c1 c9").unwrap(), vec![1, 9]);
    }

    #[test]
    fn validation_rejects_bad_records() {
        let a = strs(&["0", "1"]);
        assert!(Dataset::new(a.clone(), vec![LabeledSequence::labeled(vec![2], true)]).is_err());
        let misaligned = LabeledSequence::with_steps(vec![0, 1], vec![0]);
        assert!(Dataset::new(a, vec![misaligned]).is_err());
    }
}
