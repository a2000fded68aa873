use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, LabeledSequence};
use crate::error::{Error, Result};

pub fn palindrome_alphabet() -> Vec<String> {
    ('a'..='z').map(|c| c.to_string()).collect()
}

pub fn is_palindrome<T: PartialEq>(s: &[T]) -> bool {
    s.iter().eq(s.iter().rev())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PalindromeSpec {
    pub count: usize,
    /// Inclusive bounds on `|w|` for strings `w · reverse(w)`.
    pub half_len: (usize, usize),
    pub pos_fraction: f64,
    pub seed: u64,
}

impl PalindromeSpec {
    pub fn train(count: usize, seed: u64) -> Self {
        PalindromeSpec {
            count,
            half_len: (1, 25),
            pos_fraction: 0.5,
            seed,
        }
    }
}

/// Positives `w · reverse(w)`; negatives are positives with one symbol
/// replaced, which always breaks the mirror symmetry.
pub fn gen_palindrome(spec: &PalindromeSpec, exclude: &HashSet<Vec<usize>>) -> Result<Dataset> {
    let (lo, hi) = spec.half_len;
    if lo == 0 || lo > hi || spec.count == 0 || !(0.0..=1.0).contains(&spec.pos_fraction) {
        return Err(Error::Unsatisfiable(format!(
            "half length [{lo}, {hi}], count {}, pos_fraction {}",
            spec.count, spec.pos_fraction
        )));
    }
    let n_pos = (spec.count as f64 * spec.pos_fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = exclude.clone();
    let mut out = Vec::with_capacity(spec.count);
    let budget = 1000 * spec.count + 10_000;
    let mut attempts = 0;
    while out.len() < spec.count {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Unsatisfiable(format!(
                "only {} distinct strings found",
                out.len()
            )));
        }
        let positive = out.len() < n_pos;
        let half = rng.gen_range(lo..=hi);
        let w: Vec<usize> = (0..half).map(|_| rng.gen_range(0..26)).collect();
        let mut s = w.clone();
        s.extend(w.iter().rev());
        if !positive {
            let i = rng.gen_range(0..s.len());
            s[i] = (s[i] + rng.gen_range(1..26)) % 26;
        }
        debug_assert_eq!(is_palindrome(&s), positive);
        if seen.insert(s.clone()) {
            out.push(LabeledSequence::labeled(s, positive));
        }
    }
    Ok(Dataset {
        alphabet: palindrome_alphabet(),
        sequences: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!(is_palindrome(&"abba".chars().collect::<Vec<_>>()));
        assert!(!is_palindrome(&"abca".chars().collect::<Vec<_>>()));
    }

    #[test]
    fn labels_match_recognizer() {
        let spec = PalindromeSpec {
            pos_fraction: 0.5,
            ..PalindromeSpec::train(20_000, 9)
        };
        let ds = gen_palindrome(&spec, &HashSet::new()).unwrap();
        assert_eq!(ds.positives(), 10_000);
        for s in &ds.sequences {
            assert_eq!(is_palindrome(&s.tokens), s.label() == Some(1));
            assert_eq!(s.tokens.len() % 2, 0);
            assert!((2..=50).contains(&s.tokens.len()));
        }
    }
}
