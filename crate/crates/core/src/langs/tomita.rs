use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{strs, Dataset, LabeledSequence};
use crate::automata::Dfa;
use crate::error::{Error, Result};

pub const TOMITA_TRAIN_LENGTHS: &[usize] =
    &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 16, 19, 22];
pub const TOMITA_VALID_LENGTHS: &[usize] = &[1, 4, 7, 10, 13, 16, 19, 22, 25, 28];

/// Hand-built ground-truth automaton for Tomita grammar `grammar` over
/// `{0, 1}`.
pub fn tomita_dfa(grammar: u8) -> Result<Dfa> {
    let ab = &["0", "1"];
    match grammar {
        // 1*
        1 => Dfa::from_table(ab, &[&[1, 0], &[1, 1]], 0, &[0]),
        // (10)*
        2 => Dfa::from_table(ab, &[&[2, 1], &[0, 2], &[2, 2]], 0, &[0]),
        // No odd run of 1s directly followed by an odd run of 0s.
        // 0: even 1-run or inside a free 0-run, 1: odd 1-run,
        // 2: odd 0-run after an odd 1-run, 3: even 0-run after an odd 1-run.
        3 => Dfa::from_table(
            ab,
            &[&[0, 1], &[2, 0], &[3, 4], &[2, 1], &[4, 4]],
            0,
            &[0, 1, 3],
        ),
        // No "000"; state = trailing zeros.
        4 => Dfa::from_table(ab, &[&[1, 0], &[2, 0], &[3, 0], &[3, 3]], 0, &[0, 1, 2]),
        // Even zeros and even ones; state = (zeros mod 2) + 2 (ones mod 2).
        5 => Dfa::from_table(ab, &[&[1, 2], &[0, 3], &[3, 0], &[2, 1]], 0, &[0]),
        // (#1 - #0) mod 3 == 0.
        6 => Dfa::from_table(ab, &[&[2, 1], &[0, 2], &[1, 0]], 0, &[0]),
        // 0*1*0*1*; state = current block.
        7 => Dfa::from_table(
            ab,
            &[&[0, 1], &[2, 1], &[2, 3], &[4, 3], &[4, 4]],
            0,
            &[0, 1, 2, 3],
        ),
        g => Err(Error::InvalidArgument(format!(
            "Tomita grammar must be 1..=7, got {g}"
        ))),
    }
}

/// Membership of a binary string (`"0110"`, possibly empty).
pub fn tomita_accepts(grammar: u8, bits: &str) -> Result<bool> {
    let dfa = tomita_dfa(grammar)?;
    let ids = bits
        .chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::UnknownSymbol(other.to_string())),
        })
        .collect::<Result<Vec<_>>>()?;
    dfa.accepts(&ids)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TomitaSpec {
    pub grammar: u8,
    pub lengths: Vec<usize>,
    /// Lengths with at most this many strings are enumerated in full.
    pub exhaustive_limit: u64,
    /// Above the limit, up to this many distinct strings are drawn per class.
    pub per_class: usize,
    pub seed: u64,
}

impl TomitaSpec {
    pub fn train(grammar: u8, seed: u64) -> Self {
        TomitaSpec {
            grammar,
            lengths: TOMITA_TRAIN_LENGTHS.to_vec(),
            exhaustive_limit: 256,
            per_class: 100,
            seed,
        }
    }

    pub fn valid(grammar: u8, seed: u64) -> Self {
        TomitaSpec {
            lengths: TOMITA_VALID_LENGTHS.to_vec(),
            ..TomitaSpec::train(grammar, seed)
        }
    }
}

const MAX_LEN: usize = 120;

/// Labeled strings per requested length; strings in `exclude` are skipped.
///
/// A length with no string of some class simply contributes none of it.
pub fn gen_tomita(spec: &TomitaSpec, exclude: &HashSet<Vec<usize>>) -> Result<Dataset> {
    let dfa = tomita_dfa(spec.grammar)?;
    if spec.lengths.is_empty() {
        return Err(Error::Unsatisfiable("no lengths requested".into()));
    }
    if let Some(&l) = spec.lengths.iter().find(|&&l| l > MAX_LEN) {
        return Err(Error::Unsatisfiable(format!(
            "length {l} exceeds {MAX_LEN}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = exclude.clone();
    let mut out = Vec::new();
    let mut lengths = spec.lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();

    for len in lengths {
        if (len as u32) < 64 && (1u64 << len) <= spec.exhaustive_limit {
            for bits in 0..(1u64 << len) {
                let w: Vec<usize> = (0..len)
                    .map(|i| ((bits >> (len - 1 - i)) & 1) as usize)
                    .collect();
                if seen.insert(w.clone()) {
                    let y = dfa.accepts(&w)?;
                    out.push(LabeledSequence::labeled(w, y));
                }
            }
            continue;
        }
        for accept in [true, false] {
            let counts = class_counts(&dfa, len, accept);
            let available = counts[len][dfa.start()];
            if available == 0 {
                continue;
            }
            let words = if available <= spec.per_class as u128 {
                enumerate_class(&dfa, &counts, len)
            } else {
                let mut words = Vec::new();
                let mut drawn = HashSet::new();
                while words.len() < spec.per_class {
                    let w = sample_class(&dfa, &counts, len, &mut rng);
                    if drawn.insert(w.clone()) {
                        words.push(w);
                    }
                }
                words
            };
            for w in words {
                if seen.insert(w.clone()) {
                    out.push(LabeledSequence::labeled(w, accept));
                }
            }
        }
    }
    Ok(Dataset {
        alphabet: strs(&["0", "1"]),
        sequences: out,
    })
}

/// `counts[r][q]`: strings of length `r` leading from `q` into the class.
fn class_counts(dfa: &Dfa, len: usize, accept: bool) -> Vec<Vec<u128>> {
    let n = dfa.num_states();
    let mut counts = vec![vec![0u128; n]; len + 1];
    for q in 0..n {
        counts[0][q] = u128::from(dfa.is_accepting(q) == accept);
    }
    for r in 1..=len {
        for q in 0..n {
            counts[r][q] = (0..2)
                .filter_map(|a| dfa.transition(q, a))
                .map(|t| counts[r - 1][t])
                .sum();
        }
    }
    counts
}

fn sample_class(dfa: &Dfa, counts: &[Vec<u128>], len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut q = dfa.start();
    let mut w = Vec::with_capacity(len);
    for r in (1..=len).rev() {
        let c0 = dfa.transition(q, 0).map_or(0, |t| counts[r - 1][t]);
        let total = counts[r][q];
        let a = usize::from(rng.gen_range(0..total) >= c0);
        q = dfa.transition(q, a).expect("counted transition exists");
        w.push(a);
    }
    w
}

fn enumerate_class(dfa: &Dfa, counts: &[Vec<u128>], len: usize) -> Vec<Vec<usize>> {
    fn walk(
        dfa: &Dfa,
        counts: &[Vec<u128>],
        q: usize,
        r: usize,
        prefix: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if r == 0 {
            out.push(prefix.clone());
            return;
        }
        for a in 0..2 {
            if let Some(t) = dfa.transition(q, a) {
                if counts[r - 1][t] > 0 {
                    prefix.push(a);
                    walk(dfa, counts, t, r - 1, prefix, out);
                    prefix.pop();
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(dfa, counts, dfa.start(), len, &mut Vec::new(), &mut out);
    out
}
