use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, LabeledSequence};
use crate::error::{Error, Result};

const OPEN: usize = 0;
const CLOSE: usize = 1;

/// `(`, `)`, then `a..=z`.
pub fn bp_alphabet() -> Vec<String> {
    let mut a = vec!["(".to_string(), ")".to_string()];
    a.extend(('a'..='z').map(|c| c.to_string()));
    a
}

/// Counter scan: `(balanced, max depth)`. Letters are ignored.
pub fn bp_accepts(s: &str) -> Result<(bool, usize)> {
    let mut depth: i64 = 0;
    let mut max = 0;
    let mut ok = true;
    for c in s.chars() {
        match c {
            '(' => {
                depth += 1;
                max = max.max(depth as usize);
            }
            ')' => {
                depth -= 1;
                if depth < 0 {
                    ok = false;
                }
            }
            'a'..='z' => {}
            other => return Err(Error::UnknownSymbol(other.to_string())),
        }
    }
    Ok((ok && depth == 0, max))
}

fn scan(tokens: &[usize]) -> (bool, usize) {
    let mut depth: i64 = 0;
    let mut max = 0;
    let mut ok = true;
    for &t in tokens {
        if t == OPEN {
            depth += 1;
            max = max.max(depth as usize);
        } else if t == CLOSE {
            depth -= 1;
            ok &= depth >= 0;
        }
    }
    (ok && depth == 0, max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpSpec {
    pub count: usize,
    /// Inclusive bounds on the maximum nesting depth of positives.
    pub depth: (usize, usize),
    pub max_len: usize,
    pub pos_fraction: f64,
    pub seed: u64,
}

impl BpSpec {
    /// Small training split: 1,008 sequences, 601 positive, depth 1..=5.
    pub fn small_train(seed: u64) -> Self {
        BpSpec {
            count: 1008,
            depth: (1, 5),
            max_len: 100,
            pos_fraction: 601.0 / 1008.0,
            seed,
        }
    }

    /// Small validation split: 268 sequences, 142 positive, depth 6..=10.
    pub fn small_valid(seed: u64) -> Self {
        BpSpec {
            count: 268,
            depth: (6, 10),
            pos_fraction: 142.0 / 268.0,
            ..BpSpec::small_train(seed)
        }
    }

    /// Extrapolation test split: 1,000 sequences, depth 6..=10.
    pub fn small_test(seed: u64) -> Self {
        BpSpec {
            count: 1000,
            depth: (6, 10),
            pos_fraction: 0.5,
            ..BpSpec::small_train(seed)
        }
    }
}

/// Balanced strings with interspersed letters plus locally corrupted
/// negatives. Sequences in `exclude` are never emitted.
pub fn gen_bp(spec: &BpSpec, exclude: &HashSet<Vec<usize>>) -> Result<Dataset> {
    let (lo, hi) = spec.depth;
    if lo == 0 || lo > hi {
        return Err(Error::Unsatisfiable(format!("depth range [{lo}, {hi}]")));
    }
    if 2 * hi > spec.max_len {
        return Err(Error::Unsatisfiable(format!(
            "depth {hi} needs length {} > {}",
            2 * hi,
            spec.max_len
        )));
    }
    if spec.count == 0 || !(0.0..=1.0).contains(&spec.pos_fraction) {
        return Err(Error::Unsatisfiable(
            "count must be positive and pos_fraction in [0, 1]".into(),
        ));
    }
    let n_pos = (spec.count as f64 * spec.pos_fraction).round() as usize;
    let n_neg = spec.count - n_pos;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = exclude.clone();
    let mut out = Vec::with_capacity(spec.count);
    let budget = 1000 * spec.count + 10_000;
    let mut attempts = 0;

    let (mut pos, mut neg) = (0, 0);
    while pos < n_pos || neg < n_neg {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Unsatisfiable(format!(
                "only {pos}/{n_pos} positives and {neg}/{n_neg} negatives are distinct"
            )));
        }
        let want_pos = if pos == n_pos {
            false
        } else if neg == n_neg {
            true
        } else {
            rng.gen_bool(n_pos as f64 / (n_pos + n_neg) as f64)
        };
        let positive = sample_positive(spec, &mut rng);
        let candidate = if want_pos {
            positive
        } else {
            corrupt(&positive, &mut rng)
        };
        let (balanced, depth) = scan(&candidate);
        debug_assert!(!want_pos || (balanced && (lo..=hi).contains(&depth)));
        if balanced != want_pos || !seen.insert(candidate.clone()) {
            continue;
        }
        out.push(LabeledSequence::labeled(candidate, want_pos));
        if want_pos {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    Ok(Dataset {
        alphabet: bp_alphabet(),
        sequences: out,
    })
}

fn sample_positive(spec: &BpSpec, rng: &mut impl Rng) -> Vec<usize> {
    let depth = rng.gen_range(spec.depth.0..=spec.depth.1);
    let max_pairs = (spec.max_len / 2).min(depth + 10);
    let pairs = rng.gen_range(depth..=max_pairs);
    let mut parens = bounded_dyck(pairs, depth, rng);

    let room = spec.max_len - 2 * pairs;
    let letters = rng.gen_range(0..=room.min(2 * pairs));
    for _ in 0..letters {
        let at = rng.gen_range(0..=parens.len());
        parens.insert(at, 2 + rng.gen_range(0..26));
    }
    parens
}

/// Uniform Dyck word with `pairs` pairs whose height never exceeds `depth`,
/// retried until the height is reached; falls back to a spine of `depth`
/// followed by flat pairs.
fn bounded_dyck(pairs: usize, depth: usize, rng: &mut impl Rng) -> Vec<usize> {
    let steps = 2 * pairs;
    // ways[i][h]: completions of the remaining `i` steps from height `h`.
    let mut ways = vec![vec![0f64; depth + 2]; steps + 1];
    ways[0][0] = 1.0;
    for i in 1..=steps {
        for h in 0..=depth {
            let up = if h < depth { ways[i - 1][h + 1] } else { 0.0 };
            let down = if h > 0 { ways[i - 1][h - 1] } else { 0.0 };
            ways[i][h] = up + down;
        }
    }
    for _ in 0..64 {
        let mut h = 0;
        let mut word = Vec::with_capacity(steps);
        let mut reached = 0;
        for i in (1..=steps).rev() {
            let up = if h < depth { ways[i - 1][h + 1] } else { 0.0 };
            let total = ways[i][h];
            if rng.gen::<f64>() * total < up {
                h += 1;
                word.push(OPEN);
            } else {
                h -= 1;
                word.push(CLOSE);
            }
            reached = reached.max(h);
        }
        if reached == depth {
            return word;
        }
    }
    let mut word = vec![OPEN; depth];
    word.extend(std::iter::repeat_n(CLOSE, depth));
    for _ in depth..pairs {
        word.extend([OPEN, CLOSE]);
    }
    word
}

/// One of: drop a parenthesis, flip a parenthesis, swap a matched pair.
fn corrupt(s: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let parens: Vec<usize> = (0..s.len()).filter(|&i| s[i] <= CLOSE).collect();
    let mut out = s.to_vec();
    let &i = parens
        .choose(rng)
        .expect("positives contain at least one pair");
    match rng.gen_range(0..3) {
        0 => {
            out.remove(i);
        }
        1 => out[i] = 1 - out[i],
        _ => {
            let (open, close) = matched_pair(s, i);
            out[open] = CLOSE;
            out[close] = OPEN;
        }
    }
    out
}

fn matched_pair(s: &[usize], i: usize) -> (usize, usize) {
    let mut stack = Vec::new();
    for (j, &t) in s.iter().enumerate() {
        if t == OPEN {
            stack.push(j);
        } else if t == CLOSE {
            let o = stack.pop().expect("balanced input");
            if o == i || j == i {
                return (o, j);
            }
        }
    }
    unreachable!("index {i} is a parenthesis of a balanced string")
}
