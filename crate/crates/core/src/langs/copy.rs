use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, LabeledSequence};
use crate::error::{Error, Result};

pub const COPY_BLANK: usize = 0;
pub const COPY_MARKER: usize = 9;

/// `c0` (blank) through `c9` (recall marker).
pub fn copy_alphabet() -> Vec<String> {
    (0..10).map(|i| format!("c{i}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopySpec {
    pub lag: usize,
    pub span: usize,
    pub count: usize,
    pub seed: u64,
}

impl CopySpec {
    pub fn generate(&self) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        gen_copy_memory(self.lag, self.span, self.count, &mut rng)
    }
}

/// Input: `n` symbols from `c1..=c8`, `T-1` blanks, the marker, `n` blanks.
/// Target: `T+n` blanks, then the `n` symbols.
pub fn gen_copy_memory(
    lag: usize,
    span: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    if lag == 0 || span == 0 {
        return Err(Error::Unsatisfiable(format!(
            "lag {lag} and span {span} must be positive"
        )));
    }
    let total = lag + 2 * span;
    let sequences = (0..count)
        .map(|_| {
            let data: Vec<usize> = (0..span).map(|_| rng.gen_range(1..=8)).collect();
            let mut input = data.clone();
            input.resize(span + lag - 1, COPY_BLANK);
            input.push(COPY_MARKER);
            input.resize(total, COPY_BLANK);
            let mut target = vec![COPY_BLANK; lag + span];
            target.extend(&data);
            LabeledSequence::with_steps(input, target)
        })
        .collect();
    Ok(Dataset {
        alphabet: copy_alphabet(),
        sequences,
    })
}

/// Mean per-step cross entropy (nats) of the predictor that emits blanks
/// until the recall span and a uniform guess over the 8 data symbols there.
pub fn copy_baseline_ce(lag: usize, span: usize) -> f64 {
    span as f64 * 8f64.ln() / (lag + 2 * span) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_for_lag_3() {
        let alphabet = copy_alphabet();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = gen_copy_memory(3, 2, 50, &mut rng).unwrap();
        for s in &ds.sequences {
            let data = &s.tokens[..2];
            let mut expected = data.to_vec();
            expected.extend([0, 0, 9, 0, 0]);
            assert_eq!(s.tokens, expected);
            let mut target = vec![0; 5];
            target.extend(data);
            assert_eq!(s.steps().unwrap(), &target[..]);
        }
        let shown: Vec<&str> = ds.symbols(&ds.sequences[0].tokens);
        assert_eq!(shown.len(), 7);
        assert_eq!(alphabet[9], "c9");
    }

    #[test]
    fn marker_position_and_length() {
        let ds = CopySpec {
            lag: 100,
            span: 10,
            count: 20,
            seed: 1,
        }
        .generate()
        .unwrap();
        for s in &ds.sequences {
            assert_eq!(s.tokens.len(), 120);
            assert_eq!(s.tokens.iter().filter(|&&t| t == COPY_MARKER).count(), 1);
            assert_eq!(s.tokens[10 + 100 - 1], COPY_MARKER);
        }
    }

    #[test]
    fn baseline_value() {
        assert!((copy_baseline_ce(100, 10) - 10.0 * 8f64.ln() / 120.0).abs() < 1e-15);
        assert!((copy_baseline_ce(100, 10) - 0.17328).abs() < 1e-5);
    }

    #[test]
    fn baseline_predictor_matches_closed_form_on_samples() {
        let (lag, span) = (100, 10);
        let ds = CopySpec {
            lag,
            span,
            count: 2000,
            seed: 4,
        }
        .generate()
        .unwrap();
        let mut total = 0.0;
        let mut steps = 0usize;
        for s in &ds.sequences {
            for (t, &y) in s.steps().unwrap().iter().enumerate() {
                let p = if t < lag + span {
                    if y == COPY_BLANK {
                        1.0
                    } else {
                        0.0
                    }
                } else if (1..=8).contains(&y) {
                    1.0 / 8.0
                } else {
                    0.0
                };
                total -= f64::ln(p);
                steps += 1;
            }
        }
        assert!((total / steps as f64 - copy_baseline_ce(lag, span)).abs() < 1e-9);
    }
}
