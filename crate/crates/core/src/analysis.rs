//! Interpretability exports: token prototypes, state traces and ranked
//! transition profiles. All runs use mixture selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::langs::Dataset;
use crate::model::{Selection, SrRnn};
use crate::state_reg::argmax;

fn centroid_count(model: &SrRnn) -> Result<usize> {
    model
        .k()
        .ok_or_else(|| Error::InvalidArgument("analysis needs a state-regularized model".into()))
}

fn check(model: &SrRnn, dataset: &Dataset) -> Result<usize> {
    let k = centroid_count(model)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.alphabet != model.vocabulary().alphabet() {
        return Err(Error::AlphabetMismatch {
            expected: model.vocabulary().alphabet().join(","),
            found: dataset.alphabet.join(","),
        });
    }
    Ok(k)
}

/// Per centroid, the tokens with the highest mean transition probability into
/// that centroid, sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeTable {
    pub tokens: Vec<String>,
    /// `rows[i]` = `(token id, mean α_i)` pairs for centroid `i`.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl PrototypeTable {
    /// `centroid,token,mean_prob,rank` with 1-based ranks.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("centroid,token,mean_prob,rank\n");
        for (i, row) in self.rows.iter().enumerate() {
            for (r, &(tok, p)) in row.iter().enumerate() {
                let _ = writeln!(out, "{i},{},{p},{}", self.tokens[tok], r + 1);
            }
        }
        out
    }
}

/// Mean `α` after each occurrence of each alphabet token; tokens that never
/// occur are left out. Ties keep the lower token id first.
pub fn token_prototypes(model: &SrRnn, dataset: &Dataset, top_n: usize) -> Result<PrototypeTable> {
    let k = check(model, dataset)?;
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for s in &dataset.sequences {
        let run = model.run_sequence(&s.tokens, &mut Selection::Mixture)?;
        for (t, &x) in s.tokens.iter().enumerate() {
            let e = sums.entry(x).or_insert_with(|| (vec![0.0; k], 0));
            for (acc, a) in e.0.iter_mut().zip(&run.alphas[t + 1]) {
                *acc += a;
            }
            e.1 += 1;
        }
    }
    let mut rows = vec![Vec::new(); k];
    for (&tok, (sum, n)) in &sums {
        for (i, row) in rows.iter_mut().enumerate() {
            row.push((tok, sum[i] / *n as f64));
        }
    }
    for row in &mut rows {
        row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        row.truncate(top_n);
    }
    Ok(PrototypeTable {
        tokens: model.vocabulary().tokens().to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub token: String,
    pub state: usize,
    pub alpha: Vec<f64>,
    pub h: Vec<f64>,
    /// Empty for GRUs.
    pub c: Vec<f64>,
}

/// One row per step, the start token included.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub rows: Vec<TraceRow>,
}

impl StateTrace {
    /// `t,token,state,alpha_0..,h_0..[,c_0..]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,token,state");
        if let Some(first) = self.rows.first() {
            for (prefix, n) in [
                ("alpha", first.alpha.len()),
                ("h", first.h.len()),
                ("c", first.c.len()),
            ] {
                for i in 0..n {
                    let _ = write!(out, ",{prefix}_{i}");
                }
            }
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.t, r.token, r.state);
            for v in r.alpha.iter().chain(&r.h).chain(&r.c) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn state_trace(model: &SrRnn, tokens: &[usize]) -> Result<StateTrace> {
    centroid_count(model)?;
    let run = model.run_sequence(tokens, &mut Selection::Mixture)?;
    let vocab = model.vocabulary();
    let ids = std::iter::once(vocab.start()).chain(tokens.iter().copied());
    let rows = ids
        .enumerate()
        .map(|(t, id)| TraceRow {
            t,
            token: vocab.tokens()[id].clone(),
            state: argmax(&run.alphas[t]),
            alpha: run.alphas[t].clone(),
            h: run.hidden[t].clone(),
            c: run.cells[t].clone(),
        })
        .collect();
    Ok(StateTrace { rows })
}

/// Positionwise mean of every step's `α` sorted descending (start steps
/// included).
pub fn ranked_alpha_profile(model: &SrRnn, dataset: &Dataset) -> Result<Vec<f64>> {
    let k = check(model, dataset)?;
    let mut sum = vec![0.0; k];
    let mut steps = 0usize;
    for s in &dataset.sequences {
        let run = model.run_sequence(&s.tokens, &mut Selection::Mixture)?;
        for alpha in &run.alphas {
            let mut sorted = alpha.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            for (acc, v) in sum.iter_mut().zip(sorted) {
                *acc += v;
            }
            steps += 1;
        }
    }
    Ok(sum.into_iter().map(|v| v / steps as f64).collect())
}

/// `rank,mean_prob` with 1-based ranks.
pub fn profile_csv(profile: &[f64]) -> String {
    let mut out = String::from("rank,mean_prob\n");
    for (r, p) in profile.iter().enumerate() {
        let _ = writeln!(out, "{},{p}", r + 1);
    }
    out
}
