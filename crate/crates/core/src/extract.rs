//! DFA extraction from a trained state-regularized network.
//!
//! Sequences are run with hard propagation (the argmax centroid is fed
//! forward), transitions between centroids are counted, and the most frequent
//! successor of every observed (centroid, symbol) pair becomes the DFA edge.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::automata::Dfa;
use crate::error::{Error, Result};
use crate::langs::Dataset;
use crate::model::{HeadKind, Selection, SrRnn};

/// Sparse `(from, symbol, to) → count` map plus the start centroid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    /// Centroid selected after the start token.
    pub start: usize,
    pub k: usize,
    pub counts: BTreeMap<(usize, usize, usize), u64>,
}

impl TransitionCounts {
    pub fn new(start: usize, k: usize) -> Self {
        TransitionCounts {
            start,
            k,
            counts: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, from: usize, symbol: usize, to: usize, n: u64) {
        *self.counts.entry((from, symbol, to)).or_insert(0) += n;
    }

    pub fn merge(&mut self, other: &TransitionCounts) {
        for (&(a, x, b), &n) in &other.counts {
            self.add(a, x, b, n);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `state,token,next_state,count` rows in key order.
    pub fn to_csv(&self, alphabet: &[String]) -> String {
        let mut out = String::from("state,token,next_state,count\n");
        for (&(a, x, b), &n) in &self.counts {
            let sym = alphabet.get(x).map(String::as_str).unwrap_or("?");
            let _ = writeln!(out, "{a},{sym},{b},{n}");
        }
        out
    }
}

fn check_model(model: &SrRnn) -> Result<usize> {
    if model.architecture().head != HeadKind::Classify {
        return Err(Error::InvalidArgument(
            "extraction needs a classifier head".into(),
        ));
    }
    model
        .k()
        .ok_or_else(|| Error::InvalidArgument("extraction needs a state-regularized model".into()))
}

fn check_alphabet(model: &SrRnn, dataset: &Dataset) -> Result<()> {
    if dataset.alphabet != model.vocabulary().alphabet() {
        return Err(Error::AlphabetMismatch {
            expected: model.vocabulary().alphabet().join(","),
            found: dataset.alphabet.join(","),
        });
    }
    Ok(())
}

fn trace_into(model: &SrRnn, tokens: &[usize], counts: &mut TransitionCounts) -> Result<()> {
    let run = model.run_sequence(tokens, &mut Selection::Hard)?;
    for (t, &x) in tokens.iter().enumerate() {
        counts.add(run.states[t], x, run.states[t + 1], 1);
    }
    Ok(())
}

/// Hard-propagation transition counts over every sequence of `dataset`.
pub fn collect_traces(model: &SrRnn, dataset: &Dataset) -> Result<TransitionCounts> {
    collect_traces_parallel(model, dataset, 1)
}

/// [`collect_traces`] split over `jobs` threads; the merged counts do not
/// depend on `jobs`.
pub fn collect_traces_parallel(
    model: &SrRnn,
    dataset: &Dataset,
    jobs: usize,
) -> Result<TransitionCounts> {
    let k = check_model(model)?;
    check_alphabet(model, dataset)?;
    let start = model.run_sequence(&[], &mut Selection::Hard)?.states[0];
    let mut counts = TransitionCounts::new(start, k);
    let jobs = jobs.max(1);
    if jobs == 1 || dataset.len() < 2 * jobs {
        for s in &dataset.sequences {
            trace_into(model, &s.tokens, &mut counts)?;
        }
        return Ok(counts);
    }
    let chunk = dataset.len().div_ceil(jobs);
    let parts: Vec<Result<TransitionCounts>> = std::thread::scope(|scope| {
        let handles: Vec<_> = dataset
            .sequences
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    let mut c = TransitionCounts::new(start, k);
                    for s in part {
                        trace_into(model, &s.tokens, &mut c)?;
                    }
                    Ok(c)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("trace worker panicked"))
            .collect()
    });
    for p in parts {
        counts.merge(&p?);
    }
    Ok(counts)
}

/// A DFA whose states stand for centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub dfa: Dfa,
    /// Centroid index of each DFA state; `None` marks the completion sink.
    pub centroids: Vec<Option<usize>>,
}

impl Extracted {
    /// State labels for DOT rendering: centroid indices, `sink` for the sink.
    pub fn labels(&self) -> Vec<String> {
        self.centroids
            .iter()
            .map(|c| c.map_or_else(|| "sink".to_string(), |c| c.to_string()))
            .collect()
    }
}

/// Most-frequent-transition DFA restricted to centroids reachable from the
/// start centroid. Ties go to the lower centroid index; unobserved pairs stay
/// undefined and no state accepts yet.
pub fn build_dfa(counts: &TransitionCounts, alphabet: &[String]) -> Result<Extracted> {
    let n_sym = alphabet.len();
    // best[(from, symbol)] = (count, to); iteration is in ascending `to`, so a
    // strictly-greater comparison keeps the lowest index on ties.
    let mut best: BTreeMap<(usize, usize), (u64, usize)> = BTreeMap::new();
    for (&(a, x, b), &n) in &counts.counts {
        if x >= n_sym {
            return Err(Error::UnknownToken { id: x, size: n_sym });
        }
        let e = best.entry((a, x)).or_insert((n, b));
        if n > e.0 {
            *e = (n, b);
        }
    }
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut centroids = vec![counts.start];
    index.insert(counts.start, 0);
    let mut queue = VecDeque::from([counts.start]);
    let mut edges = Vec::new();
    while let Some(a) = queue.pop_front() {
        for x in 0..n_sym {
            if let Some(&(_, b)) = best.get(&(a, x)) {
                if let std::collections::btree_map::Entry::Vacant(e) = index.entry(b) {
                    e.insert(centroids.len());
                    centroids.push(b);
                    queue.push_back(b);
                }
                edges.push((index[&a], x, index[&b]));
            }
        }
    }
    let mut delta = vec![vec![None; n_sym]; centroids.len()];
    for (a, x, b) in edges {
        delta[a][x] = Some(b);
    }
    let accepting = vec![false; centroids.len()];
    let dfa = Dfa::new(alphabet.to_vec(), delta, 0, accepting)?;
    Ok(Extracted {
        dfa,
        centroids: centroids.into_iter().map(Some).collect(),
    })
}

/// Accept flags by probing each centroid: `h = s_i` (and `c = 0` for cells
/// with memory, which makes the result approximate), then the end step and
/// the classifier. A state accepts iff the accept logit is strictly larger.
pub fn accept_states(model: &SrRnn, extracted: &Extracted) -> Result<Vec<bool>> {
    check_model(model)?;
    let set = model.centroid_set().expect("regularized");
    extracted
        .centroids
        .iter()
        .map(|c| match c {
            Some(j) => {
                let logits = model.end_logits(&set.column(*j), None)?;
                Ok(logits[1] > logits[0])
            }
            None => Ok(false),
        })
        .collect()
}

/// Result of [`extract_dfa`].
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub counts: TransitionCounts,
    /// Partial DFA with accept states.
    pub raw: Extracted,
    /// `raw` completed with a rejecting sink.
    pub complete: Extracted,
    /// True for cells with memory, where a centroid does not fix the full
    /// configuration.
    pub approximate: bool,
}

pub fn extract_dfa(model: &SrRnn, dataset: &Dataset) -> Result<Extraction> {
    extract_dfa_parallel(model, dataset, 1)
}

pub fn extract_dfa_parallel(model: &SrRnn, dataset: &Dataset, jobs: usize) -> Result<Extraction> {
    let counts = collect_traces_parallel(model, dataset, jobs)?;
    let mut raw = build_dfa(&counts, model.vocabulary().alphabet())?;
    let accepting = accept_states(model, &raw)?;
    raw.dfa = raw.dfa.with_accepting(accepting)?;
    let dfa = raw.dfa.complete();
    let mut centroids = raw.centroids.clone();
    centroids.resize(dfa.num_states(), None);
    Ok(Extraction {
        counts,
        complete: Extracted { dfa, centroids },
        raw,
        approximate: model.architecture().cell.has_memory(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::to_dot;
    use crate::cells::CellKind;
    use crate::langs::{strs, LabeledSequence};
    use crate::model::Architecture;
    use proptest::prelude::*;

    fn counts(start: usize, entries: &[((usize, usize, usize), u64)]) -> TransitionCounts {
        let mut c = TransitionCounts::new(start, 4);
        for &((a, x, b), n) in entries {
            c.add(a, x, b, n);
        }
        c
    }

    #[test]
    fn majority_and_tie_break() {
        let ab = strs(&["0", "1"]);
        let e = build_dfa(&counts(0, &[((0, 1, 0), 90), ((0, 1, 1), 10)]), &ab).unwrap();
        assert_eq!(e.dfa.num_states(), 1);
        assert_eq!(e.dfa.transition(0, 1), Some(0));
        assert_eq!(e.dfa.transition(0, 0), None);

        let e = build_dfa(&counts(0, &[((0, 0, 3), 50), ((0, 0, 2), 50)]), &ab).unwrap();
        assert_eq!(e.centroids, vec![Some(0), Some(2)]);
        assert_eq!(e.dfa.transition(0, 0), Some(1));
    }

    #[test]
    fn only_reachable_centroids_survive() {
        let ab = strs(&["0", "1"]);
        let c = counts(
            2,
            &[
                ((2, 0, 1), 5),
                ((1, 1, 2), 5),
                ((3, 0, 0), 100),
                ((0, 1, 3), 7),
            ],
        );
        let e = build_dfa(&c, &ab).unwrap();
        assert_eq!(e.centroids, vec![Some(2), Some(1)]);
        assert_eq!(e.dfa.reachable().len(), e.dfa.num_states());
        let again = build_dfa(&c, &ab).unwrap();
        assert_eq!(
            to_dot(&e.dfa, Some(&e.labels())),
            to_dot(&again.dfa, Some(&again.labels()))
        );
        assert!(build_dfa(&counts(0, &[((0, 5, 0), 1)]), &ab).is_err());
    }

    fn model(cell: CellKind, seed: u64) -> SrRnn {
        SrRnn::new(
            Architecture::classifier(cell, 6, Some(4), &strs(&["0", "1"])).unwrap(),
            seed,
        )
        .unwrap()
    }

    fn binary_dataset(max_len: usize) -> Dataset {
        let mut seqs = Vec::new();
        for len in 0..=max_len {
            for bits in 0..(1usize << len) {
                let tokens: Vec<usize> = (0..len).map(|i| (bits >> i) & 1).collect();
                seqs.push(LabeledSequence::labeled(tokens, false));
            }
        }
        Dataset::new(strs(&["0", "1"]), seqs).unwrap()
    }

    #[test]
    fn empty_and_single_sequence_traces() {
        let m = model(CellKind::Gru, 1);
        let empty = collect_traces(&m, &Dataset::empty(strs(&["0", "1"]))).unwrap();
        assert!(empty.is_empty());
        assert!(empty.start < 4);
        let one = Dataset::new(
            strs(&["0", "1"]),
            vec![LabeledSequence::labeled(vec![1], true)],
        )
        .unwrap();
        let c = collect_traces(&m, &one).unwrap();
        assert_eq!(c.counts.len(), 1);
        let (&(a, x, _), &n) = c.counts.iter().next().unwrap();
        assert_eq!((a, x, n), (c.start, 1, 1));
        let bad = Dataset::empty(strs(&["a", "b"]));
        assert!(matches!(
            collect_traces(&m, &bad),
            Err(Error::AlphabetMismatch { .. })
        ));
    }

    #[test]
    fn parallel_collection_matches_sequential() {
        let m = model(CellKind::Lstm, 2);
        let ds = binary_dataset(6);
        let seq = collect_traces(&m, &ds).unwrap();
        assert_eq!(collect_traces_parallel(&m, &ds, 3).unwrap(), seq);
        let total: u64 = seq.counts.values().sum();
        let symbols: usize = ds.sequences.iter().map(|s| s.tokens.len()).sum();
        assert_eq!(total as usize, symbols);
        assert!(seq.counts.keys().all(|&(a, _, b)| a < 4 && b < 4));
    }

    #[test]
    fn random_models_yield_total_reachable_dfas() {
        for cell in [CellKind::Gru, CellKind::Lstm, CellKind::LstmP] {
            let m = model(cell, 5);
            let ds = binary_dataset(5);
            let ex = extract_dfa(&m, &ds).unwrap();
            assert!(ex.complete.dfa.is_complete());
            assert_eq!(ex.raw.dfa.reachable().len(), ex.raw.dfa.num_states());
            assert_eq!(ex.approximate, cell.has_memory());
            assert_eq!(ex, extract_dfa(&m, &ds).unwrap());
        }
    }

    #[test]
    fn always_accepting_classifier() {
        let mut m = model(CellKind::Gru, 3);
        let head_b = m.params().find("head.b").unwrap();
        m.params_mut()
            .get_mut(head_b)
            .value
            .data_mut()
            .copy_from_slice(&[-1e6, 1e6]);
        let ex = extract_dfa(&m, &binary_dataset(4)).unwrap();
        let n = ex.raw.dfa.num_states();
        assert_eq!(ex.raw.dfa.accepting_states(), (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn extracted_dfa_replays_hard_runs_for_gru() {
        // With memory-less cells and one observation per (state, symbol), the
        // extracted DFA reproduces the network's hard-mode decisions exactly.
        let m = model(CellKind::Gru, 11);
        let ds = binary_dataset(6);
        let ex = extract_dfa(&m, &ds).unwrap();
        let set = m.centroid_set().unwrap();
        for s in &ds.sequences {
            let run = m.run_sequence(&s.tokens, &mut Selection::Hard).unwrap();
            let mut q = ex.raw.dfa.start();
            let mut consistent = true;
            for (t, &x) in s.tokens.iter().enumerate() {
                match ex.raw.dfa.transition(q, x) {
                    Some(n) if ex.raw.centroids[n] == Some(run.states[t + 1]) => q = n,
                    _ => {
                        consistent = false;
                        break;
                    }
                }
            }
            if consistent {
                let j = *run.states.last().unwrap();
                assert_eq!(run.hidden.last().unwrap(), &set.column(j));
                let net = run.logits[1] > run.logits[0];
                assert_eq!(ex.raw.dfa.is_accepting(q), net);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn gru_hard_runs_forget_the_prefix(seed in 0u64..1000, a in proptest::collection::vec(0usize..2, 0..8),
                                            b in proptest::collection::vec(0usize..2, 0..8), x in 0usize..2) {
            let m = model(CellKind::Gru, seed);
            let ra = m.run_sequence(&a, &mut Selection::Hard).unwrap();
            let rb = m.run_sequence(&b, &mut Selection::Hard).unwrap();
            if ra.states.last() == rb.states.last() {
                let mut xa = a.clone();
                xa.push(x);
                let mut xb = b.clone();
                xb.push(x);
                let na = m.run_sequence(&xa, &mut Selection::Hard).unwrap();
                let nb = m.run_sequence(&xb, &mut Selection::Hard).unwrap();
                prop_assert_eq!(na.alphas.last(), nb.alphas.last());
                prop_assert_eq!(ra.logits, rb.logits);
            }
        }
    }
}
