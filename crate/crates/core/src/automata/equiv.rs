use std::collections::{HashMap, VecDeque};

use super::Dfa;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceResult {
    pub equivalent: bool,
    /// Shortest distinguishing word (symbols of the first automaton's
    /// alphabet); accepted by exactly one side.
    pub counterexample: Option<Vec<String>>,
}

/// Language equivalence via breadth-first search over the product automaton.
///
/// Both automata must share the same symbol set (order may differ). Partial
/// transitions fall into an implicit sink on either side.
pub fn equivalent(a: &Dfa, b: &Dfa) -> Result<EquivalenceResult> {
    let mut sa: Vec<&String> = a.alphabet().iter().collect();
    let mut sb: Vec<&String> = b.alphabet().iter().collect();
    sa.sort();
    sb.sort();
    if sa != sb {
        return Err(Error::AlphabetMismatch {
            expected: a.alphabet().join(","),
            found: b.alphabet().join(","),
        });
    }
    let to_b: Vec<usize> = a
        .alphabet()
        .iter()
        .map(|s| b.symbol_index(s).expect("same symbol set"))
        .collect();

    type Pair = (Option<usize>, Option<usize>);
    let accepts = |(p, q): Pair| {
        (
            p.is_some_and(|p| a.is_accepting(p)),
            q.is_some_and(|q| b.is_accepting(q)),
        )
    };

    let root: Pair = (Some(a.start()), Some(b.start()));
    let mut parent: HashMap<Pair, Option<(Pair, usize)>> = HashMap::from([(root, None)]);
    let mut queue = VecDeque::from([root]);
    while let Some(pair) = queue.pop_front() {
        let (x, y) = accepts(pair);
        if x != y {
            let mut word = Vec::new();
            let mut cur = pair;
            while let Some((prev, sym)) = parent[&cur] {
                word.push(a.alphabet()[sym].clone());
                cur = prev;
            }
            word.reverse();
            return Ok(EquivalenceResult {
                equivalent: false,
                counterexample: Some(word),
            });
        }
        for (sym, &sym_b) in to_b.iter().enumerate() {
            let next = (
                pair.0.and_then(|p| a.transition(p, sym)),
                pair.1.and_then(|q| b.transition(q, sym_b)),
            );
            if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(next) {
                e.insert(Some((pair, sym)));
                queue.push_back(next);
            }
        }
    }
    Ok(EquivalenceResult {
        equivalent: true,
        counterexample: None,
    })
}
