use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic finite automaton `(Q, Σ, δ, q0, F)` with dense state ids.
///
/// `δ` may be partial; a missing transition leads to an implicit
/// non-accepting sink.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dfa {
    alphabet: Vec<String>,
    delta: Vec<Vec<Option<usize>>>,
    start: usize,
    accepting: Vec<bool>,
}

impl Dfa {
    pub fn new(
        alphabet: Vec<String>,
        delta: Vec<Vec<Option<usize>>>,
        start: usize,
        accepting: Vec<bool>,
    ) -> Result<Self> {
        let n = delta.len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "a DFA needs at least one state".into(),
            ));
        }
        if start >= n {
            return Err(Error::InvalidArgument(format!(
                "start state {start} outside 0..{n}"
            )));
        }
        if accepting.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} acceptance flags for {n} states",
                accepting.len()
            )));
        }
        for (q, row) in delta.iter().enumerate() {
            if row.len() != alphabet.len() {
                return Err(Error::InvalidArgument(format!(
                    "state {q} has {} transitions for {} symbols",
                    row.len(),
                    alphabet.len()
                )));
            }
            if let Some(t) = row.iter().flatten().find(|&&t| t >= n) {
                return Err(Error::InvalidArgument(format!(
                    "transition from {q} targets missing state {t}"
                )));
            }
        }
        for (i, a) in alphabet.iter().enumerate() {
            if alphabet[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate symbol `{a}`")));
            }
        }
        Ok(Dfa {
            alphabet,
            delta,
            start,
            accepting,
        })
    }

    /// Builds a total DFA from a transition table over `alphabet`.
    pub fn from_table(
        alphabet: &[&str],
        table: &[&[usize]],
        start: usize,
        accepting: &[usize],
    ) -> Result<Self> {
        let delta = table
            .iter()
            .map(|row| row.iter().map(|&t| Some(t)).collect())
            .collect();
        let mut acc = vec![false; table.len()];
        for &q in accepting {
            *acc.get_mut(q).ok_or_else(|| {
                Error::InvalidArgument(format!("accepting state {q} does not exist"))
            })? = true;
        }
        Dfa::new(
            alphabet.iter().map(|s| s.to_string()).collect(),
            delta,
            start,
            acc,
        )
    }

    pub fn num_states(&self) -> usize {
        self.delta.len()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn is_accepting(&self, q: usize) -> bool {
        self.accepting[q]
    }

    pub fn accepting_states(&self) -> Vec<usize> {
        (0..self.num_states())
            .filter(|&q| self.accepting[q])
            .collect()
    }

    pub fn transition(&self, q: usize, symbol: usize) -> Option<usize> {
        self.delta[q][symbol]
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.alphabet.iter().position(|a| a == symbol)
    }

    pub fn is_complete(&self) -> bool {
        self.delta.iter().all(|row| row.iter().all(Option::is_some))
    }

    /// Runs `δ` from `q0` over symbol ids.
    pub fn accepts(&self, tokens: &[usize]) -> Result<bool> {
        let mut q = self.start;
        for &t in tokens {
            if t >= self.alphabet.len() {
                return Err(Error::UnknownToken {
                    id: t,
                    size: self.alphabet.len(),
                });
            }
            match self.delta[q][t] {
                Some(next) => q = next,
                None => return Ok(false),
            }
        }
        Ok(self.accepting[q])
    }

    pub fn accepts_symbols<S: AsRef<str>>(&self, symbols: &[S]) -> Result<bool> {
        let ids = symbols
            .iter()
            .map(|s| {
                self.symbol_index(s.as_ref())
                    .ok_or_else(|| Error::UnknownSymbol(s.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        self.accepts(&ids)
    }

    /// Same language, with every missing transition routed to one explicit
    /// non-accepting sink. Already-total automata are returned unchanged.
    pub fn complete(&self) -> Dfa {
        if self.is_complete() {
            return self.clone();
        }
        let sink = self.num_states();
        let mut delta: Vec<Vec<Option<usize>>> = self
            .delta
            .iter()
            .map(|row| row.iter().map(|t| Some(t.unwrap_or(sink))).collect())
            .collect();
        delta.push(vec![Some(sink); self.alphabet.len()]);
        let mut accepting = self.accepting.clone();
        accepting.push(false);
        Dfa {
            alphabet: self.alphabet.clone(),
            delta,
            start: self.start,
            accepting,
        }
    }

    /// States reachable from `q0`, in breadth-first order (symbols in
    /// alphabet order).
    pub fn reachable(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_states()];
        let mut order = vec![self.start];
        seen[self.start] = true;
        let mut queue = VecDeque::from([self.start]);
        while let Some(q) = queue.pop_front() {
            for t in self.delta[q].iter().flatten() {
                if !seen[*t] {
                    seen[*t] = true;
                    order.push(*t);
                    queue.push_back(*t);
                }
            }
        }
        order
    }

    /// Drops unreachable states, renumbering in breadth-first order.
    ///
    /// Returns the new automaton and, for each new state, its old id.
    pub fn restrict_to_reachable(&self) -> (Dfa, Vec<usize>) {
        let order = self.reachable();
        let mut new_id = vec![usize::MAX; self.num_states()];
        for (i, &q) in order.iter().enumerate() {
            new_id[q] = i;
        }
        let delta = order
            .iter()
            .map(|&q| self.delta[q].iter().map(|t| t.map(|t| new_id[t])).collect())
            .collect();
        let accepting = order.iter().map(|&q| self.accepting[q]).collect();
        let dfa = Dfa {
            alphabet: self.alphabet.clone(),
            delta,
            start: 0,
            accepting,
        };
        (dfa, order)
    }

    /// Copy with acceptance flags replaced.
    pub fn with_accepting(&self, accepting: Vec<bool>) -> Result<Dfa> {
        Dfa::new(
            self.alphabet.clone(),
            self.delta.clone(),
            self.start,
            accepting,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Balanced parentheses up to nesting depth 4; letters loop in place.
    /// States 0..=4 are depths, 5 is the dead state.
    fn bp_depth4() -> Dfa {
        let mut table: Vec<[usize; 3]> = Vec::new();
        for depth in 0..=4usize {
            let open = if depth < 4 { depth + 1 } else { 5 };
            let close = if depth > 0 { depth - 1 } else { 5 };
            table.push([open, close, depth]);
        }
        table.push([5, 5, 5]);
        let rows: Vec<&[usize]> = table.iter().map(|r| &r[..]).collect();
        Dfa::from_table(&["(", ")", "a"], &rows, 0, &[0]).unwrap()
    }

    fn chars(s: &str) -> Vec<String> {
        s.chars().map(|c| c.to_string()).collect()
    }

    #[test]
    fn bounded_depth_bp_dfa() {
        let dfa = bp_depth4();
        assert!(dfa.accepts_symbols(&chars("(())")).unwrap());
        assert!(dfa.accepts_symbols(&chars("((((a))))")).unwrap());
        assert!(!dfa.accepts_symbols(&chars("((((()))))")).unwrap());
        assert!(!dfa.accepts_symbols(&chars("(()")).unwrap());
    }

    #[test]
    fn empty_word_follows_start_acceptance() {
        assert!(bp_depth4().accepts(&[]).unwrap());
        let rej = Dfa::from_table(&["0"], &[&[0]], 0, &[]).unwrap();
        assert!(!rej.accepts(&[]).unwrap());
    }

    #[test]
    fn foreign_tokens_are_rejected() {
        let dfa = bp_depth4();
        assert!(matches!(dfa.accepts(&[3]), Err(Error::UnknownToken { .. })));
        assert!(matches!(
            dfa.accepts_symbols(&["x"]),
            Err(Error::UnknownSymbol(_))
        ));
    }

    #[test]
    fn partial_transitions_route_to_sink() {
        let alphabet = vec!["0".to_string(), "1".to_string()];
        let dfa = Dfa::new(alphabet, vec![vec![None, Some(0)]], 0, vec![true]).unwrap();
        assert!(dfa.accepts(&[1, 1]).unwrap());
        assert!(!dfa.accepts(&[1, 0, 1]).unwrap());
        let total = dfa.complete();
        assert!(total.is_complete());
        assert_eq!(total.num_states(), 2);
        assert!(!total.accepts(&[0]).unwrap());
    }

    #[test]
    fn invalid_construction() {
        let a = vec!["0".to_string()];
        assert!(Dfa::new(a.clone(), vec![vec![Some(2)]], 0, vec![false]).is_err());
        assert!(Dfa::new(a.clone(), vec![vec![Some(0)]], 1, vec![false]).is_err());
        assert!(Dfa::new(a, vec![], 0, vec![]).is_err());
    }

    #[test]
    fn reachability_drops_orphans() {
        let dfa = Dfa::from_table(&["a"], &[&[0], &[0], &[1]], 0, &[0]).unwrap();
        let (trimmed, old) = dfa.restrict_to_reachable();
        assert_eq!(trimmed.num_states(), 1);
        assert_eq!(old, vec![0]);
    }
}
