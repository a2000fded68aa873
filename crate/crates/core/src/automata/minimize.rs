use std::collections::HashMap;

use super::Dfa;

/// Language-equivalent DFA with the fewest states (Moore partition
/// refinement).
///
/// The input is completed with a sink and trimmed to reachable states
/// first. States of the result are numbered in breadth-first order from the
/// start state, so equal languages over the same alphabet yield identical
/// automata.
pub fn minimize(dfa: &Dfa) -> Dfa {
    let (total, _) = dfa.complete().restrict_to_reachable();
    let n = total.num_states();
    let k = total.alphabet().len();

    let mut class: Vec<usize> = (0..n).map(|q| usize::from(total.is_accepting(q))).collect();
    let mut count = renumber(&mut class);
    loop {
        let mut ids: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut next = vec![0; n];
        for q in 0..n {
            let mut sig = Vec::with_capacity(k + 1);
            sig.push(class[q]);
            sig.extend((0..k).map(|a| class[total.transition(q, a).expect("completed")]));
            let fresh = ids.len();
            next[q] = *ids.entry(sig).or_insert(fresh);
        }
        let next_count = ids.len();
        class = next;
        if next_count == count {
            break;
        }
        count = next_count;
    }

    let mut delta = vec![vec![None; k]; count];
    let mut accepting = vec![false; count];
    for q in 0..n {
        let c = class[q];
        accepting[c] = total.is_accepting(q);
        for (a, slot) in delta[c].iter_mut().enumerate() {
            *slot = Some(class[total.transition(q, a).expect("completed")]);
        }
    }
    let quotient = Dfa::new(
        total.alphabet().to_vec(),
        delta,
        class[total.start()],
        accepting,
    )
    .expect("quotient of a valid DFA is valid");
    quotient.restrict_to_reachable().0
}

/// Relabels class ids densely in order of first appearance.
fn renumber(class: &mut [usize]) -> usize {
    let mut map = HashMap::new();
    for c in class.iter_mut() {
        let fresh = map.len();
        *c = *map.entry(*c).or_insert(fresh);
    }
    map.len()
}
