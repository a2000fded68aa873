use std::collections::BTreeMap;
use std::fmt::Write;

use super::Dfa;

/// Renders `dfa` as a Graphviz digraph.
///
/// `labels[q]` replaces the displayed name of state `q` (for extracted
/// automata, the centroid index). Output is byte-stable: states and edges
/// are emitted in ascending id order and edge labels list sorted symbols.
pub fn to_dot(dfa: &Dfa, labels: Option<&[String]>) -> String {
    let mut out = String::new();
    out.push_str("digraph dfa {\n");
    out.push_str("    rankdir=LR;\n");
    out.push_str("    node [shape=circle];\n");
    out.push_str("    __start [shape=point, style=invis];\n");
    for q in 0..dfa.num_states() {
        let label = labels
            .and_then(|l| l.get(q))
            .cloned()
            .unwrap_or_else(|| q.to_string());
        let shape = if dfa.is_accepting(q) {
            "doublecircle"
        } else {
            "circle"
        };
        let _ = writeln!(
            out,
            "    q{q} [label=\"{}\", shape={shape}];",
            escape(&label)
        );
    }
    let _ = writeln!(out, "    __start -> q{};", dfa.start());
    for q in 0..dfa.num_states() {
        let mut by_target: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (sym, name) in dfa.alphabet().iter().enumerate() {
            if let Some(t) = dfa.transition(q, sym) {
                by_target.entry(t).or_default().push(name);
            }
        }
        for (t, mut syms) in by_target {
            syms.sort_unstable();
            let _ = writeln!(
                out,
                "    q{q} -> q{t} [label=\"{}\"];",
                escape(&syms.join(","))
            );
        }
    }
    out.push_str("}\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
