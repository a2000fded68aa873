//! Deterministic finite automata: evaluation, minimization, equivalence and
//! DOT export.

mod dfa;
mod dot;
mod equiv;
mod minimize;

pub use dfa::Dfa;
pub use dot::to_dot;
pub use equiv::{equivalent, EquivalenceResult};
pub use minimize::minimize;
