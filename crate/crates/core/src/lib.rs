//! State-regularized recurrent networks over formal-language tasks, with
//! deterministic finite automaton extraction, minimization and verification.

pub mod analysis;
pub mod autodiff;
pub mod automata;
pub mod cells;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod extract;
pub mod langs;
pub mod model;
pub mod state_reg;
pub mod train;

pub use error::{Error, Result};
