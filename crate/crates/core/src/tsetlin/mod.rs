//! Multi-class Tsetlin machine with packed clause evaluation.

mod automaton;
mod clause;
mod machine;
pub mod model;

pub use automaton::{Action, Automaton};
pub use clause::{ClauseBank, Mode, RareEvents};
pub use machine::{argmax, mono_predict, EpochCost, TmParams, TsetlinMachine, UpdateStats};
