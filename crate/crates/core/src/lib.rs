//! Concentration bounds for probabilistic loops and probabilistic recurrence
//! relations via exponential supermartingales, with a Monte-Carlo oracle.

pub mod expr;
pub mod prr_model;
pub mod prr_synth;
pub mod simplex;
pub mod loop_model;
pub mod loop_synth;
pub mod oracle;
