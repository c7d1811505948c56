//! Option-critic learners with diversity-driven terminations on tabular
//! gridworlds.

pub mod cli;
pub mod config;
pub mod diversity;
pub mod gridworld;
pub mod harness;
pub mod learner;
pub mod option_model;
pub mod report;
pub mod snapshot;
pub mod verify;
