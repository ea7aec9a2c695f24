//! Bayesian hidden Markov models with an unknown number of states, fitted by
//! reversible-jump MCMC under a repulsive (Strauss) or independent prior on
//! the state locations.

pub mod cli;
pub mod emissions;
pub mod error;
pub mod evaluation;
pub mod hmm;
pub mod linalg;
pub mod numfmt;
pub mod panel;
pub mod pca;
pub mod postprocess;
pub mod rjmcmc;
pub mod setup;
pub mod special;
pub mod strauss;

pub use error::{Error, Result};
