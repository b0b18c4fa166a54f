//! Exact Fock-space simulation of a single photon split between two parties
//! who each mix their half with a local reference beam, and a Monte Carlo
//! CHSH harness built on top of it.
//!
//! * [`fock`]: sparse multimode state vectors, beam splitters, post-selection
//! * [`analytic`]: closed-form probabilities, correlations and `S`
//! * [`schemes`]: the three interferometers wired from `fock` primitives
//! * [`experiment`]: shot-by-shot simulation, binning and estimators
//! * [`verify`]: self-checks behind `fock-chsh verify`
//! * [`cli`]: the `fock-chsh` command line

pub mod analytic;
pub mod angle;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod fock;
pub mod schemes;
pub mod verify;

pub use error::{Error, FockError, Result};
