//! Grid-panel re-ranking as a Markov decision process.
//!
//! Time steps are ranks in an upstream candidate list and actions are the
//! slots of an `M x N` result panel plus a `Null` action that discards the
//! current candidate. The crate bundles:
//!
//! * [`env`]: the exact MDP mechanics and the online placement rollout,
//! * [`nn`]: small dense / attention / GRU / embedding primitives with
//!   hand-written backward passes,
//! * [`agent`]: the dueling deep-Q agent (replay memory, target network),
//! * [`sim`]: a synthetic grid user with position-dependent examination,
//! * [`baselines`]: row-major, random and brute-force reference policies,
//! * [`harness`]: experiment configuration, training/evaluation runs and
//!   metric files.

pub mod agent;
pub mod baselines;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod sim;

pub use error::{Error, Result};
