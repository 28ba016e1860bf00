//! Modular continual learning over a library of frozen neural modules.
//!
//! Each problem in a sequence is solved by a *path*: one module per layer,
//! either reused (frozen) from the library or freshly trained. Two searches
//! propose candidate paths without training every composition:
//!
//! * [`pt`] scores reused prefixes with a random-projection Gaussian model
//!   of each module's training inputs and a softmax prior over the accuracy
//!   the module originally reached, then walks the prefixes greedily.
//! * [`nt`] runs Gaussian-process Bayesian optimisation over suffixes of
//!   earlier solutions, using a Monte Carlo distance between the functions
//!   the suffixes compute.
//!
//! [`engine`] ties the searches together per problem, [`bench`] generates
//! synthetic compositional problem sequences and computes the usual
//! continual-learning metrics.

pub mod bench;
pub mod data;
pub mod engine;
pub mod error;
pub mod library;
pub mod nn;
pub mod nt;
pub mod pt;
pub mod seed;

pub use error::{Error, Result};
