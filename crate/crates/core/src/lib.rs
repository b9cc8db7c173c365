// SPDX-License-Identifier: MIT OR Apache-2.0

//! # sparselift
//!
//! Synthetic world models for superposed linear representations, sparse
//! inference and dictionary learning to lift latent features back out, and
//! permutation-invariant metrics to score what was recovered.
//!
//! Modules:
//!
//! - [`synthdgp`] samples sparse latents, random dictionaries, linear
//!   observations and invertible nonlinear generators.
//! - [`ident`] trains small classifiers on generated data and measures how
//!   linear the latent-to-representation map has become, plus additivity and
//!   analogy probes for arbitrary maps.
//! - [`solvers`], [`dictlearn`] and [`sae`] recover sparse codes, either per
//!   sample (ISTA, FISTA, OMP, exhaustive search) or amortized through a
//!   sparse autoencoder.
//! - [`metrics`] matches recovered units to ground truth under the
//!   permutation/sign ambiguity and computes interpretability proxies.
//! - [`phase`] runs Monte-Carlo recovery sweeps over `(K, M)` and fits the
//!   `K log(N/K)` boundary.
//!
//! All randomness flows from explicit `u64` seeds through [`seed::derive_seed`],
//! so every parallel loop produces the same bits regardless of thread count.
//! With the default `parallel` feature batch loops run on rayon; without it
//! they run sequentially and produce identical results.

pub mod dictlearn;
pub mod error;
pub mod export;
pub mod ident;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod phase;
pub mod sae;
pub mod seed;
pub mod solvers;
pub mod splb;
pub mod synthdgp;

pub use error::{Error, Result};
pub use synthdgp::{Dictionary, LatentCode, ObservationBatch};
