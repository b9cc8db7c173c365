// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation that respects the permutation and sign ambiguity of sparse
//! coding: units are only ever compared through an optimal matching.
//!
//! Code matrices here are `D × N`: one row per sample, one column per unit.

pub mod hungarian;
mod interpret;
mod recovery;

pub use interpret::{
    interpretability_proxy, intrusion_task, mds_stress, DissimilarityOracle, InterpretabilityScore, IntrusionReport,
    LatentDistance, LatentMetric,
};
pub use recovery::{
    match_codes, match_dictionaries, superposition_check, MatchedUnit, RecoveryReport, SuperpositionReport, ORTHOGONALITY_EPS,
};
