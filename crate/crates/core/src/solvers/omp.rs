// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector};

use super::{check_dims, SparseSolution};
use crate::error::{Error, Result};
use crate::synthdgp::Dictionary;

/// Orthogonal matching pursuit.
///
/// Each step adds the column with the largest `|⟨θ_j, r⟩|` (lowest index on
/// ties) and refits all active coefficients by least squares. Stops once
/// `‖r‖ < residual_tol`, after `k_max` atoms, or when no inactive atom
/// correlates with the residual.
pub fn omp(dict: &Dictionary, y: &DVector<f64>, k_max: usize, residual_tol: f64) -> Result<SparseSolution> {
    check_dims(dict, y)?;
    if k_max == 0 || k_max > dict.n() {
        return Err(Error::invalid(format!("k_max must be in 1..={}, got {k_max}", dict.n())));
    }
    if !(residual_tol >= 0.0) {
        return Err(Error::invalid("residual_tol must be nonnegative"));
    }
    let atoms = dict.atoms();
    let mut active: Vec<usize> = Vec::with_capacity(k_max);
    let mut in_active = vec![false; dict.n()];
    let mut coef = DVector::zeros(0);
    let mut residual = y.clone();
    let mut trace = vec![residual.norm_squared()];
    let mut converged = residual.norm() < residual_tol;

    while !converged && active.len() < k_max {
        let corr = atoms.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in corr.iter().enumerate() {
            if in_active[j] {
                continue;
            }
            let a = c.abs();
            // strict comparison keeps the lowest index on ties
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((j, a));
            }
        }
        let Some((j, score)) = best else { break };
        if score <= 1e-14 * residual.norm() {
            break;
        }
        active.push(j);
        in_active[j] = true;
        let sub = DMatrix::from_fn(dict.m(), active.len(), |i, c| atoms[(i, active[c])]);
        coef = crate::linalg::lstsq_qr(&sub, y).ok_or_else(|| {
            Error::DegenerateFit(format!("active set {active:?} is rank deficient"))
        })?;
        residual = y - &sub * &coef;
        trace.push(residual.norm_squared());
        converged = residual.norm() < residual_tol;
    }

    let mut code = DVector::zeros(dict.n());
    for (c, &j) in active.iter().enumerate() {
        code[j] = coef[c];
    }
    Ok(SparseSolution { code, objective_trace: trace, iterations_used: active.len(), converged })
}
