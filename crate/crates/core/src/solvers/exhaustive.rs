// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector};

use super::{check_dims, SparseSolution};
use crate::error::{Error, Result};
use crate::linalg;
use crate::synthdgp::Dictionary;

/// Largest `C(n, k)` the exhaustive oracle will enumerate.
pub const EXHAUSTIVE_BUDGET: u128 = 1_000_000;

/// `C(n, k)`, saturating near `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u128::MAX / 1024 {
            return u128::MAX;
        }
    }
    acc
}

/// Advance `idx` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exact minimizer of `‖y − Θz‖²` over all supports of size ≤ `k`.
///
/// Supports are visited by increasing size, then lexicographically; a later
/// support only wins if it lowers the residual by more than `1e-12·‖y‖²`, so
/// the sparsest exact fit is returned on noiseless data.
pub fn exhaustive_oracle(dict: &Dictionary, y: &DVector<f64>, k: usize) -> Result<SparseSolution> {
    check_dims(dict, y)?;
    let n = dict.n();
    if k > n {
        return Err(Error::invalid(format!("k={k} exceeds dictionary width {n}")));
    }
    let supports = binomial(n, k);
    if supports > EXHAUSTIVE_BUDGET {
        return Err(Error::BudgetExceeded { supports, limit: EXHAUSTIVE_BUDGET });
    }
    let atoms = dict.atoms();
    let y_norm2 = y.norm_squared();
    let tie = 1e-12 * y_norm2;
    let mut best_r2 = y_norm2;
    let mut best_support: Vec<usize> = Vec::new();
    let mut best_coef = DVector::zeros(0);
    let mut evaluated = 1usize;

    for size in 1..=k {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let sub = DMatrix::from_fn(dict.m(), size, |i, c| atoms[(i, idx[c])]);
            let coef = linalg::lstsq_qr(&sub, y).unwrap_or_else(|| linalg::lstsq_svd(&sub, y));
            let r2 = (y - &sub * &coef).norm_squared();
            evaluated += 1;
            if r2 < best_r2 - tie {
                best_r2 = r2;
                best_support.clone_from(&idx);
                best_coef = coef;
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }

    let mut code = DVector::zeros(n);
    for (c, &j) in best_support.iter().enumerate() {
        code[j] = best_coef[c];
    }
    Ok(SparseSolution { code, objective_trace: vec![best_r2], iterations_used: evaluated, converged: true })
}
