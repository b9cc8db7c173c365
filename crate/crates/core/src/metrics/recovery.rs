// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::hungarian::max_weight_matching;
use crate::error::{Error, Result};
use crate::linalg::{self, col, exact_sum};
use crate::solvers::active_support;
use crate::synthdgp::Dictionary;

/// Inner products at or below this magnitude count as orthogonal.
pub const ORTHOGONALITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedUnit {
    pub estimated: usize,
    /// `+1` or `-1`: orientation of the estimated unit relative to the true one.
    pub sign: i8,
    /// Absolute correlation (codes) or absolute cosine (atoms) of the pair.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Mean over true units of the matched absolute score; unmatched true units count 0.
    pub mcc: f64,
    /// `None` for dictionary matching.
    pub support_precision: Option<f64>,
    pub support_recall: Option<f64>,
    /// Frobenius error after optimal per-unit sign/scale alignment, relative to the truth.
    pub relative_l2: f64,
    /// One entry per true unit.
    pub permutation: Vec<Option<MatchedUnit>>,
    /// Estimated units left without a partner (spurious features).
    pub unmatched_estimated: Vec<usize>,
    pub zero_variance_true: Vec<usize>,
    pub zero_variance_estimated: Vec<usize>,
}

impl RecoveryReport {
    /// The permutation-invariant scalars, for exact comparisons.
    pub fn scalars(&self) -> [Option<f64>; 4] {
        [Some(self.mcc), self.support_precision, self.support_recall, Some(self.relative_l2)]
    }

    /// Matched scores in true-unit order.
    pub fn matched_scores(&self) -> Vec<f64> {
        self.permutation.iter().map(|m| m.map_or(0.0, |m| m.score)).collect()
    }
}

/// A centered column and its sum of squares.
pub(crate) struct Centered {
    values: Vec<f64>,
    ss: f64,
}

/// Centered copy of each column; `None` for zero-variance columns.
pub(crate) fn standardized_columns(m: &DMatrix<f64>) -> Vec<Option<Centered>> {
    (0..m.ncols())
        .map(|j| {
            let c = col(m, j);
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let values: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let ss = linalg::dot(&values, &values);
            (ss > 0.0).then_some(Centered { values, ss })
        })
        .collect()
}

/// `N × N'` matrix of signed correlations (0 where a column is constant).
/// Written as `⟨x, y⟩ / √(‖x‖²‖y‖²)` so that a column correlates with
/// itself to exactly 1.
pub(crate) fn correlation_matrix(a: &[Option<Centered>], b: &[Option<Centered>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| match (&a[i], &b[j]) {
        (Some(x), Some(y)) => (linalg::dot(&x.values, &y.values) / (x.ss * y.ss).sqrt()).clamp(-1.0, 1.0),
        _ => 0.0,
    })
}

fn matching_from_scores(signed: &DMatrix<f64>) -> (Vec<Option<MatchedUnit>>, Vec<usize>) {
    let abs = signed.map(f64::abs);
    let assignment = max_weight_matching(&abs);
    let mut used = vec![false; signed.ncols()];
    let permutation: Vec<Option<MatchedUnit>> = assignment
        .iter()
        .enumerate()
        .map(|(i, a)| {
            a.map(|j| {
                used[j] = true;
                MatchedUnit { estimated: j, sign: if signed[(i, j)] < 0.0 { -1 } else { 1 }, score: abs[(i, j)] }
            })
        })
        .collect();
    let unmatched = used.iter().enumerate().filter(|(_, u)| !**u).map(|(j, _)| j).collect();
    (permutation, unmatched)
}

/// Match estimated code units to true latents by maximizing total absolute
/// correlation, then report matched correlation, support precision/recall
/// and relative error.
pub fn match_codes(true_codes: &DMatrix<f64>, est_codes: &DMatrix<f64>) -> Result<RecoveryReport> {
    let d = true_codes.nrows();
    if d < 2 {
        return Err(Error::invalid("need at least two samples to correlate units"));
    }
    if est_codes.nrows() != d {
        return Err(Error::invalid(format!("sample counts differ: {} vs {}", d, est_codes.nrows())));
    }
    let n_true = true_codes.ncols();
    let std_true = standardized_columns(true_codes);
    let std_est = standardized_columns(est_codes);
    let signed = correlation_matrix(&std_true, &std_est);
    let (permutation, unmatched_estimated) = matching_from_scores(&signed);

    let mcc = if n_true == 0 {
        0.0
    } else {
        exact_sum(permutation.iter().map(|m| m.map_or(0.0, |m| m.score))) / n_true as f64
    };

    // estimated unit → true unit
    let mut est_to_true = vec![None; est_codes.ncols()];
    for (i, m) in permutation.iter().enumerate() {
        if let Some(m) = m {
            est_to_true[m.estimated] = Some(i);
        }
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let mut est_row = vec![0.0; est_codes.ncols()];
    for s in 0..d {
        for (j, v) in est_row.iter_mut().enumerate() {
            *v = est_codes[(s, j)];
        }
        let mut predicted = vec![false; n_true];
        for j in active_support(&est_row) {
            match est_to_true[j] {
                Some(i) => predicted[i] = true,
                None => fp += 1,
            }
        }
        for (i, &p) in predicted.iter().enumerate() {
            let actual = true_codes[(s, i)] != 0.0;
            match (p, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };

    let mut err2 = Vec::with_capacity(n_true);
    for (i, m) in permutation.iter().enumerate() {
        let t = col(true_codes, i);
        let e2 = match m {
            Some(m) => {
                let e = col(est_codes, m.estimated);
                let ee = linalg::dot(e, e);
                let scale = if ee > 0.0 { linalg::dot(t, e) / ee } else { 0.0 };
                t.iter().zip(e).map(|(a, b)| (a - scale * b).powi(2)).sum::<f64>()
            }
            None => linalg::dot(t, t),
        };
        err2.push(e2);
    }
    let total = linalg::dot(true_codes.as_slice(), true_codes.as_slice());
    let err = exact_sum(err2);
    let relative_l2 = relative(err, total);

    Ok(RecoveryReport {
        mcc,
        support_precision: Some(ratio(tp, tp + fp)),
        support_recall: Some(ratio(tp, tp + fneg)),
        relative_l2,
        permutation,
        unmatched_estimated,
        zero_variance_true: zero_variance(&std_true),
        zero_variance_estimated: zero_variance(&std_est),
    })
}

fn zero_variance(cols: &[Option<Centered>]) -> Vec<usize> {
    cols.iter().enumerate().filter(|(_, c)| c.is_none()).map(|(i, _)| i).collect()
}

fn relative(err2: f64, total2: f64) -> f64 {
    if total2 > 0.0 {
        (err2 / total2).sqrt()
    } else if err2 == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Match learned atoms to true atoms by maximizing total `|cosine|`.
pub fn match_dictionaries(true_dict: &Dictionary, learned: &Dictionary) -> Result<RecoveryReport> {
    if true_dict.m() != learned.m() {
        return Err(Error::invalid(format!(
            "ambient dimensions differ: {} vs {}",
            true_dict.m(),
            learned.m()
        )));
    }
    let signed = true_dict.atoms().tr_mul(learned.atoms());
    let (permutation, unmatched_estimated) = matching_from_scores(&signed);
    let n = true_dict.n();
    let mcc = exact_sum(permutation.iter().map(|m| m.map_or(0.0, |m| m.score))) / n as f64;
    let err2 = exact_sum(permutation.iter().enumerate().map(|(i, m)| {
        let t = true_dict.atom(i);
        match m {
            Some(m) => {
                let s = f64::from(m.sign);
                t.iter().zip(learned.atom(m.estimated)).map(|(a, b)| (a - s * b).powi(2)).sum()
            }
            None => 1.0,
        }
    }));
    Ok(RecoveryReport {
        mcc,
        support_precision: None,
        support_recall: None,
        relative_l2: relative(err2, n as f64),
        permutation,
        unmatched_estimated,
        zero_variance_true: Vec::new(),
        zero_variance_estimated: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionReport {
    pub is_superposed: bool,
    /// `max_{i≠j} |⟨θ_i, θ_j⟩|`.
    pub coherence: f64,
    /// Unordered atom pairs with `|⟨θ_i, θ_j⟩| > ORTHOGONALITY_EPS`.
    pub offending_pairs: usize,
}

/// Mutual coherence and the linear-but-non-orthogonal check.
pub fn superposition_check(dict: &Dictionary) -> SuperpositionReport {
    let g = dict.atoms().tr_mul(dict.atoms());
    let mut coherence = 0.0f64;
    let mut offending = 0;
    for i in 0..dict.n() {
        for j in i + 1..dict.n() {
            let c = g[(i, j)].abs();
            coherence = coherence.max(c);
            if c > ORTHOGONALITY_EPS {
                offending += 1;
            }
        }
    }
    SuperpositionReport { is_superposed: coherence > ORTHOGONALITY_EPS, coherence, offending_pairs: offending }
}
