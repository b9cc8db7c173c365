// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear assignment by the Hungarian method (shortest augmenting paths with
//! row/column potentials, O(n²m)).

use nalgebra::DMatrix;

/// Minimum-cost assignment of every row to a distinct column; requires
/// `rows ≤ cols`. Returns the column chosen for each row. Ties resolve to
/// the lowest column index.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = cost.shape();
    assert!(n <= m, "min_cost_assignment needs rows ≤ cols");
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // 1-based with a virtual column 0, as in the textbook formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximum-weight matching between rows and columns of any shape. Entry `i`
/// is the column matched to row `i`, `None` when rows outnumber columns and
/// row `i` is left out.
pub fn max_weight_matching(weights: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (n, m) = weights.shape();
    if n <= m {
        min_cost_assignment(&weights.map(|w| -w)).into_iter().map(Some).collect()
    } else {
        let cols_to_rows = min_cost_assignment(&weights.transpose().map(|w| -w));
        let mut out = vec![None; n];
        for (c, r) in cols_to_rows.into_iter().enumerate() {
            out[r] = Some(c);
        }
        out
    }
}
