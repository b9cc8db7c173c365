// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small dense linear-algebra helpers shared by the solvers and metrics.

use nalgebra::{DMatrix, DVector};

/// Contiguous view of column `j` of a column-major matrix.
#[inline]
pub fn col(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let r = m.nrows();
    &m.as_slice()[j * r..(j + 1) * r]
}

#[inline]
pub fn col_mut(m: &mut DMatrix<f64>, j: usize) -> &mut [f64] {
    let r = m.nrows();
    &mut m.as_mut_slice()[j * r..(j + 1) * r]
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Cosine similarity, `None` when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

/// Pearson correlation, `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Correctly rounded sum of `values` (Shewchuk partials, as in Python's
/// `math.fsum`). The result does not depend on summation order.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    let mut naive = 0.0;
    let mut finite = true;
    for v in values {
        naive += v;
        if !v.is_finite() {
            finite = false;
            continue;
        }
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    if !finite {
        return naive;
    }
    let Some(&top) = partials.last() else {
        return 0.0;
    };
    let mut k = partials.len() - 1;
    let mut hi = top;
    let mut lo = 0.0;
    while k > 0 {
        k -= 1;
        let x = hi;
        let y = partials[k];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if k > 0 && ((lo < 0.0 && partials[k - 1] < 0.0) || (lo > 0.0 && partials[k - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Largest squared singular value of `a` by power iteration on `aᵀa`.
pub fn spectral_norm_sq(a: &DMatrix<f64>, iters: usize, tol: f64) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // deterministic, non-symmetric start so it is unlikely to be orthogonal
    // to the leading singular vector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i % 7) as f64 / 7.0);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let av = a * &v;
        let w = a.tr_mul(&av);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw;
        v = w / nw;
        if (next - est).abs() <= tol * next {
            est = next;
            break;
        }
        est = next;
    }
    est
}

/// Least squares for a full-column-rank `a` via Householder QR.
/// Returns `None` when `a` is (numerically) column-rank deficient.
pub fn lstsq_qr(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let (m, n) = a.shape();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    if n > m {
        return None;
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let diag_max = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if diag_max == 0.0 || (0..n).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max) {
        return None;
    }
    let qtb = qr.q().tr_mul(b);
    r.solve_upper_triangular(&qtb)
}

/// Minimum-norm least squares via SVD; never fails on finite input.
pub fn lstsq_svd(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    if n == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * (a.nrows().max(n) as f64);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(n))
}

/// Rescale every column to unit Euclidean norm. Returns the original norms;
/// zero columns are left untouched (norm reported as 0).
pub fn normalize_columns(m: &mut DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| {
            let c = col_mut(m, j);
            let nrm = norm(c);
            if nrm > 0.0 {
                c.iter_mut().for_each(|v| *v /= nrm);
            }
            nrm
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sum_is_order_independent() {
        let vals = [1e16, 1.0, -1e16, 3.0, 1e-3, 0.1, 0.2, 0.3];
        let a = exact_sum(vals);
        let mut rev = vals;
        rev.reverse();
        assert_eq!(a, exact_sum(rev));
        assert_eq!(a, exact_sum([4.0, 1e-3, 0.1, 0.2, 0.3]));
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
    }

    #[test]
    fn power_iteration_matches_svd() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.25]);
        let s = a.clone().svd(false, false).singular_values.max();
        let est = spectral_norm_sq(&a, 100, 1e-10);
        assert!((est - s * s).abs() < 1e-8 * s * s);
    }

    #[test]
    fn qr_detects_rank_deficiency() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(lstsq_qr(&a, &DVector::from_vec(vec![1.0, 2.0, 3.0])).is_none());
        let x = lstsq_svd(&a, &DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(((&a * x) - DVector::from_vec(vec![1.0, 2.0, 3.0])).norm() < 1e-10);
    }

    #[test]
    fn pearson_zero_variance_is_none() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_none());
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]).unwrap();
        assert!(r > 0.99 && r <= 1.0);
    }
}
