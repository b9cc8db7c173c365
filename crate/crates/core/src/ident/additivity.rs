// SPDX-License-Identifier: MIT OR Apache-2.0

//! Additivity, analogy and homogeneity probes for an arbitrary map `z ↦ y`,
//! plus the one-sided sign test used to compare cosine distributions.

use nalgebra::DVector;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, exact_sum};
use crate::par;
use crate::seed;

/// A map under test. Must be deterministic.
pub type MapFn<'a> = dyn Fn(&[f64]) -> Result<DVector<f64>> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairPolicy {
    /// The two latents have disjoint supports (a conjunction of distinct concepts).
    #[default]
    Disjoint,
    /// Both latents share one support with independent values. Pointwise maps
    /// with `g(0) = 0` are exactly additive on disjoint pairs, so this is the
    /// policy that can expose them.
    SharedSupport,
}

/// `count` seeded pairs of `k`-sparse latents in `R^n` with gaussian values.
pub fn sample_pairs(n: usize, k: usize, count: usize, policy: PairPolicy, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let need = match policy {
        PairPolicy::Disjoint => 2 * k,
        PairPolicy::SharedSupport => k,
    };
    if k == 0 || need > n {
        return Err(Error::invalid(format!("cannot place {policy:?} pairs with k={k} in n={n}")));
    }
    Ok(par::map_range(count, |p| {
        let mut rng = seed::derived_rng(seed, "additivity-pair", &[p as u64]);
        let idx = index::sample(&mut rng, n, need).into_vec();
        let (s1, s2) = match policy {
            PairPolicy::Disjoint => (idx[..k].to_vec(), idx[k..].to_vec()),
            PairPolicy::SharedSupport => (idx.clone(), idx),
        };
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for i in s1 {
            a[i] = StandardNormal.sample(&mut rng);
        }
        for i in s2 {
            b[i] = StandardNormal.sample(&mut rng);
        }
        (a, b)
    }))
}

fn supports_disjoint(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| *x == 0.0 || *y == 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditivityReport {
    /// `cos(map(z1) + map(z2), map(z1 + z2))` per evaluated pair.
    pub cosines: Vec<f64>,
    /// Calibrated baseline `cos(map(z1), map(z2))`, aligned with `cosines`.
    pub baseline: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub baseline_mean: f64,
    /// Pairs skipped because a zero vector appeared.
    pub skipped: usize,
}

/// Additivity cosines of `map` over `pairs`.
///
/// With [`PairPolicy::Disjoint`] every pair must have disjoint supports.
pub fn additivity_test(map: &MapFn<'_>, pairs: &[(Vec<f64>, Vec<f64>)], policy: PairPolicy) -> Result<AdditivityReport> {
    if policy == PairPolicy::Disjoint {
        if let Some(i) = pairs.iter().position(|(a, b)| !supports_disjoint(a, b)) {
            return Err(Error::invalid(format!("pair {i} does not have disjoint supports")));
        }
    }
    if pairs.iter().any(|(a, b)| a.len() != b.len()) {
        return Err(Error::invalid("pair members differ in length"));
    }
    let per_pair = par::map_slice(pairs, |(a, b)| -> Result<Option<(f64, f64)>> {
        let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
        let (ya, yb, ys) = (map(a)?, map(b)?, map(&sum)?);
        let added = &ya + &yb;
        let c = linalg::cosine(added.as_slice(), ys.as_slice());
        let base = linalg::cosine(ya.as_slice(), yb.as_slice());
        Ok(c.zip(base))
    });
    let mut cosines = Vec::with_capacity(pairs.len());
    let mut baseline = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for r in per_pair {
        match r? {
            Some((c, b)) => {
                cosines.push(c);
                baseline.push(b);
            }
            None => skipped += 1,
        }
    }
    if cosines.is_empty() {
        return Err(Error::invalid("no pair produced nonzero outputs"));
    }
    let n = cosines.len() as f64;
    Ok(AdditivityReport {
        mean: exact_sum(cosines.iter().copied()) / n,
        min: cosines.iter().copied().fold(f64::INFINITY, f64::min),
        baseline_mean: exact_sum(baseline.iter().copied()) / n,
        cosines,
        baseline,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Pairs with `a > b`.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided `P(X ≥ wins)` for `X ~ Bin(wins + losses, 1/2)`.
    pub p_value: f64,
}

/// Paired one-sided sign test of `a > b`. Ties are dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::invalid("sign test needs paired samples"));
    }
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    Ok(SignTest { wins, losses, ties, p_value: binomial_upper_tail(wins + losses, wins) })
}

/// `P(X ≥ s)` for `X ~ Bin(n, 1/2)`, summed in log space.
pub fn binomial_upper_tail(n: usize, s: usize) -> f64 {
    if s == 0 {
        return 1.0;
    }
    if s > n {
        return 0.0;
    }
    let mut log_c = vec![0.0; n + 1];
    for i in 1..=n {
        log_c[i] = log_c[i - 1] + ((n - i + 1) as f64).ln() - (i as f64).ln();
    }
    let log_half_n = -(n as f64) * std::f64::consts::LN_2;
    let terms: Vec<f64> = (s..=n).map(|i| log_c[i] + log_half_n).collect();
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()).exp().min(1.0)
}

/// `(z_a, z_a + z_b, z_c, z_c + z_b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analogy {
    pub a: Vec<f64>,
    pub ab: Vec<f64>,
    pub c: Vec<f64>,
    pub cb: Vec<f64>,
}

impl Analogy {
    pub fn from_parts(a: &[f64], b: &[f64], c: &[f64]) -> Self {
        let add = |x: &[f64]| x.iter().zip(b).map(|(p, q)| p + q).collect();
        Self { a: a.to_vec(), ab: add(a), c: c.to_vec(), cb: add(c) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalogyReport {
    /// `‖(map(ab) − map(a)) − (map(cb) − map(c))‖`.
    pub residual: f64,
    /// Cosine between the two difference vectors; `None` when degenerate.
    pub cosine: Option<f64>,
    /// One of the difference vectors is exactly zero.
    pub degenerate: bool,
}

pub fn analogy_test(map: &MapFn<'_>, q: &Analogy) -> Result<AnalogyReport> {
    let n = q.a.len();
    if q.ab.len() != n || q.c.len() != n || q.cb.len() != n {
        return Err(Error::invalid("analogy members differ in length"));
    }
    let scale = q.a.iter().chain(&q.ab).chain(&q.c).chain(&q.cb).fold(1.0f64, |m, v| m.max(v.abs()));
    let shared_mismatch =
        (0..n).map(|i| ((q.ab[i] - q.a[i]) - (q.cb[i] - q.c[i])).abs()).fold(0.0, f64::max);
    if shared_mismatch > 1e-9 * scale {
        return Err(Error::invalid("z_ab − z_a and z_cb − z_c differ; not an analogy"));
    }
    let d1 = map(&q.ab)? - map(&q.a)?;
    let d2 = map(&q.cb)? - map(&q.c)?;
    let residual = (&d1 - &d2).norm();
    let cosine = linalg::cosine(d1.as_slice(), d2.as_slice());
    Ok(AnalogyReport { residual, cosine, degenerate: cosine.is_none() })
}

/// `cos(map(α z), α · map(z))` for every `z` and `α`, row-major by `z`.
/// Entries where either side is zero are `None`.
pub fn homogeneity_test(map: &MapFn<'_>, zs: &[Vec<f64>], alphas: &[f64]) -> Result<Vec<Option<f64>>> {
    let rows = par::map_slice(zs, |z| -> Result<Vec<Option<f64>>> {
        let base = map(z)?;
        alphas
            .iter()
            .map(|&alpha| {
                let scaled: Vec<f64> = z.iter().map(|v| alpha * v).collect();
                let lhs = map(&scaled)?;
                let rhs = &base * alpha;
                Ok(linalg::cosine(lhs.as_slice(), rhs.as_slice()))
            })
            .collect()
    });
    Ok(rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn linear_map(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(seed);
        DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng))
    }

    fn cube(z: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_iterator(z.len(), z.iter().map(|v| v * v * v)))
    }

    #[test]
    fn linear_maps_are_additive() {
        let phi = linear_map(6, 10, 1);
        let map = |z: &[f64]| Ok(&phi * DVector::from_column_slice(z));
        let pairs = sample_pairs(10, 3, 100, PairPolicy::Disjoint, 2).unwrap();
        let r = additivity_test(&map, &pairs, PairPolicy::Disjoint).unwrap();
        assert_eq!(r.cosines.len(), 100);
        assert!(r.cosines.iter().all(|c| (c - 1.0).abs() < 1e-12));
        assert!(r.baseline_mean < 0.9);
    }

    #[test]
    fn cubic_is_additive_on_disjoint_pairs_only() {
        let disjoint = sample_pairs(10, 3, 100, PairPolicy::Disjoint, 3).unwrap();
        let r = additivity_test(&cube, &disjoint, PairPolicy::Disjoint).unwrap();
        assert!(r.cosines.iter().all(|c| (c - 1.0).abs() < 1e-12));

        let shared = sample_pairs(10, 3, 100, PairPolicy::SharedSupport, 3).unwrap();
        let r = additivity_test(&cube, &shared, PairPolicy::SharedSupport).unwrap();
        // direct evaluation of the same quantity
        let oracle: Vec<f64> = shared
            .iter()
            .map(|(a, b)| {
                let s: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y).powi(3)).collect();
                let t: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.powi(3) + y.powi(3)).collect();
                let dot: f64 = s.iter().zip(&t).map(|(p, q)| p * q).sum();
                dot / (s.iter().map(|v| v * v).sum::<f64>().sqrt() * t.iter().map(|v| v * v).sum::<f64>().sqrt())
            })
            .collect();
        for (c, o) in r.cosines.iter().zip(&oracle) {
            assert!((c - o).abs() < 1e-12);
        }
        assert!(r.mean < 1.0 - 1e-3, "{}", r.mean);
    }

    #[test]
    fn disjoint_policy_rejects_overlap() {
        let pairs = vec![(vec![1.0, 0.0], vec![1.0, 1.0])];
        assert!(additivity_test(&cube, &pairs, PairPolicy::Disjoint).is_err());
        assert!(additivity_test(&cube, &pairs, PairPolicy::SharedSupport).is_ok());
    }

    #[test]
    fn zero_outputs_are_skipped() {
        let pairs = vec![(vec![1.0, 0.0], vec![0.0, 0.0]), (vec![1.0, 0.0], vec![0.0, 2.0])];
        let r = additivity_test(&cube, &pairs, PairPolicy::Disjoint).unwrap();
        assert_eq!((r.skipped, r.cosines.len()), (1, 1));
    }

    #[test]
    fn binomial_tail_matches_direct_sum() {
        for n in [1usize, 5, 12, 30] {
            for s in 0..=n + 1 {
                let direct: f64 = (s..=n).map(|i| crate::solvers::binomial(n, i) as f64).sum::<f64>() / 2f64.powi(n as i32);
                assert!((binomial_upper_tail(n, s) - direct).abs() < 1e-12, "{n} {s}");
            }
        }
        assert!((binomial_upper_tail(100, 100) - 2f64.powi(-100)).abs() < 1e-40);
    }

    #[test]
    fn sign_test_counts() {
        let t = sign_test(&[1.0, 2.0, 3.0, 0.0], &[0.0, 2.0, 1.0, 1.0]).unwrap();
        assert_eq!((t.wins, t.losses, t.ties), (2, 1, 1));
        assert!((t.p_value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_analogies_close() {
        let phi = linear_map(5, 8, 4);
        let map = |z: &[f64]| Ok(&phi * DVector::from_column_slice(z));
        let q = Analogy::from_parts(&[1.0, 0.0, 0.7, 0.5, 0.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.3, 0.0]);
        let r = analogy_test(&map, &q).unwrap();
        assert!(r.residual < 1e-12 && (r.cosine.unwrap() - 1.0).abs() < 1e-12);

        let zero_b = Analogy::from_parts(&q.a, &[0.0; 8], &q.c);
        assert!(analogy_test(&map, &zero_b).unwrap().degenerate);

        let cubic = analogy_test(&cube, &q).unwrap();
        assert!(cubic.cosine.unwrap() < 1.0 - 1e-3 || cubic.residual > 1e-3);
    }

    #[test]
    fn broken_analogy_is_rejected() {
        let q = Analogy { a: vec![0.0], ab: vec![1.0], c: vec![0.0], cb: vec![2.0] };
        assert!(analogy_test(&cube, &q).is_err());
    }

    #[test]
    fn linear_maps_are_homogeneous() {
        let phi = linear_map(4, 6, 9);
        let map = |z: &[f64]| Ok(&phi * DVector::from_column_slice(z));
        let zs: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| if i == j { 1.0 } else { 0.1 * j as f64 }).collect()).collect();
        let cos = homogeneity_test(&map, &zs, &[0.5, 2.0]).unwrap();
        assert!(cos.iter().all(|c| (c.unwrap() - 1.0).abs() < 1e-6));
        let cubic = homogeneity_test(&cube, &zs, &[0.5, 2.0]).unwrap();
        assert!(cubic.iter().all(|c| (c.unwrap() - 1.0).abs() < 1e-12), "pointwise monomials are homogeneous in direction");
    }
}
