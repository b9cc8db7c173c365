// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::recovery::{correlation_matrix, standardized_columns};
use crate::error::{Error, Result};
use crate::linalg::{col, exact_sum};
use crate::seed::{derive_seed, hash_f64s, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilityScore {
    /// Per estimated unit: best absolute correlation with any true latent.
    pub per_unit: Vec<f64>,
    pub mean: f64,
    pub zero_variance_units: Vec<usize>,
}

/// Best-match absolute correlation of every estimated unit with the true
/// latents, with no one-to-one constraint. Both inputs are `D × ·`.
pub fn interpretability_proxy(codes: &DMatrix<f64>, true_codes: &DMatrix<f64>) -> Result<InterpretabilityScore> {
    if codes.nrows() != true_codes.nrows() || codes.nrows() < 2 {
        return Err(Error::invalid("need matching sample counts of at least two"));
    }
    let est = standardized_columns(codes);
    let truth = standardized_columns(true_codes);
    let corr = correlation_matrix(&est, &truth);
    let per_unit: Vec<f64> =
        (0..corr.nrows()).map(|i| corr.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
    let mean = if per_unit.is_empty() { 0.0 } else { exact_sum(per_unit.iter().copied()) / per_unit.len() as f64 };
    let zero_variance_units = est.iter().enumerate().filter(|(_, c)| c.is_none()).map(|(i, _)| i).collect();
    Ok(InterpretabilityScore { per_unit, mean, zero_variance_units })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrusionReport {
    pub accuracy: f64,
    pub chance: f64,
    pub correct: usize,
    pub trials: usize,
    /// Units with constant activation, for which no trial is run.
    pub skipped_units: Vec<usize>,
}

/// Distance from item `i` to the centroid of the other items, in true latent space.
fn loo_distance(items: &[usize], i: usize, true_codes: &DMatrix<f64>) -> f64 {
    let n = true_codes.ncols();
    let others = (items.len() - 1) as f64;
    (0..n)
        .map(|c| {
            let centroid = items.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &s)| true_codes[(s, c)]).sum::<f64>()
                / others;
            (true_codes[(items[i], c)] - centroid).powi(2)
        })
        .sum()
}

/// Simulated intruder detection. For each unit, every trial shows its
/// `top_q` most activating samples plus one intruder drawn from its bottom
/// decile, in random order. A judge sees the items' true latent
/// vectors and names the item farthest from the centroid of the others;
/// exact ties are broken at random. Chance is `1 / (top_q + 1)`.
///
/// Each unit's randomness is derived from a hash of its activation column,
/// so the report does not depend on unit order.
pub fn intrusion_task(
    codes: &DMatrix<f64>,
    true_codes: &DMatrix<f64>,
    top_q: usize,
    n_trials: usize,
    seed: u64,
) -> Result<IntrusionReport> {
    let d = codes.nrows();
    if true_codes.nrows() != d {
        return Err(Error::invalid("codes and true codes need the same samples"));
    }
    if top_q == 0 || n_trials == 0 {
        return Err(Error::invalid("top_q and n_trials must be positive"));
    }
    let decile = d.div_ceil(10);
    if top_q + decile > d {
        return Err(Error::invalid(format!("{d} samples are too few for top_q = {top_q}")));
    }
    let mut correct = 0usize;
    let mut trials = 0usize;
    let mut skipped_units = Vec::new();
    for u in 0..codes.ncols() {
        let activ = col(codes, u);
        if activ.iter().all(|&a| a == activ[0]) {
            skipped_units.push(u);
            continue;
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| activ[b].total_cmp(&activ[a]).then(a.cmp(&b)));
        let top = &order[..top_q];
        let bottom = &order[d - decile..];
        let mut r = rng(derive_seed(seed, "intrusion", &[hash_f64s(activ)]));
        for _ in 0..n_trials {
            let mut items = top.to_vec();
            let intruder_pos = r.random_range(0..=top_q);
            items.insert(intruder_pos, bottom[r.random_range(0..bottom.len())]);
            let dists: Vec<f64> = (0..items.len()).map(|i| loo_distance(&items, i, true_codes)).collect();
            let best = dists.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = (0..items.len()).filter(|&i| dists[i] == best).collect();
            let pick = tied[r.random_range(0..tied.len())];
            if pick == intruder_pos {
                correct += 1;
            }
            trials += 1;
        }
    }
    let accuracy = if trials == 0 { 0.0 } else { correct as f64 / trials as f64 };
    Ok(IntrusionReport { accuracy, chance: 1.0 / (top_q as f64 + 1.0), correct, trials, skipped_units })
}

/// Pairwise dissimilarity between samples, independent of any representation.
pub trait DissimilarityOracle {
    fn len(&self) -> usize;
    fn dissimilarity(&self, i: usize, j: usize) -> f64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentMetric {
    /// Euclidean distance between full latent vectors.
    Euclidean,
    /// Absolute difference along a single latent coordinate.
    Coordinate(usize),
}

/// Ground-truth oracle reading distances off the true latents (`D × N`).
#[derive(Debug, Clone)]
pub struct LatentDistance {
    pub latents: DMatrix<f64>,
    pub metric: LatentMetric,
}

impl DissimilarityOracle for LatentDistance {
    fn len(&self) -> usize {
        self.latents.nrows()
    }

    fn dissimilarity(&self, i: usize, j: usize) -> f64 {
        match self.metric {
            LatentMetric::Euclidean => {
                (0..self.latents.ncols()).map(|c| (self.latents[(i, c)] - self.latents[(j, c)]).powi(2)).sum::<f64>().sqrt()
            }
            LatentMetric::Coordinate(c) => (self.latents[(i, c)] - self.latents[(j, c)]).abs(),
        }
    }
}

/// `Σ_{i<j} |d(i, j) − |f_i − f_j||` for a one-dimensional feature `f`.
pub fn mds_stress(feature: &[f64], oracle: &dyn DissimilarityOracle) -> Result<f64> {
    if feature.len() != oracle.len() {
        return Err(Error::invalid(format!("{} feature values for {} samples", feature.len(), oracle.len())));
    }
    if feature.len() < 2 {
        return Err(Error::invalid("stress needs at least two samples"));
    }
    let n = feature.len();
    Ok(exact_sum((0..n).flat_map(|i| {
        (i + 1..n).map(move |j| (oracle.dissimilarity(i, j) - (feature[i] - feature[j]).abs()).abs())
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::synthdgp::{codes_to_matrix, sample_codes, ValueDist};
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(d: usize, n: usize, s: u64) -> DMatrix<f64> {
        let mut r = seed::rng(s);
        DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut r))
    }

    #[test]
    fn proxy_of_truth_is_one() {
        let z = gaussian(500, 5, 1);
        let s = interpretability_proxy(&z, &z).unwrap();
        assert_eq!(s.mean, 1.0);
    }

    #[test]
    fn mixed_unit_scores_inverse_sqrt_two() {
        let z = gaussian(10_000, 2, 2);
        let mixed = DMatrix::from_fn(10_000, 1, |s, _| (z[(s, 0)] + z[(s, 1)]) / 2f64.sqrt());
        let s = interpretability_proxy(&mixed, &z).unwrap();
        assert!((s.mean - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.05, "{}", s.mean);
    }

    #[test]
    fn intrusion_on_true_latents_beats_chance() {
        let codes = sample_codes(12, 2, ValueDist::UniformSigned, 2000, 3).unwrap();
        let z = codes_to_matrix(&codes).transpose();
        let r = intrusion_task(&z, &z, 4, 20, 4).unwrap();
        assert!(r.accuracy > 0.95, "{}", r.accuracy);
        let noise = gaussian(2000, 12, 5);
        let r = intrusion_task(&noise, &z, 4, 50, 4).unwrap();
        assert!((r.accuracy - r.chance).abs() < 0.06, "{}", r.accuracy);
    }

    #[test]
    fn intrusion_rejects_small_batches_and_skips_constant_units() {
        let z = gaussian(20, 2, 6);
        assert!(intrusion_task(&z, &z, 19, 1, 0).is_err());
        let mut c = z.clone();
        c.column_mut(1).fill(3.0);
        assert_eq!(intrusion_task(&c, &z, 2, 3, 0).unwrap().skipped_units, vec![1]);
    }

    #[test]
    fn stress_examples() {
        let lat = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        let oracle = LatentDistance { latents: lat, metric: LatentMetric::Euclidean };
        assert_eq!(mds_stress(&[0.0, 1.0, 3.0], &oracle).unwrap(), 0.0);
        assert_eq!(mds_stress(&[5.0, 4.0, 2.0], &oracle).unwrap(), 0.0);
        // feature gaps 2, 3, 1 against oracle distances 1, 3, 2
        assert_eq!(mds_stress(&[0.0, 2.0, 3.0], &oracle).unwrap(), 2.0);
        assert!(mds_stress(&[0.0], &oracle).is_err());
    }

    #[test]
    fn stress_of_constant_and_doubled_features() {
        let mut r = seed::rng(9);
        let lat = DMatrix::from_fn(10, 3, |_, _| StandardNormal.sample(&mut r));
        let oracle = LatentDistance { latents: lat.clone(), metric: LatentMetric::Coordinate(1) };
        let mut total = Vec::new();
        for i in 0..10 {
            for j in i + 1..10 {
                total.push((lat[(i, 1)] - lat[(j, 1)]).abs());
            }
        }
        let sum_dh = exact_sum(total);
        assert_eq!(mds_stress(&[0.7; 10], &oracle).unwrap(), sum_dh);
        let doubled: Vec<f64> = (0..10).map(|i| 2.0 * lat[(i, 1)]).collect();
        assert!((mds_stress(&doubled, &oracle).unwrap() - sum_dh).abs() < 1e-12);
        for i in 0..10 {
            assert_eq!(oracle.dissimilarity(i, i), 0.0);
            for j in 0..10 {
                assert_eq!(oracle.dissimilarity(i, j), oracle.dissimilarity(j, i));
            }
        }
    }

    #[test]
    fn single_item_intrusion_null_is_a_coin_flip() {
        let z = gaussian(1000, 4, 10);
        let noise = gaussian(1000, 20, 11);
        let r = intrusion_task(&noise, &z, 1, 100, 12).unwrap();
        assert_eq!(r.chance, 0.5);
        assert!((r.accuracy - 0.5).abs() < 0.05, "{}", r.accuracy);
    }
}
