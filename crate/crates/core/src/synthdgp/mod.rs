// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic world model: sparse latents `z`, dictionaries `Φ`, linear
//! observations `y = Φz + ε`, and invertible nonlinear generators `x = g(z)`.

mod dictionary;
mod generator;

pub use dictionary::{sample_dictionary, Dictionary, DictionaryKind};
pub use generator::{generate_nonlinear, Generator, GeneratorKind, GeneratorSpec};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::seed::{self, Rng};

/// Distribution of the nonzero latent values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueDist {
    /// `|N(0, 1)|`, nonnegative.
    UnitGaussianMagnitude,
    /// Uniform magnitude in `[0.5, 1.5]` with a random sign.
    #[default]
    UniformSigned,
    /// Every active entry equals 1.
    Binary,
}

impl ValueDist {
    fn draw(self, rng: &mut Rng) -> f64 {
        match self {
            ValueDist::UnitGaussianMagnitude => loop {
                let v: f64 = StandardNormal.sample(rng);
                if v != 0.0 {
                    break v.abs();
                }
            },
            ValueDist::UniformSigned => {
                let mag = rng.random_range(0.5..=1.5);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
            ValueDist::Binary => 1.0,
        }
    }
}

/// A sparse latent vector together with its support.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    values: Vec<f64>,
    support: Vec<usize>,
}

impl LatentCode {
    pub fn from_values(values: Vec<f64>) -> Self {
        let support = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        Self { values, support }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n], support: Vec::new() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sorted indices of the nonzero entries.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

/// Draw a code of length `n` with exactly `k` nonzeros on a uniformly random support.
pub fn sample_k_sparse(n: usize, k: usize, dist: ValueDist, seed: u64) -> Result<LatentCode> {
    let mut rng = seed::rng(seed);
    sample_k_sparse_with(n, k, dist, &mut rng)
}

pub fn sample_k_sparse_with(n: usize, k: usize, dist: ValueDist, rng: &mut Rng) -> Result<LatentCode> {
    if n == 0 {
        return Err(Error::invalid("code dimension n must be positive"));
    }
    if k > n {
        return Err(Error::invalid(format!("sparsity k={k} exceeds dimension n={n}")));
    }
    let mut support = index::sample(rng, n, k).into_vec();
    support.sort_unstable();
    let mut values = vec![0.0; n];
    for &i in &support {
        values[i] = dist.draw(rng);
    }
    Ok(LatentCode { values, support })
}

/// `count` independent codes; sample `i` uses the stream `(seed, "latent", i)`.
pub fn sample_codes(n: usize, k: usize, dist: ValueDist, count: usize, seed: u64) -> Result<Vec<LatentCode>> {
    par::map_range(count, |i| {
        let mut rng = seed::derived_rng(seed, "latent", &[i as u64]);
        sample_k_sparse_with(n, k, dist, &mut rng)
    })
    .into_iter()
    .collect()
}

/// Stack codes as columns of an `n × count` matrix.
pub fn codes_to_matrix(codes: &[LatentCode]) -> DMatrix<f64> {
    let n = codes.first().map_or(0, LatentCode::len);
    let mut m = DMatrix::zeros(n, codes.len());
    for (j, c) in codes.iter().enumerate() {
        m.column_mut(j).copy_from_slice(c.values());
    }
    m
}

/// Where an observation batch came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dictionary_id: u64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// `D` observations of dimension `M`, stored as the columns of an `M × D` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    samples: DMatrix<f64>,
    provenance: Option<Provenance>,
}

impl ObservationBatch {
    pub fn new(samples: DMatrix<f64>) -> Result<Self> {
        if samples.ncols() == 0 {
            return Err(Error::invalid("observation batch must hold at least one sample"));
        }
        if samples.nrows() == 0 {
            return Err(Error::invalid("observation dimension must be positive"));
        }
        Ok(Self { samples, provenance: None })
    }

    pub fn from_samples(samples: &[DVector<f64>]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::invalid("observation batch must hold at least one sample"));
        };
        let m = first.len();
        if samples.iter().any(|s| s.len() != m) {
            return Err(Error::invalid("all samples must share one dimension"));
        }
        Self::new(DMatrix::from_columns(samples))
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Ambient dimension `M`.
    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    /// Number of samples `D`.
    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        crate::linalg::col(&self.samples, i)
    }

    pub fn sample_vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.sample(i))
    }

    /// `M × D` sample matrix.
    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    /// Sub-batch with the given sample indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("empty selection"));
        }
        let cols: Vec<_> = indices.iter().map(|&i| self.samples.column(i)).collect();
        Ok(Self { samples: DMatrix::from_columns(&cols), provenance: self.provenance })
    }
}

/// `y_i = Φ z_i + ε_i` with `ε_i ~ N(0, σ² I)`; sample `i` draws its noise
/// from the stream `(seed, "observe", i)`.
pub fn observe(dict: &Dictionary, codes: &[LatentCode], noise_sigma: f64, seed: u64) -> Result<ObservationBatch> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise sigma must be a finite nonnegative number"));
    }
    if codes.is_empty() {
        return Err(Error::invalid("need at least one code"));
    }
    if let Some(bad) = codes.iter().find(|c| c.len() != dict.n()) {
        return Err(Error::invalid(format!(
            "code length {} does not match dictionary width {}",
            bad.len(),
            dict.n()
        )));
    }
    let cols = par::map_range(codes.len(), |i| {
        let z = codes[i].to_dvector();
        let mut y = dict.atoms() * z;
        if noise_sigma > 0.0 {
            let mut rng = seed::derived_rng(seed, "observe", &[i as u64]);
            for v in y.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += noise_sigma * e;
            }
        }
        y
    });
    Ok(ObservationBatch::from_samples(&cols)?.with_provenance(Provenance {
        dictionary_id: dict.fingerprint(),
        noise_sigma,
        seed,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sparsity_gives_zero_code() {
        let c = sample_k_sparse(8, 0, ValueDist::UniformSigned, 3).unwrap();
        assert_eq!(c.values(), &[0.0; 8]);
        assert!(c.support().is_empty());
    }

    #[test]
    fn full_binary_support_is_all_ones() {
        let c = sample_k_sparse(4, 4, ValueDist::Binary, 11).unwrap();
        assert_eq!(c.values(), &[1.0; 4]);
        assert_eq!(c.support(), &[0, 1, 2, 3]);
    }

    #[test]
    fn k_above_n_is_rejected() {
        assert!(matches!(
            sample_k_sparse(3, 4, ValueDist::Binary, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(sample_k_sparse(0, 0, ValueDist::Binary, 0).is_err());
    }

    #[test]
    fn support_frequencies_are_uniform() {
        // Monte-Carlo count oracle: each index is active with probability k/n.
        let (n, k, draws) = (16, 3, 10_000);
        let codes = sample_codes(n, k, ValueDist::UniformSigned, draws, 2024).unwrap();
        let mut counts = vec![0usize; n];
        for c in &codes {
            assert_eq!(c.support().len(), k);
            for &i in c.support() {
                counts[i] += 1;
            }
        }
        for &cnt in &counts {
            let freq = cnt as f64 / draws as f64;
            assert!((freq - 3.0 / 16.0).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn value_distributions_respect_ranges() {
        let codes = sample_codes(10, 5, ValueDist::UniformSigned, 200, 5).unwrap();
        for c in &codes {
            for &i in c.support() {
                let v = c.values()[i].abs();
                assert!((0.5..=1.5).contains(&v));
            }
        }
        let codes = sample_codes(10, 5, ValueDist::UnitGaussianMagnitude, 200, 5).unwrap();
        assert!(codes.iter().all(|c| c.values().iter().all(|v| *v >= 0.0)));
        assert!(codes.iter().all(|c| c.support().len() == 5));
    }

    #[test]
    fn identity_projection() {
        let d = Dictionary::identity(4);
        let z = LatentCode::from_values(vec![1.0, 0.0, 2.0, 0.0]);
        let b = observe(&d, &[z], 0.0, 1).unwrap();
        assert_eq!(b.sample(0), &[1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn zero_code_observes_zero() {
        let d = sample_dictionary(5, 9, DictionaryKind::GaussianNormalized, 4).unwrap();
        let b = observe(&d, &[LatentCode::zeros(9)], 0.0, 1).unwrap();
        assert!(b.sample(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_built_superposed_projection() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let d = Dictionary::new(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, s, 0.0, 1.0, s])).unwrap();
        let b = observe(&d, &[LatentCode::from_values(vec![0.0, 0.0, 1.0])], 0.0, 0).unwrap();
        assert!((b.sample(0)[0] - s).abs() < 1e-15);
        assert!((b.sample(0)[1] - s).abs() < 1e-15);
    }

    #[test]
    fn observe_rejects_length_mismatch() {
        let d = Dictionary::identity(3);
        assert!(observe(&d, &[LatentCode::zeros(4)], 0.0, 0).is_err());
        assert!(observe(&d, &[LatentCode::zeros(3)], -1.0, 0).is_err());
    }

    #[test]
    fn noisy_observations_are_seed_deterministic() {
        let d = sample_dictionary(6, 10, DictionaryKind::GaussianNormalized, 9).unwrap();
        let codes = sample_codes(10, 2, ValueDist::UniformSigned, 50, 1).unwrap();
        let a = observe(&d, &codes, 0.1, 77).unwrap();
        let b = observe(&d, &codes, 0.1, 77).unwrap();
        assert_eq!(a, b);
        let c = observe(&d, &codes, 0.1, 78).unwrap();
        assert_ne!(a.samples(), c.samples());
    }
}
