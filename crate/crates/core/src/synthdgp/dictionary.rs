// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, col};
use crate::seed;

/// Column-norm tolerance for a valid dictionary.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// `M × N` matrix of unit-norm atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DictionaryKind {
    /// I.i.d. standard normal entries, then each column normalized.
    #[default]
    GaussianNormalized,
    /// First `n` columns of a random orthogonal `m × m` matrix.
    RandomOrthonormalSubset,
    Identity,
}

impl Dictionary {
    /// Wrap `atoms`, checking every column has norm `1 ± 1e-9`.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        check_shape(&atoms)?;
        for j in 0..atoms.ncols() {
            let nrm = linalg::norm(col(&atoms, j));
            if !((nrm - 1.0).abs() < UNIT_NORM_TOL) {
                return Err(Error::invalid(format!("atom {j} has norm {nrm}, expected 1")));
            }
        }
        Ok(Self { atoms })
    }

    /// Normalize each column of `atoms`. Zero or non-finite columns are rejected.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        check_shape(&atoms)?;
        if !linalg::all_finite(atoms.as_slice()) {
            return Err(Error::invalid("dictionary entries must be finite"));
        }
        let norms = linalg::normalize_columns(&mut atoms);
        if let Some(j) = norms.iter().position(|n| *n == 0.0) {
            return Err(Error::invalid(format!("atom {j} is the zero vector")));
        }
        Ok(Self { atoms })
    }

    pub fn identity(n: usize) -> Self {
        Self { atoms: DMatrix::identity(n, n) }
    }

    /// Ambient dimension.
    pub fn m(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms.
    pub fn n(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        col(&self.atoms, j)
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.atoms
    }

    /// Largest deviation of a column norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.n())
            .map(|j| (linalg::norm(self.atom(j)) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Content hash used as a dictionary id in provenance records.
    pub fn fingerprint(&self) -> u64 {
        seed::splitmix64(seed::hash_f64s(self.atoms.as_slice()) ^ ((self.m() as u64) << 32 | self.n() as u64))
    }
}

fn check_shape(atoms: &DMatrix<f64>) -> Result<()> {
    if atoms.nrows() == 0 || atoms.ncols() == 0 {
        return Err(Error::invalid("dictionary needs M ≥ 1 and N ≥ 1"));
    }
    Ok(())
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed);
    // filled column by column so the layout never depends on nalgebra internals
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    m
}

/// Random `rows × cols` matrix with orthonormal columns (`cols ≤ rows`).
pub(crate) fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    debug_assert!(cols <= rows);
    let g = gaussian_matrix(rows, rows, seed);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    // sign-fix against R's diagonal so Q is Haar distributed
    let mut out = q.columns(0, cols).into_owned();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            out.column_mut(j).neg_mut();
        }
    }
    out
}

pub fn sample_dictionary(m: usize, n: usize, kind: DictionaryKind, seed: u64) -> Result<Dictionary> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("dictionary needs M ≥ 1 and N ≥ 1"));
    }
    match kind {
        DictionaryKind::Identity => {
            if m != n {
                return Err(Error::invalid(format!("identity dictionary requires m = n, got {m}×{n}")));
            }
            Ok(Dictionary::identity(n))
        }
        DictionaryKind::RandomOrthonormalSubset => {
            if n > m {
                return Err(Error::invalid(format!("orthonormal subset requires n ≤ m, got {m}×{n}")));
            }
            let mut q = random_orthonormal(m, n, seed);
            linalg::normalize_columns(&mut q);
            Ok(Dictionary { atoms: q })
        }
        DictionaryKind::GaussianNormalized => {
            let mut g = gaussian_matrix(m, n, seed);
            let norms = linalg::normalize_columns(&mut g);
            if norms.iter().any(|v| *v == 0.0) {
                // probability zero; only reachable for degenerate RNG output
                return Err(Error::invalid("sampled a zero atom"));
            }
            Ok(Dictionary { atoms: g })
        }
    }
}
