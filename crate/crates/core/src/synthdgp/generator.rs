// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dictionary::random_orthonormal;
use super::LatentCode;
use crate::error::{Error, Result};
use crate::linalg;
use crate::seed;

/// Slope of the linear leak in the two-layer generator's activation
/// `σ(u) = tanh(u) + LEAK·u`, which keeps σ strictly increasing.
pub const LEAK: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Linear,
    /// `x = R · z³` with `R` having orthonormal columns.
    PointwiseCubicThenRotation,
    /// `x = σ(A₂ σ(A₁ z + b₁) + b₂)` with well-conditioned `A₁`, `A₂`.
    #[default]
    TwoLayerInvertible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub seed: u64,
    pub input_dim: usize,
    pub output_dim: usize,
}

/// A materialized generator `g: R^input → R^output`.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Linear {
        matrix: DMatrix<f64>,
    },
    CubicRotation {
        rotation: DMatrix<f64>,
    },
    TwoLayer {
        first: DMatrix<f64>,
        first_bias: DVector<f64>,
        second: DMatrix<f64>,
        second_bias: DVector<f64>,
    },
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self { kind, seed, input_dim, output_dim }
    }

    pub fn build(&self) -> Result<Generator> {
        let (din, dout) = (self.input_dim, self.output_dim);
        if din == 0 || dout == 0 {
            return Err(Error::invalid("generator dimensions must be positive"));
        }
        if self.kind != GeneratorKind::Linear && dout < din {
            return Err(Error::invalid(format!(
                "invertible generator needs output_dim ≥ input_dim, got {din} → {dout}"
            )));
        }
        let mut rng = seed::derived_rng(self.seed, "generator", &[]);
        Ok(match self.kind {
            GeneratorKind::Linear => {
                let nd = Normal::new(0.0, 1.0 / (din as f64).sqrt()).expect("valid normal");
                let matrix = DMatrix::from_fn(dout, din, |_, _| nd.sample(&mut rng));
                Generator::Linear { matrix }
            }
            GeneratorKind::PointwiseCubicThenRotation => Generator::CubicRotation {
                rotation: random_orthonormal(dout, din, rng.random()),
            },
            GeneratorKind::TwoLayerInvertible => {
                // Scales are chosen so unit-sphere inputs land in the curved
                // part of tanh: pre-activations of order 1-3.
                let s1 = (din as f64).sqrt();
                let mut first = random_orthonormal(din, din, rng.random());
                for j in 0..din {
                    let s = s1 * rng.random_range(1.0..2.0);
                    first.column_mut(j).scale_mut(s);
                }
                let mut second = random_orthonormal(dout, din, rng.random());
                for j in 0..din {
                    let s = rng.random_range(1.0..2.0);
                    second.column_mut(j).scale_mut(s);
                }
                let nb = Normal::new(0.0, 0.25).expect("valid normal");
                let first_bias = DVector::from_fn(din, |_, _| nb.sample(&mut rng));
                let second_bias = DVector::from_fn(dout, |_, _| nb.sample(&mut rng));
                Generator::TwoLayer { first, first_bias, second, second_bias }
            }
        })
    }
}

#[inline]
pub fn leaky_tanh(u: f64) -> f64 {
    u.tanh() + LEAK * u
}

/// Inverse of [`leaky_tanh`] by bracketed Newton iteration.
pub fn leaky_tanh_inv(x: f64) -> f64 {
    let mut lo = (x - 1.0) / LEAK;
    let mut hi = (x + 1.0) / LEAK;
    let mut u = x / (1.0 + LEAK);
    for _ in 0..200 {
        let f = leaky_tanh(u) - x;
        if f.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let t = u.tanh();
        let slope = 1.0 - t * t + LEAK;
        let next = u - f / slope;
        u = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * u.abs().max(1.0) {
            break;
        }
    }
    u
}

impl Generator {
    pub fn linear(matrix: DMatrix<f64>) -> Self {
        Generator::Linear { matrix }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Generator::Linear { matrix } => matrix.ncols(),
            Generator::CubicRotation { rotation } => rotation.ncols(),
            Generator::TwoLayer { first, .. } => first.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Generator::Linear { matrix } => matrix.nrows(),
            Generator::CubicRotation { rotation } => rotation.nrows(),
            Generator::TwoLayer { second, .. } => second.nrows(),
        }
    }

    pub fn apply(&self, z: &[f64]) -> Result<DVector<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "latent length {} does not match generator input {}",
                z.len(),
                self.input_dim()
            )));
        }
        let z = DVector::from_column_slice(z);
        Ok(match self {
            Generator::Linear { matrix } => matrix * z,
            Generator::CubicRotation { rotation } => rotation * z.map(|v| v * v * v),
            Generator::TwoLayer { first, first_bias, second, second_bias } => {
                let h = (first * z + first_bias).map(leaky_tanh);
                (second * h + second_bias).map(leaky_tanh)
            }
        })
    }

    /// Apply to every code; output columns follow input order.
    pub fn apply_batch(&self, codes: &[LatentCode]) -> Result<DMatrix<f64>> {
        let cols = crate::par::map_slice(codes, |c| self.apply(c.values()))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    /// Numerical inverse on the range of the map (least squares on the linear parts).
    pub fn invert(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.output_dim() {
            return Err(Error::invalid("output length mismatch"));
        }
        let x = DVector::from_column_slice(x);
        Ok(match self {
            Generator::Linear { matrix } => linalg::lstsq_svd(matrix, &x),
            Generator::CubicRotation { rotation } => rotation.tr_mul(&x).map(f64::cbrt),
            Generator::TwoLayer { first, first_bias, second, second_bias } => {
                let u = x.map(leaky_tanh_inv) - second_bias;
                let h = linalg::lstsq_svd(second, &u).map(leaky_tanh_inv) - first_bias;
                linalg::lstsq_svd(first, &h)
            }
        })
    }

    /// Largest round-trip error `|g⁻¹(g(z)) − z|∞` over `codes`.
    pub fn round_trip_error(&self, codes: &[LatentCode]) -> Result<f64> {
        let errs = crate::par::map_slice(codes, |c| -> Result<f64> {
            let x = self.apply(c.values())?;
            let back = self.invert(x.as_slice())?;
            Ok(back
                .iter()
                .zip(c.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max))
        });
        errs.into_iter().try_fold(0.0, |acc, e| Ok(f64::max(acc, e?)))
    }
}

/// Materialize `spec` and map every code through it (`output_dim × count`).
pub fn generate_nonlinear(spec: &GeneratorSpec, codes: &[LatentCode]) -> Result<DMatrix<f64>> {
    let g = spec.build()?;
    if let Some(c) = codes.iter().find(|c| c.len() != spec.input_dim) {
        return Err(Error::invalid(format!(
            "code length {} does not match generator input {}",
            c.len(),
            spec.input_dim
        )));
    }
    g.apply_batch(codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdgp::{sample_codes, ValueDist};

    #[test]
    fn identity_linear_is_identity() {
        let g = Generator::linear(DMatrix::identity(3, 3));
        let z = LatentCode::from_values(vec![0.5, -1.0, 2.0]);
        assert_eq!(g.apply(z.values()).unwrap().as_slice(), z.values());
    }

    #[test]
    fn cubic_fixes_origin() {
        let spec = GeneratorSpec::new(GeneratorKind::PointwiseCubicThenRotation, 4, 6, 1);
        let x = generate_nonlinear(&spec, &[LatentCode::zeros(4)]).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = GeneratorSpec::new(GeneratorKind::TwoLayerInvertible, 4, 6, 1);
        assert!(generate_nonlinear(&spec, &[LatentCode::zeros(3)]).is_err());
        let shrinking = GeneratorSpec::new(GeneratorKind::TwoLayerInvertible, 4, 3, 1);
        assert!(shrinking.build().is_err());
    }

    #[test]
    fn leaky_tanh_inverse_round_trips() {
        for &u in &[-30.0, -3.0, -0.7, 0.0, 1e-9, 0.4, 2.5, 40.0] {
            let back = leaky_tanh_inv(leaky_tanh(u));
            assert!((back - u).abs() < 1e-12 * u.abs().max(1.0), "{u} -> {back}");
        }
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let spec = GeneratorSpec::new(GeneratorKind::TwoLayerInvertible, 3, 5, 42);
        assert_eq!(spec.build().unwrap(), spec.build().unwrap());
        let codes = sample_codes(3, 3, ValueDist::UniformSigned, 20, 0).unwrap();
        assert_eq!(generate_nonlinear(&spec, &codes).unwrap(), generate_nonlinear(&spec, &codes).unwrap());
    }

    #[test]
    fn cubic_rotation_inverts() {
        let spec = GeneratorSpec::new(GeneratorKind::PointwiseCubicThenRotation, 5, 8, 3);
        let g = spec.build().unwrap();
        let codes = sample_codes(5, 3, ValueDist::UniformSigned, 200, 9).unwrap();
        // the cube root turns rounding error near zero into ~1e-5 absolute error
        assert!(g.round_trip_error(&codes).unwrap() < 1e-4);
    }
}
