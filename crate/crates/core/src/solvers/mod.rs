// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sparse inference at a fixed dictionary:
//! `min_z ‖y − Θz‖₂² + λ‖z‖₁` (no ½ on the quadratic term).

mod exhaustive;
mod omp;
mod proximal;

pub use exhaustive::{binomial, exhaustive_oracle, EXHAUSTIVE_BUDGET};
pub use omp::omp;
pub use proximal::{fista, fista_from, ista, ista_from, lipschitz_constant, proximal_step};
pub(crate) use proximal::{fista_prepared, ista_prepared};

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::linalg;
use crate::par;
use crate::synthdgp::{Dictionary, ObservationBatch};

/// Relative threshold used to call a coefficient active: `|z_i| > 1e-3 · max|z|`.
pub const SUPPORT_REL_THRESHOLD: f64 = 1e-3;

/// Consecutive small-change iterations required to declare convergence.
pub const CONVERGENCE_STREAK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Step `1/L` with `L = 2‖Θ‖₂²` from power iteration.
    #[default]
    #[serde(rename = "fixed-1-over-L")]
    FixedInverseLipschitz,
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative objective change tolerance.
    pub tol: f64,
    pub step_rule: StepRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { lambda: 0.1, max_iters: 1000, tol: 1e-8, step_rule: StepRule::FixedInverseLipschitz }
    }
}

impl SolverConfig {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    pub code: DVector<f64>,
    /// Objective value before the first iteration, then one entry per iteration.
    /// For OMP this is the squared residual after each greedy step.
    pub objective_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl SparseSolution {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn support(&self) -> Vec<usize> {
        active_support(self.code.as_slice())
    }
}

/// Indices with `|z_i| > 1e-3 · max|z|` (empty for the zero vector).
pub fn active_support(code: &[f64]) -> Vec<usize> {
    let max = code.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    let thr = SUPPORT_REL_THRESHOLD * max;
    code.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > thr)
        .map(|(i, _)| i)
        .collect()
}

pub(crate) fn check_dims(dict: &Dictionary, y: &DVector<f64>) -> Result<()> {
    if y.len() != dict.m() {
        return Err(Error::invalid(format!(
            "observation length {} does not match dictionary rows {}",
            y.len(),
            dict.m()
        )));
    }
    if !linalg::all_finite(y.as_slice()) {
        return Err(Error::invalid("observation contains non-finite values"));
    }
    Ok(())
}

/// `‖y − Θz‖₂² + λ‖z‖₁`.
pub fn objective(dict: &Dictionary, y: &DVector<f64>, z: &DVector<f64>, lambda: f64) -> Result<f64> {
    if y.len() != dict.m() || z.len() != dict.n() {
        return Err(Error::invalid(format!(
            "dimension mismatch: dictionary {}×{}, y {}, z {}",
            dict.m(),
            dict.n(),
            y.len(),
            z.len()
        )));
    }
    Ok(objective_unchecked(dict, y, z, lambda))
}

pub(crate) fn objective_unchecked(dict: &Dictionary, y: &DVector<f64>, z: &DVector<f64>, lambda: f64) -> f64 {
    let r = dict.atoms() * z - y;
    r.norm_squared() + lambda * z.lp_norm(1)
}

/// Elementwise `sign(v)·max(|v| − t, 0)`.
pub fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| shrink(x, t))
}

#[inline]
pub(crate) fn shrink(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Which solver to run for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Ista(SolverConfig),
    Fista(SolverConfig),
    Omp { k_max: usize, residual_tol: f64 },
    Exhaustive { k: usize },
}

pub fn solve(dict: &Dictionary, y: &DVector<f64>, method: &Method) -> Result<SparseSolution> {
    match method {
        Method::Ista(cfg) => ista(dict, y, cfg),
        Method::Fista(cfg) => fista(dict, y, cfg),
        Method::Omp { k_max, residual_tol } => omp(dict, y, *k_max, *residual_tol),
        Method::Exhaustive { k } => exhaustive_oracle(dict, y, *k),
    }
}

/// Solve every sample independently; results are in sample order and do not
/// depend on how the batch is partitioned across workers.
pub fn solve_batch(dict: &Dictionary, batch: &ObservationBatch, method: &Method) -> Vec<Result<SparseSolution>> {
    if batch.dim() != dict.m() {
        let err = || Err(Error::invalid(format!("observation dim {} != dictionary rows {}", batch.dim(), dict.m())));
        return (0..batch.len()).map(|_| err()).collect();
    }
    // L depends only on the dictionary, so compute it once for the batch
    let lip = match method {
        Method::Ista(c) | Method::Fista(c) if c.step_rule == StepRule::FixedInverseLipschitz => {
            Some(lipschitz_constant(dict))
        }
        _ => None,
    };
    par::map_range(batch.len(), |i| {
        let y = batch.sample_vector(i);
        match method {
            Method::Ista(cfg) => ista_prepared(dict, &y, cfg, None, lip),
            Method::Fista(cfg) => fista_prepared(dict, &y, cfg, None, lip),
            _ => solve(dict, &y, method),
        }
    })
}

/// CSV, one row per sample: `sample,iterations,objective,sparsity,support`
/// (support indices joined by `;`). Failed samples get an `error` note.
pub fn write_solutions_csv<W: Write>(w: W, solutions: &[Result<SparseSolution>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["sample", "iterations", "objective", "sparsity", "support", "converged", "error"])?;
    for (i, s) in solutions.iter().enumerate() {
        match s {
            Ok(s) => {
                let support = s.support();
                let joined = support.iter().map(ToString::to_string).collect::<Vec<_>>().join(";");
                wtr.write_record([
                    i.to_string(),
                    s.iterations_used.to_string(),
                    fmt_f64(s.final_objective()),
                    support.len().to_string(),
                    joined,
                    s.converged.to_string(),
                    String::new(),
                ])?;
            }
            Err(e) => {
                wtr.write_record([i.to_string(), String::new(), String::new(), String::new(), String::new(), "false".into(), e.to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn objective_hand_values() {
        let d = Dictionary::identity(2);
        assert_eq!(objective(&d, &v(&[0.0, 0.0]), &v(&[0.0, 0.0]), 1.0).unwrap(), 0.0);
        assert_eq!(objective(&d, &v(&[1.0, 0.0]), &v(&[1.0, 0.0]), 2.0).unwrap(), 2.0);
        assert_eq!(objective(&d, &v(&[1.0, 0.0]), &v(&[0.0, 0.0]), 5.0).unwrap(), 1.0);
        assert!(objective(&d, &v(&[1.0]), &v(&[0.0, 0.0]), 5.0).is_err());
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(&v(&[3.0, -0.4]), 1.0), v(&[2.0, 0.0]));
        let x = v(&[1.5, -2.0, 0.0, 1e-300]);
        assert_eq!(soft_threshold(&x, 0.0), x);
        assert_eq!(soft_threshold(&v(&[-2.5]), 2.5), v(&[0.0]));
    }

    #[test]
    fn support_rule_is_relative() {
        assert_eq!(active_support(&[0.0, 1.0, 5e-4, -2e-3, 0.5]), vec![1, 3, 4]);
        assert!(active_support(&[0.0, 0.0]).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(-1.0).validate().is_err());
        assert!(SolverConfig { tol: 0.0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { max_iters: 0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig::default().validate().is_ok());
    }

    #[test]
    fn solutions_csv_has_one_row_per_sample() {
        let d = Dictionary::identity(3);
        let b = ObservationBatch::new(DMatrix::from_column_slice(3, 2, &[0.0, 5.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
        let sols = solve_batch(&d, &b, &Method::Omp { k_max: 1, residual_tol: 1e-9 });
        let mut out = Vec::new();
        write_solutions_csv(&mut out, &sols).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,1,"));
        assert!(lines[1].contains(",1,1,true,"));
    }
}
