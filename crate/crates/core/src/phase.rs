// SPDX-License-Identifier: MIT OR Apache-2.0

//! Monte-Carlo recovery phase diagrams over `(K, M)` at fixed `N`, and the
//! fit of the empirical 50% boundary against `K·ln(N/K)`.
//!
//! Every trial draws a fresh gaussian dictionary and a fresh `K`-sparse code
//! from its own seed `derive_seed(master, "phase-trial", [k, m, trial])`, so
//! any cell can be reproduced alone and the grid does not depend on the
//! number of workers.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::linalg;
use crate::par;
use crate::seed::derive_seed;
use crate::solvers::{binomial, exhaustive_oracle, ista_prepared, lipschitz_constant, omp, SolverConfig, EXHAUSTIVE_BUDGET};
use crate::synthdgp::{sample_dictionary, sample_k_sparse, DictionaryKind, ValueDist};

/// `k·ln(n/k)`, the compressed-sensing measurement count with unit constant.
pub fn theoretical_min_m(k: usize, n: f64) -> Result<f64> {
    let kf = k as f64;
    if k == 0 || !(kf <= n) {
        return Err(Error::invalid(format!("need 1 ≤ k ≤ n, got k={k}, n={n}")));
    }
    Ok(kf * (n / kf).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseSolver {
    #[default]
    Omp,
    /// ISTA, then a least-squares refit on its `k` largest coefficients.
    Ista,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessCriterion {
    /// Estimated support equals the true support.
    #[default]
    SupportExact,
    /// `|cos(ẑ, z)| ≥ 0.99`. The dictionary is known, so units need no matching.
    Mcc,
    /// `‖ẑ − z‖ / ‖z‖ ≤ 1e-3`.
    RelativeL2,
}

/// Threshold for [`SuccessCriterion::Mcc`].
pub const MCC_SUCCESS: f64 = 0.99;
/// Threshold for [`SuccessCriterion::RelativeL2`].
pub const L2_SUCCESS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub n: usize,
    pub k_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub trials_per_cell: usize,
    pub solver: PhaseSolver,
    pub criterion: SuccessCriterion,
    pub seed: u64,
    /// Inner solver settings when `solver = ista`.
    pub ista: SolverConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            n: 128,
            k_values: (1..=8).collect(),
            m_values: default_m_grid(),
            trials_per_cell: 200,
            solver: PhaseSolver::Omp,
            criterion: SuccessCriterion::SupportExact,
            seed: 0,
            ista: SolverConfig { lambda: 1e-3, max_iters: 2000, tol: 1e-10, ..SolverConfig::default() },
        }
    }
}

/// Measurement counts used by the default sweep.
pub fn default_m_grid() -> Vec<usize> {
    vec![1, 2, 3, 4, 6, 8, 10, 12, 14, 16, 20, 24, 28, 32, 40, 48, 56, 64, 80, 96]
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::invalid("trials_per_cell must be positive"));
        }
        if self.k_values.is_empty() || self.m_values.is_empty() {
            return Err(Error::invalid("k_values and m_values must be non-empty"));
        }
        if let Some(k) = self.k_values.iter().find(|&&k| k == 0 || k > self.n) {
            return Err(Error::invalid(format!("k={k} outside 1..={}", self.n)));
        }
        if self.m_values.contains(&0) {
            return Err(Error::invalid("m values must be positive"));
        }
        if self.solver == PhaseSolver::Exhaustive {
            for &k in &self.k_values {
                let supports = binomial(self.n, k);
                if supports > EXHAUSTIVE_BUDGET {
                    return Err(Error::BudgetExceeded { supports, limit: EXHAUSTIVE_BUDGET });
                }
            }
        }
        if self.solver == PhaseSolver::Ista {
            self.ista.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub n: usize,
    pub k_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub trials_per_cell: usize,
    /// `successes[ki][mi]`.
    pub successes: Vec<Vec<usize>>,
    pub solver: PhaseSolver,
    pub criterion: SuccessCriterion,
}

impl PhaseGrid {
    pub fn rate(&self, ki: usize, mi: usize) -> f64 {
        self.successes[ki][mi] as f64 / self.trials_per_cell as f64
    }

    /// `success_rate[ki][mi]`.
    pub fn success_rate(&self) -> Vec<Vec<f64>> {
        (0..self.k_values.len()).map(|ki| (0..self.m_values.len()).map(|mi| self.rate(ki, mi)).collect()).collect()
    }

    /// `k,m,trials,successes,rate`, K-major.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["k", "m", "trials", "successes", "rate"])?;
        for (ki, k) in self.k_values.iter().enumerate() {
            for (mi, m) in self.m_values.iter().enumerate() {
                wtr.write_record([
                    k.to_string(),
                    m.to_string(),
                    self.trials_per_cell.to_string(),
                    self.successes[ki][mi].to_string(),
                    fmt_f64(self.rate(ki, mi)),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Indices of the `k` largest-magnitude entries (lowest index on ties),
/// restricted to nonzero entries, sorted ascending.
pub fn top_k_support(code: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..code.len()).filter(|&i| code[i] != 0.0).collect();
    idx.sort_by(|&a, &b| code[b].abs().total_cmp(&code[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// One trial; solver errors count as failures.
pub fn run_trial(spec: &SweepSpec, k: usize, m: usize, trial: usize) -> bool {
    let s = derive_seed(spec.seed, "phase-trial", &[k as u64, m as u64, trial as u64]);
    let Ok(dict) = sample_dictionary(m, spec.n, DictionaryKind::GaussianNormalized, derive_seed(s, "dictionary", &[]))
    else {
        return false;
    };
    let Ok(code) = sample_k_sparse(spec.n, k, ValueDist::UniformSigned, derive_seed(s, "code", &[])) else {
        return false;
    };
    let z = code.to_dvector();
    let y = dict.atoms() * &z;
    let estimate = match spec.solver {
        PhaseSolver::Omp => omp(&dict, &y, k, 1e-10 * y.norm()).map(|s| s.code),
        PhaseSolver::Exhaustive => exhaustive_oracle(&dict, &y, k).map(|s| s.code),
        PhaseSolver::Ista => ista_prepared(&dict, &y, &spec.ista, None, Some(lipschitz_constant(&dict))).map(|s| {
            let keep = top_k_support(s.code.as_slice(), k);
            let mut out = DVector::zeros(spec.n);
            let sub = dict.atoms().select_columns(&keep);
            match linalg::lstsq_qr(&sub, &y) {
                Some(coef) => keep.iter().zip(coef.iter()).for_each(|(&i, &c)| out[i] = c),
                None => keep.iter().for_each(|&i| out[i] = s.code[i]),
            }
            out
        }),
    };
    let Ok(est) = estimate else { return false };
    if !linalg::all_finite(est.as_slice()) {
        return false;
    }
    match spec.criterion {
        SuccessCriterion::SupportExact => top_k_support(est.as_slice(), k) == code.support(),
        SuccessCriterion::Mcc => linalg::cosine(est.as_slice(), z.as_slice()).is_some_and(|c| c.abs() >= MCC_SUCCESS),
        SuccessCriterion::RelativeL2 => (&est - &z).norm() <= L2_SUCCESS * z.norm(),
    }
}

pub fn run_phase_sweep(spec: &SweepSpec) -> Result<PhaseGrid> {
    spec.validate()?;
    let (nk, nm, t) = (spec.k_values.len(), spec.m_values.len(), spec.trials_per_cell);
    let outcomes = par::map_range(nk * nm * t, |flat| {
        let ki = flat / (nm * t);
        let mi = (flat / t) % nm;
        run_trial(spec, spec.k_values[ki], spec.m_values[mi], flat % t)
    });
    let mut successes = vec![vec![0usize; nm]; nk];
    for (flat, ok) in outcomes.into_iter().enumerate() {
        if ok {
            successes[flat / (nm * t)][(flat / t) % nm] += 1;
        }
    }
    Ok(PhaseGrid {
        n: spec.n,
        k_values: spec.k_values.clone(),
        m_values: spec.m_values.clone(),
        trials_per_cell: t,
        successes,
        solver: spec.solver,
        criterion: spec.criterion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub k: usize,
    /// `K·ln(N/K)`.
    pub theory: f64,
    /// Interpolated 50%-success measurement count; `None` when the row never crosses.
    pub m_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFit {
    pub points: Vec<BoundaryPoint>,
    /// K values without a 50% crossing, excluded from the fit.
    pub flagged: Vec<usize>,
    /// Least-squares `c` in `M* ≈ c·K·ln(N/K)` through the origin.
    pub c: Option<f64>,
    /// Pearson correlation of `M*` with `K·ln(N/K)` over unflagged K.
    pub pearson_r: Option<f64>,
}

/// First upward crossing of 50% success along M, by linear interpolation.
pub fn fit_boundary(grid: &PhaseGrid) -> BoundaryFit {
    let mut points = Vec::new();
    let mut flagged = Vec::new();
    for (ki, &k) in grid.k_values.iter().enumerate() {
        let theory = theoretical_min_m(k, grid.n as f64).unwrap_or(f64::NAN);
        let mut m_star = None;
        for mi in 1..grid.m_values.len() {
            let (r0, r1) = (grid.rate(ki, mi - 1), grid.rate(ki, mi));
            if r0 < 0.5 && r1 >= 0.5 {
                let (m0, m1) = (grid.m_values[mi - 1] as f64, grid.m_values[mi] as f64);
                m_star = Some(m0 + (0.5 - r0) * (m1 - m0) / (r1 - r0));
                break;
            }
        }
        if m_star.is_none() {
            flagged.push(k);
        }
        points.push(BoundaryPoint { k, theory, m_star });
    }
    let pairs: Vec<(f64, f64)> = points.iter().filter_map(|p| p.m_star.map(|m| (p.theory, m))).collect();
    let sxx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
    let c = (!pairs.is_empty() && sxx > 0.0).then(|| pairs.iter().map(|(x, y)| x * y).sum::<f64>() / sxx);
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let pearson_r = if pairs.len() >= 2 { linalg::pearson(&xs, &ys) } else { None };
    BoundaryFit { points, flagged, c, pearson_r }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub k: usize,
    pub m: usize,
    /// The neighbouring cell along the tested axis.
    pub next: usize,
    pub drop: f64,
    pub slack: f64,
}

/// Two pooled binomial standard deviations of a difference of rates.
fn two_sigma(p0: f64, p1: f64, trials: usize) -> f64 {
    let p = 0.5 * (p0 + p1);
    2.0 * (2.0 * p * (1.0 - p) / trials as f64).sqrt()
}

/// Adjacent M cells where the success rate drops by more than 2σ.
pub fn m_monotonicity_violations(grid: &PhaseGrid) -> Vec<MonotonicityViolation> {
    let mut out = Vec::new();
    for (ki, &k) in grid.k_values.iter().enumerate() {
        for mi in 1..grid.m_values.len() {
            let (r0, r1) = (grid.rate(ki, mi - 1), grid.rate(ki, mi));
            let slack = two_sigma(r0, r1, grid.trials_per_cell);
            if r0 - r1 > slack {
                out.push(MonotonicityViolation { k, m: grid.m_values[mi - 1], next: grid.m_values[mi], drop: r0 - r1, slack });
            }
        }
    }
    out
}

/// Adjacent K cells (at fixed M) where the success rate rises by more than 2σ.
pub fn k_monotonicity_violations(grid: &PhaseGrid) -> Vec<MonotonicityViolation> {
    let mut out = Vec::new();
    for (mi, &m) in grid.m_values.iter().enumerate() {
        for ki in 1..grid.k_values.len() {
            let (r0, r1) = (grid.rate(ki - 1, mi), grid.rate(ki, mi));
            let slack = two_sigma(r0, r1, grid.trials_per_cell);
            if r1 - r0 > slack {
                out.push(MonotonicityViolation {
                    k: grid.k_values[ki - 1],
                    m,
                    next: grid.k_values[ki],
                    drop: r1 - r0,
                    slack,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theoretical_examples() {
        assert_eq!(theoretical_min_m(5, 5.0).unwrap(), 0.0);
        assert!((theoretical_min_m(1, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        let direct = 10.0 * (10.0 * std::f64::consts::LN_2 - std::f64::consts::LN_10);
        assert!((theoretical_min_m(10, 1024.0).unwrap() - direct).abs() < 1e-12);
        assert!((direct - 46.29).abs() < 5e-3);
        assert!(theoretical_min_m(3, 2.0).is_err());
        assert!(theoretical_min_m(0, 2.0).is_err());
    }

    fn step_grid(n: usize, c: f64) -> PhaseGrid {
        let k_values: Vec<usize> = (1..=6).collect();
        let m_values: Vec<usize> = (1..=120).collect();
        let successes = k_values
            .iter()
            .map(|&k| {
                let edge = c * theoretical_min_m(k, n as f64).unwrap();
                m_values.iter().map(|&m| if m as f64 >= edge { 10 } else { 0 }).collect()
            })
            .collect();
        PhaseGrid {
            n,
            k_values,
            m_values,
            trials_per_cell: 10,
            successes,
            solver: PhaseSolver::Omp,
            criterion: SuccessCriterion::SupportExact,
        }
    }

    #[test]
    fn step_oracle_recovers_the_constant() {
        let fit = fit_boundary(&step_grid(64, 2.0));
        assert!(fit.flagged.is_empty());
        let c = fit.c.unwrap();
        // interpolation moves each M* by at most one grid step
        assert!((c - 2.0).abs() < 0.1, "{c}");
        assert!(fit.pearson_r.unwrap() > 0.99);
    }

    #[test]
    fn all_success_grid_flags_every_k() {
        let mut g = step_grid(64, 2.0);
        for row in &mut g.successes {
            row.iter_mut().for_each(|s| *s = 10);
        }
        let fit = fit_boundary(&g);
        assert_eq!(fit.flagged, g.k_values);
        assert_eq!(fit.c, None);
    }

    #[test]
    fn full_rank_cells_succeed_under_the_exhaustive_oracle() {
        let spec = SweepSpec {
            n: 16,
            k_values: vec![1, 2, 4],
            m_values: vec![1, 16],
            trials_per_cell: 40,
            solver: PhaseSolver::Exhaustive,
            seed: 3,
            ..SweepSpec::default()
        };
        let g = run_phase_sweep(&spec).unwrap();
        for ki in 0..3 {
            assert_eq!(g.rate(ki, 1), 1.0);
        }
        assert!(g.rate(1, 0) < 0.1 && g.rate(2, 0) < 0.1);
    }

    #[test]
    fn full_rank_cells_mostly_succeed_under_omp() {
        // greedy selection can still pick a wrong atom at m = n when k = n/4
        let spec = SweepSpec { n: 32, k_values: vec![1, 4], m_values: vec![1, 32], trials_per_cell: 200, seed: 3, ..SweepSpec::default() };
        let g = run_phase_sweep(&spec).unwrap();
        assert_eq!(g.rate(0, 1), 1.0);
        assert!(g.rate(1, 1) >= 0.95, "{:?}", g.successes);
        assert_eq!(g.rate(1, 0), 0.0);
    }

    #[test]
    fn every_solver_and_criterion_runs() {
        for solver in [PhaseSolver::Omp, PhaseSolver::Ista, PhaseSolver::Exhaustive] {
            for criterion in [SuccessCriterion::SupportExact, SuccessCriterion::Mcc, SuccessCriterion::RelativeL2] {
                let spec = SweepSpec {
                    n: 10,
                    k_values: vec![1, 2],
                    m_values: vec![2, 8],
                    trials_per_cell: 10,
                    solver,
                    criterion,
                    ..SweepSpec::default()
                };
                let g = run_phase_sweep(&spec).unwrap();
                assert!(g.rate(0, 1) >= 0.8, "{solver:?} {criterion:?}: {:?}", g.successes);
            }
        }
    }

    #[test]
    fn sweep_is_independent_of_thread_count() {
        let spec = SweepSpec { n: 32, k_values: vec![1, 3], m_values: vec![4, 8, 16], trials_per_cell: 20, ..SweepSpec::default() };
        let a = par::with_threads(Some(1), || run_phase_sweep(&spec).unwrap());
        let b = par::with_threads(Some(3), || run_phase_sweep(&spec).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs() {
        let zero = SweepSpec { trials_per_cell: 0, ..SweepSpec::default() };
        assert!(run_phase_sweep(&zero).is_err());
        let big = SweepSpec { solver: PhaseSolver::Exhaustive, ..SweepSpec::default() };
        assert!(matches!(run_phase_sweep(&big), Err(Error::BudgetExceeded { .. })));
        let bad_k = SweepSpec { n: 4, k_values: vec![5], ..SweepSpec::default() };
        assert!(run_phase_sweep(&bad_k).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = step_grid(16, 1.0);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,m,trials,successes,rate\n1,1,10,"));
        assert_eq!(text.lines().count(), 1 + 6 * 120);
    }

    #[test]
    fn top_k_support_ignores_zeros_and_breaks_ties_low() {
        assert_eq!(top_k_support(&[0.0, -2.0, 1.0, 2.0], 2), vec![1, 3]);
        assert_eq!(top_k_support(&[0.0, 0.0, 1.0], 2), vec![2]);
    }
}
