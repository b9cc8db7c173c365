// SPDX-License-Identifier: MIT OR Apache-2.0

//! Proximal-gradient solvers (ISTA and FISTA).
//!
//! The smooth term is `f(z) = ‖y − Θz‖²` with gradient `2Θᵀ(Θz − y)`, so its
//! Lipschitz constant is `L = 2‖Θ‖₂²` and one step is
//! `z ← soft_threshold(z − ∇f(z)/L, λ/L)`. With an identity dictionary this
//! reduces to soft thresholding `y` at `λ/2`.

use nalgebra::DVector;

use super::{check_dims, shrink, SolverConfig, SparseSolution, StepRule, CONVERGENCE_STREAK};
use crate::error::{Error, Result};
use crate::linalg;
use crate::synthdgp::Dictionary;

const POWER_ITERS: usize = 100;
const POWER_TOL: f64 = 1e-10;

/// `2‖Θ‖₂²` by power iteration.
pub fn lipschitz_constant(dict: &Dictionary) -> f64 {
    2.0 * linalg::spectral_norm_sq(dict.atoms(), POWER_ITERS, POWER_TOL)
}

/// One ISTA step from `z` with step `1/lipschitz`.
pub fn proximal_step(dict: &Dictionary, y: &DVector<f64>, z: &DVector<f64>, lambda: f64, lipschitz: f64) -> DVector<f64> {
    let r = dict.atoms() * z - y;
    let grad = dict.atoms().tr_mul(&r) * 2.0;
    prox(z, &grad, lambda, lipschitz)
}

#[inline]
fn prox(point: &DVector<f64>, grad: &DVector<f64>, lambda: f64, lip: f64) -> DVector<f64> {
    let t = lambda / lip;
    point.zip_map(grad, |p, g| shrink(p - g / lip, t))
}

struct Problem<'a> {
    dict: &'a Dictionary,
    y: &'a DVector<f64>,
    lambda: f64,
    rule: StepRule,
    lip: f64,
    grad: DVector<f64>,
}

impl<'a> Problem<'a> {
    fn new(dict: &'a Dictionary, y: &'a DVector<f64>, cfg: &SolverConfig, known_lip: Option<f64>) -> Self {
        let lip = match cfg.step_rule {
            StepRule::FixedInverseLipschitz => known_lip.unwrap_or_else(|| lipschitz_constant(dict)),
            // 2·max‖θ_j‖² = 2 never exceeds the true constant for unit atoms
            StepRule::Backtracking => 2.0,
        };
        Self { dict, y, lambda: cfg.lambda, rule: cfg.step_rule, lip, grad: DVector::zeros(dict.n()) }
    }

    /// Writes `Θz − y` into `r` and returns its squared norm.
    fn smooth_into(&self, z: &DVector<f64>, r: &mut DVector<f64>) -> f64 {
        self.dict.atoms().mul_to(z, r);
        *r -= self.y;
        r.norm_squared()
    }

    /// Proximal step from `point`, whose smooth value and residual are
    /// `f_point` and `r_point`. Writes the new iterate and its residual into
    /// `z` and `r` and returns the new smooth value.
    fn step_into(
        &mut self,
        point: &DVector<f64>,
        f_point: f64,
        r_point: &DVector<f64>,
        z: &mut DVector<f64>,
        r: &mut DVector<f64>,
    ) -> f64 {
        self.dict.atoms().tr_mul_to(r_point, &mut self.grad);
        self.grad *= 2.0;
        loop {
            let t = self.lambda / self.lip;
            for ((zi, p), g) in z.iter_mut().zip(point.iter()).zip(self.grad.iter()) {
                *zi = shrink(p - g / self.lip, t);
            }
            let smooth = self.smooth_into(z, r);
            if self.rule == StepRule::FixedInverseLipschitz {
                return smooth;
            }
            let d = &*z - point;
            let model = f_point + self.grad.dot(&d) + 0.5 * self.lip * d.norm_squared();
            if smooth <= model || !smooth.is_finite() || self.lip > 1e300 {
                return smooth;
            }
            self.lip *= 2.0;
        }
    }
}

fn start_point(dict: &Dictionary, y: &DVector<f64>, cfg: &SolverConfig, init: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    cfg.validate()?;
    check_dims(dict, y)?;
    match init {
        Some(z) if z.len() != dict.n() => Err(Error::invalid("initial code length mismatch")),
        Some(z) if !linalg::all_finite(z.as_slice()) => Err(Error::invalid("initial code is not finite")),
        Some(z) => Ok(z.clone()),
        None => Ok(DVector::zeros(dict.n())),
    }
}

#[inline]
fn relative_change(prev: f64, next: f64) -> f64 {
    let diff = (prev - next).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / prev.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn ista(dict: &Dictionary, y: &DVector<f64>, cfg: &SolverConfig) -> Result<SparseSolution> {
    ista_from(dict, y, cfg, None)
}

/// ISTA warm-started at `init` (zero when `None`).
pub fn ista_from(dict: &Dictionary, y: &DVector<f64>, cfg: &SolverConfig, init: Option<&DVector<f64>>) -> Result<SparseSolution> {
    ista_prepared(dict, y, cfg, init, None)
}

/// ISTA with an optional precomputed `L` (used by the fixed step rule only).
pub(crate) fn ista_prepared(
    dict: &Dictionary,
    y: &DVector<f64>,
    cfg: &SolverConfig,
    init: Option<&DVector<f64>>,
    lipschitz: Option<f64>,
) -> Result<SparseSolution> {
    let mut z = start_point(dict, y, cfg, init)?;
    let mut prob = Problem::new(dict, y, cfg, lipschitz);
    let mut r = DVector::zeros(dict.m());
    let mut f = prob.smooth_into(&z, &mut r);
    let mut obj = f + cfg.lambda * z.lp_norm(1);
    let mut z_next = z.clone();
    let mut r_next = r.clone();
    let mut trace = vec![obj];
    let mut streak = 0;
    let mut iters = 0;
    let mut converged = false;
    while iters < cfg.max_iters {
        f = prob.step_into(&z, f, &r, &mut z_next, &mut r_next);
        std::mem::swap(&mut z, &mut z_next);
        std::mem::swap(&mut r, &mut r_next);
        let next = f + cfg.lambda * z.lp_norm(1);
        iters += 1;
        let rel = relative_change(obj, next);
        obj = next;
        trace.push(obj);
        if !obj.is_finite() {
            return Err(Error::invalid("objective became non-finite"));
        }
        if rel < cfg.tol {
            streak += 1;
            if streak >= CONVERGENCE_STREAK {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }
    Ok(SparseSolution { code: z, objective_trace: trace, iterations_used: iters, converged })
}

pub fn fista(dict: &Dictionary, y: &DVector<f64>, cfg: &SolverConfig) -> Result<SparseSolution> {
    fista_from(dict, y, cfg, None)
}

/// FISTA with momentum `t_{k+1} = (1 + √(1 + 4t_k²))/2`, warm-started at `init`.
pub fn fista_from(dict: &Dictionary, y: &DVector<f64>, cfg: &SolverConfig, init: Option<&DVector<f64>>) -> Result<SparseSolution> {
    fista_prepared(dict, y, cfg, init, None)
}

pub(crate) fn fista_prepared(
    dict: &Dictionary,
    y: &DVector<f64>,
    cfg: &SolverConfig,
    init: Option<&DVector<f64>>,
    lipschitz: Option<f64>,
) -> Result<SparseSolution> {
    let mut x = start_point(dict, y, cfg, init)?;
    let mut prob = Problem::new(dict, y, cfg, lipschitz);
    let mut momentum_point = x.clone();
    let mut r_momentum = DVector::zeros(dict.m());
    let mut z = x.clone();
    let mut r = DVector::zeros(dict.m());
    let mut t = 1.0f64;
    let mut obj = prob.smooth_into(&x, &mut r) + cfg.lambda * x.lp_norm(1);
    let mut trace = vec![obj];
    let mut streak = 0;
    let mut iters = 0;
    let mut converged = false;
    while iters < cfg.max_iters {
        let f_momentum = prob.smooth_into(&momentum_point, &mut r_momentum);
        let smooth = prob.step_into(&momentum_point, f_momentum, &r_momentum, &mut z, &mut r);
        let next = smooth + cfg.lambda * z.lp_norm(1);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for ((mp, zi), xi) in momentum_point.iter_mut().zip(z.iter()).zip(x.iter()) {
            *mp = zi + (zi - xi) * beta;
        }
        std::mem::swap(&mut x, &mut z);
        t = t_next;
        iters += 1;
        let rel = relative_change(obj, next);
        obj = next;
        trace.push(obj);
        if !obj.is_finite() {
            return Err(Error::invalid("objective became non-finite"));
        }
        if rel < cfg.tol {
            streak += 1;
            if streak >= CONVERGENCE_STREAK {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }
    Ok(SparseSolution { code: x, objective_trace: trace, iterations_used: iters, converged })
}
