// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dictionary learning by alternating minimization of
//! `Σ_i ‖y_i − Θz_i‖² + λ‖z_i‖₁`: sparse inference with `Θ` fixed, then a
//! dictionary update with the codes fixed, projected back to unit-norm atoms.
//!
//! Inference is always warm-started, and a sample keeps its old code when
//! the solver ends higher. A candidate dictionary is scored after
//! re-inferring codes under it and is accepted only if the penalized
//! objective does not rise; a rejected least-squares candidate falls back to
//! a projected-gradient step (which cannot rise with codes fixed), and
//! failing that the dictionary is kept. The full-batch loss trace is
//! therefore non-increasing.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::linalg::{self, col, col_mut};
use crate::par;
use crate::seed::derived_rng;
use crate::solvers::{
    active_support, fista_prepared, ista_prepared, lipschitz_constant, objective_unchecked, SolverConfig, StepRule,
};
use crate::synthdgp::{Dictionary, ObservationBatch};

/// Ridge added to the code Gram matrix when it is not positive definite.
pub const RIDGE: f64 = 1e-8;

/// Under [`DeadAtomPolicy::ReinitToWorstResidual`], an atom whose `|cosine|`
/// with a lower-indexed atom exceeds this is replaced like a dead one.
pub const DUPLICATE_COSINE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    /// Exact least squares over the atoms, then column normalization.
    #[default]
    LeastSquaresThenProject,
    /// One gradient step with step `1/(2‖Z‖₂²)`, then column normalization.
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadAtomPolicy {
    /// Replace an unused atom by the normalized sample with the largest residual.
    #[default]
    ReinitToWorstResidual,
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMethod {
    Ista,
    #[default]
    Fista,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictLearnConfig {
    pub outer_rounds: usize,
    pub solver: SolverConfig,
    pub inference: InferenceMethod,
    pub update_rule: UpdateRule,
    pub dead_atom_policy: DeadAtomPolicy,
    /// Samples per round; `None` uses the full batch.
    pub batch_size: Option<usize>,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        Self {
            outer_rounds: 50,
            solver: SolverConfig { lambda: 0.3, max_iters: 200, tol: 1e-6, step_rule: StepRule::FixedInverseLipschitz },
            inference: InferenceMethod::Fista,
            update_rule: UpdateRule::LeastSquaresThenProject,
            dead_atom_policy: DeadAtomPolicy::ReinitToWorstResidual,
            batch_size: None,
        }
    }
}

impl DictLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_rounds == 0 {
            return Err(Error::invalid("outer_rounds must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size must be positive"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    /// Mean penalized objective over the round's samples.
    pub loss: f64,
    /// Mean squared reconstruction error.
    pub reconstruction: f64,
    pub mean_sparsity: f64,
    /// Largest angle (radians) between an atom and its previous version.
    pub dictionary_change: f64,
    pub dead_atoms: usize,
    pub update_accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DictLearnTrace {
    pub rounds: Vec<RoundStats>,
}

impl DictLearnTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.loss).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "round",
            "loss",
            "reconstruction",
            "mean_sparsity",
            "dictionary_change",
            "dead_atoms",
            "update_accepted",
        ])?;
        for r in &self.rounds {
            wtr.write_record([
                r.round.to_string(),
                fmt_f64(r.loss),
                fmt_f64(r.reconstruction),
                fmt_f64(r.mean_sparsity),
                fmt_f64(r.dictionary_change),
                r.dead_atoms.to_string(),
                r.update_accepted.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryUpdate {
    pub dictionary: Dictionary,
    /// Atoms whose code row was entirely zero, plus near-duplicates when
    /// dead atoms are reinitialized.
    pub dead_atoms: Vec<usize>,
    /// Dead atoms that were replaced.
    pub reinitialized: Vec<usize>,
    /// Pre-normalization norm of each updated atom; multiply code row `j`
    /// by `scales[j]` to keep `Θz` unchanged. Dead atoms report 0.
    pub scales: Vec<f64>,
}

/// One dictionary update with the codes (`N × D`, one column per sample) held fixed.
pub fn update_dictionary(
    batch: &ObservationBatch,
    codes: &DMatrix<f64>,
    rule: UpdateRule,
    policy: DeadAtomPolicy,
    current: &Dictionary,
) -> Result<DictionaryUpdate> {
    let (m, n) = (current.m(), current.n());
    if batch.dim() != m || codes.nrows() != n || codes.ncols() != batch.len() {
        return Err(Error::invalid(format!(
            "shapes disagree: dictionary {m}×{n}, codes {}×{}, batch {}×{}",
            codes.nrows(),
            codes.ncols(),
            batch.dim(),
            batch.len()
        )));
    }
    let y = batch.samples();
    let active: Vec<usize> = (0..n).filter(|&j| codes.row(j).iter().any(|v| *v != 0.0)).collect();
    let mut raw = current.atoms().clone();
    if !active.is_empty() {
        let za = codes.select_rows(&active);
        let updated = match rule {
            UpdateRule::LeastSquaresThenProject => least_squares_atoms(y, &za)?,
            UpdateRule::ProjectedGradient => {
                let theta_a = current.atoms().select_columns(&active);
                let grad = (&theta_a * &za - y) * za.transpose() * 2.0;
                let lip = 2.0 * linalg::spectral_norm_sq(&za, 100, 1e-10);
                theta_a - grad / lip
            }
        };
        for (c, &j) in active.iter().enumerate() {
            raw.set_column(j, &updated.column(c));
        }
    }
    let mut scales = vec![0.0; n];
    let mut dead: Vec<usize> = (0..n).filter(|j| active.binary_search(j).is_err()).collect();
    for &j in &active {
        let nrm = linalg::norm(col(&raw, j));
        if nrm > 0.0 && nrm.is_finite() {
            scales[j] = nrm;
            col_mut(&mut raw, j).iter_mut().for_each(|v| *v /= nrm);
        } else {
            dead.push(j);
        }
    }
    let mut reinitialized = Vec::new();
    if policy == DeadAtomPolicy::ReinitToWorstResidual {
        let scaled_codes = DMatrix::from_fn(n, codes.ncols(), |j, i| codes[(j, i)] * scales[j]);
        let mut fit = raw.clone();
        for &j in &dead {
            fit.column_mut(j).fill(0.0);
        }
        let resid = y - fit * scaled_codes;
        // a near-copy of an earlier atom is as good as dead
        for (pos, &j) in active.iter().enumerate() {
            if scales[j] > 0.0
                && active[..pos]
                    .iter()
                    .any(|&i| scales[i] > 0.0 && linalg::dot(col(&raw, i), col(&raw, j)).abs() > DUPLICATE_COSINE)
            {
                scales[j] = 0.0;
                dead.push(j);
            }
        }
        dead.sort_unstable();
        for &j in &dead {
            raw.set_column(j, &current.atoms().column(j));
        }
        let mut order: Vec<(usize, f64)> = (0..batch.len())
            .map(|i| (i, linalg::dot(col(&resid, i), col(&resid, i))))
            .filter(|&(i, r)| r > 0.0 && linalg::norm(batch.sample(i)) > 0.0)
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (&j, &(i, _)) in dead.iter().zip(&order) {
            let s = batch.sample(i);
            let nrm = linalg::norm(s);
            raw.set_column(j, &DVector::from_iterator(m, s.iter().map(|v| v / nrm)));
            reinitialized.push(j);
        }
    } else {
        dead.sort_unstable();
        for &j in &dead {
            raw.set_column(j, &current.atoms().column(j));
        }
    }
    Ok(DictionaryUpdate { dictionary: Dictionary::new(raw)?, dead_atoms: dead, reinitialized, scales })
}

/// `Θ_A = Y Z_Aᵀ (Z_A Z_Aᵀ)⁻¹`, via Cholesky with a ridge fallback.
fn least_squares_atoms(y: &DMatrix<f64>, za: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = za * za.transpose();
    let rhs = za * y.transpose();
    let chol = gram.clone().cholesky().or_else(|| {
        let a = gram.nrows();
        (gram + DMatrix::identity(a, a) * RIDGE).cholesky()
    });
    match chol {
        Some(c) => Ok(c.solve(&rhs).transpose()),
        None => Err(Error::DegenerateFit("code Gram matrix is not positive definite even with ridge".into())),
    }
}

/// Learn `n_atoms` unit-norm atoms from `batch`.
pub fn learn(batch: &ObservationBatch, n_atoms: usize, config: &DictLearnConfig, seed: u64) -> Result<(Dictionary, DictLearnTrace)> {
    learn_with(batch, n_atoms, config, seed, &mut |_, _| {})
}

/// [`learn`] calling `observer(round, dictionary)` after every round (1-based).
pub fn learn_with(
    batch: &ObservationBatch,
    n_atoms: usize,
    config: &DictLearnConfig,
    seed: u64,
    observer: &mut dyn FnMut(usize, &Dictionary),
) -> Result<(Dictionary, DictLearnTrace)> {
    config.validate()?;
    if n_atoms == 0 {
        return Err(Error::invalid("n_atoms must be at least 1"));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if !linalg::all_finite(batch.samples().as_slice()) {
        return Err(Error::invalid("batch contains non-finite values"));
    }
    let total = batch.len();
    let mut dict = initial_dictionary(batch, n_atoms, seed)?;
    let mut codes = DMatrix::zeros(n_atoms, total);
    let lambda = config.solver.lambda;
    let mut trace = DictLearnTrace::default();

    for round in 0..config.outer_rounds {
        let idx: Vec<usize> = match config.batch_size {
            Some(b) if b < total => {
                let mut perm: Vec<usize> = (0..total).collect();
                perm.shuffle(&mut derived_rng(seed, "dictlearn-batch", &[round as u64]));
                let mut pick = perm[..b].to_vec();
                pick.sort_unstable();
                pick
            }
            _ => (0..total).collect(),
        };
        let sub = batch.select(&idx)?;
        let warm = codes.select_columns(&idx);
        let mut z_sub = infer(&dict, &sub, &warm, config)?;
        let before = mean_objective(&dict, &sub, &z_sub, lambda);

        let mut rules = vec![config.update_rule];
        if config.update_rule != UpdateRule::ProjectedGradient {
            rules.push(UpdateRule::ProjectedGradient);
        }
        let mut accepted = None;
        for rule in rules {
            let cc = candidate(&sub, &z_sub, rule, config, &dict)?;
            if let Some(c) = cc {
                if c.objective.0 <= before.0 {
                    accepted = Some(c);
                    break;
                }
            }
        }
        let change = accepted.as_ref().map_or(0.0, |c| max_angle(&dict, &c.dictionary));
        let (loss, reconstruction) = accepted.as_ref().map_or(before, |c| c.objective);
        let dead_atoms = accepted.as_ref().map_or(0, |c| c.dead_atoms);
        let update_accepted = accepted.is_some();
        if let Some(c) = accepted {
            dict = c.dictionary;
            // keep codes outside this round's batch consistent with the rescaled atoms
            for (j, s) in c.scales.iter().enumerate() {
                codes.row_mut(j).scale_mut(*s);
            }
            z_sub = c.codes;
        }
        for (t, &i) in idx.iter().enumerate() {
            codes.set_column(i, &z_sub.column(t));
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: round, detail: format!("dictionary-learning loss is {loss}") });
        }
        let mean_sparsity =
            (0..idx.len()).map(|t| active_support(col(&z_sub, t)).len() as f64).sum::<f64>() / idx.len() as f64;
        trace.rounds.push(RoundStats {
            round: round + 1,
            loss,
            reconstruction,
            mean_sparsity,
            dictionary_change: change,
            dead_atoms,
            update_accepted,
        });
        observer(round + 1, &dict);
    }
    Ok((dict, trace))
}

/// Sparse codes for every sample of `batch`, warm-started from `warm`
/// (`N × D`). A sample keeps its warm start when the solver ends higher.
fn infer(dict: &Dictionary, batch: &ObservationBatch, warm: &DMatrix<f64>, config: &DictLearnConfig) -> Result<DMatrix<f64>> {
    let lip = (config.solver.step_rule == StepRule::FixedInverseLipschitz).then(|| lipschitz_constant(dict));
    let lambda = config.solver.lambda;
    let inferred = par::map_range(batch.len(), |t| -> Result<DVector<f64>> {
        let y = batch.sample_vector(t);
        let start = warm.column(t).into_owned();
        let sol = match config.inference {
            InferenceMethod::Ista => ista_prepared(dict, &y, &config.solver, Some(&start), lip)?,
            InferenceMethod::Fista => fista_prepared(dict, &y, &config.solver, Some(&start), lip)?,
        };
        let keep = objective_unchecked(dict, &y, &start, lambda) < objective_unchecked(dict, &y, &sol.code, lambda);
        Ok(if keep { start } else { sol.code })
    });
    let mut z = DMatrix::zeros(dict.n(), batch.len());
    for (t, code) in inferred.into_iter().enumerate() {
        z.set_column(t, &code?);
    }
    Ok(z)
}

struct Candidate {
    dictionary: Dictionary,
    codes: DMatrix<f64>,
    /// Row scales that map the stored codes onto the new atoms (1 when unscaled).
    scales: Vec<f64>,
    objective: (f64, f64),
    dead_atoms: usize,
}

/// Apply `rule`, then re-infer codes under the new atoms, warm-started from
/// whichever of the rescaled codes (same reconstruction) or the unchanged
/// codes (same penalty) scores lower.
fn candidate(
    batch: &ObservationBatch,
    codes: &DMatrix<f64>,
    rule: UpdateRule,
    config: &DictLearnConfig,
    current: &Dictionary,
) -> Result<Option<Candidate>> {
    let lambda = config.solver.lambda;
    let up = match update_dictionary(batch, codes, rule, config.dead_atom_policy, current) {
        Ok(up) => up,
        Err(Error::DegenerateFit(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut scaled = codes.clone();
    for (j, s) in up.scales.iter().enumerate() {
        scaled.row_mut(j).scale_mut(*s);
    }
    let with_scaled = mean_objective(&up.dictionary, batch, &scaled, lambda);
    let with_plain = mean_objective(&up.dictionary, batch, codes, lambda);
    let (warm, scales) = if with_scaled.0 <= with_plain.0 {
        (scaled, up.scales.clone())
    } else {
        (codes.clone(), up.scales.iter().map(|&s| if s > 0.0 { 1.0 } else { 0.0 }).collect())
    };
    let z = infer(&up.dictionary, batch, &warm, config)?;
    let objective = mean_objective(&up.dictionary, batch, &z, lambda);
    Ok(Some(Candidate { dictionary: up.dictionary, codes: z, scales, objective, dead_atoms: up.dead_atoms.len() }))
}

/// Atoms from distinct random nonzero samples, topped up with gaussian
/// directions when the batch has too few.
fn initial_dictionary(batch: &ObservationBatch, n_atoms: usize, seed: u64) -> Result<Dictionary> {
    let mut rng = derived_rng(seed, "dictlearn-init", &[]);
    let mut candidates: Vec<usize> = (0..batch.len()).filter(|&i| linalg::norm(batch.sample(i)) > 0.0).collect();
    candidates.shuffle(&mut rng);
    let m = batch.dim();
    let mut atoms = DMatrix::zeros(m, n_atoms);
    for j in 0..n_atoms {
        match candidates.get(j) {
            Some(&i) => atoms.set_column(j, &DVector::from_column_slice(batch.sample(i))),
            None => {
                for v in col_mut(&mut atoms, j) {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
        }
    }
    Dictionary::from_unnormalized(atoms)
}

/// Mean penalized objective and mean squared residual.
fn mean_objective(dict: &Dictionary, batch: &ObservationBatch, codes: &DMatrix<f64>, lambda: f64) -> (f64, f64) {
    let resid = batch.samples() - dict.atoms() * codes;
    let d = batch.len() as f64;
    let mut penalized = 0.0;
    let mut recon = 0.0;
    for i in 0..batch.len() {
        let r = col(&resid, i);
        let rr = linalg::dot(r, r);
        recon += rr;
        penalized += rr + lambda * col(codes, i).iter().map(|v| v.abs()).sum::<f64>();
    }
    (penalized / d, recon / d)
}

fn max_angle(old: &Dictionary, new: &Dictionary) -> f64 {
    (0..old.n()).map(|j| linalg::dot(old.atom(j), new.atom(j)).clamp(-1.0, 1.0).acos()).fold(0.0, f64::max)
}
