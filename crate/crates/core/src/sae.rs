// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sparse autoencoder: amortized codes `ξ(y) = ReLU(Wy + β)` decoded by a
//! unit-norm dictionary `Θ`, trained by plain SGD on
//! `mean_i ‖y_i − Θξ(y_i)‖² + λ‖ξ(y_i)‖₁`.
//!
//! The derivatives of ReLU and of `|·|` at 0 are taken as 0. Gradients are
//! accumulated over fixed chunks of 64 samples and the chunk sums are added
//! in order, so results do not depend on the number of threads.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::linalg::{self, col};
use crate::par;
use crate::seed::derived_rng;
use crate::solvers::{ista_prepared, lipschitz_constant, objective_unchecked, SolverConfig};
use crate::splb::{self, Section, TAG_DECD, TAG_ENCB, TAG_ENCW};
use crate::synthdgp::{Dictionary, ObservationBatch};

/// Samples per gradient accumulation chunk.
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaeArchitecture {
    #[default]
    Vanilla,
    /// Not implemented.
    Gated,
    /// Not implemented.
    JumpRelu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    /// `W`, `N × M`.
    pub enc_weight: DMatrix<f64>,
    /// `β`, length `N`.
    pub enc_bias: DVector<f64>,
    /// `Θ`, `M × N`.
    pub dec_dict: Dictionary,
}

impl SaeParams {
    pub fn new(enc_weight: DMatrix<f64>, enc_bias: DVector<f64>, dec_dict: Dictionary) -> Result<Self> {
        let (n, m) = enc_weight.shape();
        if enc_bias.len() != n || dec_dict.m() != m || dec_dict.n() != n {
            return Err(Error::invalid(format!(
                "inconsistent SAE shapes: W {n}×{m}, β {}, Θ {}×{}",
                enc_bias.len(),
                dec_dict.m(),
                dec_dict.n()
            )));
        }
        Ok(Self { enc_weight, enc_bias, dec_dict })
    }

    /// Gaussian unit-norm decoder, encoder `W = Θᵀ`, zero bias.
    pub fn init(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::invalid("SAE dimensions must be positive"));
        }
        let mut rng = derived_rng(seed, "sae-init", &[]);
        let atoms = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
        let dec_dict = Dictionary::from_unnormalized(atoms)?;
        Ok(Self { enc_weight: dec_dict.atoms().transpose(), enc_bias: DVector::zeros(n), dec_dict })
    }

    /// Input dimension `M`.
    pub fn m(&self) -> usize {
        self.enc_weight.ncols()
    }

    /// Number of units `N`.
    pub fn n(&self) -> usize {
        self.enc_weight.nrows()
    }

    fn check_batch(&self, batch: &ObservationBatch) -> Result<()> {
        if batch.dim() != self.m() {
            return Err(Error::invalid(format!("observation dim {} != SAE input dim {}", batch.dim(), self.m())));
        }
        Ok(())
    }

    pub fn to_splb(&self) -> Result<Vec<u8>> {
        splb::to_bytes(&[
            Section::from_matrix(TAG_ENCW, &self.enc_weight),
            Section::from_matrix(TAG_ENCB, &DMatrix::from_column_slice(self.n(), 1, self.enc_bias.as_slice())),
            Section::from_matrix(TAG_DECD, self.dec_dict.atoms()),
        ])
    }

    pub fn from_splb(bytes: &[u8]) -> Result<Self> {
        let secs = splb::read(bytes)?;
        let w = splb::find(&secs, &TAG_ENCW)?.to_matrix();
        let b = splb::find(&secs, &TAG_ENCB)?.to_matrix();
        if b.ncols() != 1 {
            return Err(Error::Format("ENCB must have one column".into()));
        }
        let d = Dictionary::new(splb::find(&secs, &TAG_DECD)?.to_matrix())?;
        Self::new(w, DVector::from_column_slice(b.as_slice()), d)
    }
}

/// `max(0, Wy + β)`.
pub fn encode(params: &SaeParams, y: &[f64]) -> Result<DVector<f64>> {
    if y.len() != params.m() {
        return Err(Error::invalid(format!("input length {} != {}", y.len(), params.m())));
    }
    let a = &params.enc_weight * DVector::from_column_slice(y) + &params.enc_bias;
    Ok(a.map(|v| v.max(0.0)))
}

/// Codes for a whole batch, `N × D`.
pub fn encode_batch(params: &SaeParams, batch: &ObservationBatch) -> Result<DMatrix<f64>> {
    params.check_batch(batch)?;
    let mut a = &params.enc_weight * batch.samples();
    for mut c in a.column_iter_mut() {
        c += &params.enc_bias;
    }
    Ok(a.map(|v| v.max(0.0)))
}

/// Per-chunk sum of the per-sample objective, in chunk order.
fn chunk_losses(params: &SaeParams, y: &DMatrix<f64>, lambda: f64) -> f64 {
    let d = y.ncols();
    let sums = par::map_range(d.div_ceil(CHUNK), |c| {
        let start = c * CHUNK;
        let yc = y.columns(start, CHUNK.min(d - start));
        let mut a = &params.enc_weight * yc;
        for mut col in a.column_iter_mut() {
            col += &params.enc_bias;
        }
        let codes = a.map(|v| v.max(0.0));
        let r = params.dec_dict.atoms() * &codes - yc;
        (0..codes.ncols())
            .map(|i| r.column(i).norm_squared() + lambda * codes.column(i).iter().sum::<f64>())
            .sum::<f64>()
    });
    sums.into_iter().sum()
}

/// Mean amortized objective over the batch.
pub fn sae_loss(params: &SaeParams, batch: &ObservationBatch, lambda: f64) -> Result<f64> {
    params.check_batch(batch)?;
    Ok(chunk_losses(params, batch.samples(), lambda) / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeGradients {
    pub enc_weight: DMatrix<f64>,
    pub enc_bias: DVector<f64>,
    /// Gradient with respect to the decoder matrix, before any projection.
    pub dec: DMatrix<f64>,
}

fn gradients_of(params: &SaeParams, y: &DMatrix<f64>, lambda: f64) -> SaeGradients {
    let (n, m) = (params.n(), params.m());
    let d = y.ncols();
    let theta = params.dec_dict.atoms();
    let parts = par::map_range(d.div_ceil(CHUNK), |c| {
        let start = c * CHUNK;
        let yc = y.columns(start, CHUNK.min(d - start));
        let mut a = &params.enc_weight * yc;
        for mut col in a.column_iter_mut() {
            col += &params.enc_bias;
        }
        let codes = a.map(|v| v.max(0.0));
        let r = theta * &codes - yc;
        // ∂/∂code = 2Θᵀr + λ, masked by the ReLU derivative
        let mut g = theta.tr_mul(&r) * 2.0;
        g.add_scalar_mut(lambda);
        g.zip_apply(&a, |gv, av| {
            if av <= 0.0 {
                *gv = 0.0;
            }
        });
        let gw = &g * yc.transpose();
        let gb = g.column_sum();
        let gd = r * codes.transpose() * 2.0;
        (gw, gb, gd)
    });
    let mut out = SaeGradients { enc_weight: DMatrix::zeros(n, m), enc_bias: DVector::zeros(n), dec: DMatrix::zeros(m, n) };
    for (gw, gb, gd) in parts {
        out.enc_weight += gw;
        out.enc_bias += gb;
        out.dec += gd;
    }
    let inv = 1.0 / d as f64;
    out.enc_weight *= inv;
    out.enc_bias *= inv;
    out.dec *= inv;
    out
}

/// Analytic gradients of [`sae_loss`] with respect to `W`, `β` and `Θ`.
pub fn gradients(params: &SaeParams, batch: &ObservationBatch, lambda: f64) -> Result<SaeGradients> {
    params.check_batch(batch)?;
    Ok(gradients_of(params, batch.samples(), lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeTrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Keep `W = Θᵀ` throughout training.
    pub tie_weights: bool,
    pub seed: u64,
    pub architecture: SaeArchitecture,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            learning_rate: 1e-2,
            epochs: 50,
            batch_size: 64,
            tie_weights: false,
            seed: 0,
            architecture: SaeArchitecture::Vanilla,
        }
    }
}

impl SaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and nonnegative"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.architecture != SaeArchitecture::Vanilla {
            return Err(Error::Unsupported(format!("{:?} SAE architecture", self.architecture)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SaeTrace {
    /// Full-batch loss before training.
    pub initial_loss: f64,
    /// Full-batch loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl SaeTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["epoch", "loss"])?;
        wtr.write_record(["0".to_string(), fmt_f64(self.initial_loss)])?;
        for (e, l) in self.epoch_losses.iter().enumerate() {
            wtr.write_record([(e + 1).to_string(), fmt_f64(*l)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Train a fresh SAE with `n_atoms` units, initialized by [`SaeParams::init`].
pub fn train_sae(batch: &ObservationBatch, n_atoms: usize, config: &SaeTrainConfig) -> Result<(SaeParams, SaeTrace)> {
    config.validate()?;
    let params = SaeParams::init(batch.dim(), n_atoms, config.seed)?;
    train_sae_from(params, batch, config)
}

/// Continue training `params`. Epoch `e` visits the samples in a shuffled
/// order drawn from `(seed, "sae-epoch", e)`.
pub fn train_sae_from(mut params: SaeParams, batch: &ObservationBatch, config: &SaeTrainConfig) -> Result<(SaeParams, SaeTrace)> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    params.check_batch(batch)?;
    if config.tie_weights {
        params.enc_weight = params.dec_dict.atoms().transpose();
    }
    let lr = config.learning_rate;
    let mut trace = SaeTrace { initial_loss: sae_loss(&params, batch, config.lambda)?, epoch_losses: Vec::new() };
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for epoch in 1..=config.epochs {
        if lr == 0.0 {
            // a zero step is skipped so renormalization cannot move the bits
            trace.epoch_losses.push(trace.initial_loss);
            continue;
        }
        order.sort_unstable();
        order.shuffle(&mut derived_rng(config.seed, "sae-epoch", &[epoch as u64]));
        for idx in order.chunks(config.batch_size) {
            let cols: Vec<_> = idx.iter().map(|&i| batch.samples().column(i)).collect();
            let y = DMatrix::from_columns(&cols);
            let g = gradients_of(&params, &y, config.lambda);
            let mut theta = params.dec_dict.atoms().clone();
            if config.tie_weights {
                theta -= (g.dec + g.enc_weight.transpose()) * lr;
            } else {
                theta -= g.dec * lr;
                params.enc_weight -= g.enc_weight * lr;
            }
            params.enc_bias -= g.enc_bias * lr;
            let theta = project_columns(theta, params.dec_dict.atoms());
            if !linalg::all_finite(theta.as_slice()) || !linalg::all_finite(params.enc_weight.as_slice()) {
                return Err(Error::Divergence { epoch, detail: "parameters became non-finite".into() });
            }
            params.dec_dict = Dictionary::new(theta)?;
            if config.tie_weights {
                params.enc_weight = params.dec_dict.atoms().transpose();
            }
        }
        let loss = sae_loss(&params, batch, config.lambda)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("loss is {loss}") });
        }
        trace.epoch_losses.push(loss);
    }
    Ok((params, trace))
}

/// Unit-normalize each column; a column that collapsed to zero keeps its previous value.
fn project_columns(mut theta: DMatrix<f64>, previous: &DMatrix<f64>) -> DMatrix<f64> {
    let norms = linalg::normalize_columns(&mut theta);
    for (j, nrm) in norms.into_iter().enumerate() {
        if nrm == 0.0 || !nrm.is_finite() {
            theta.set_column(j, &previous.column(j));
        }
    }
    theta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmortizationGap {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// Objective excess of the SAE's code over iterative inference on the same
/// dictionary and `λ`. The reference code is the better of ISTA started
/// from zero and ISTA started from the SAE code; since ISTA never increases
/// the objective, each gap is nonnegative up to rounding.
pub fn amortization_gap(
    params: &SaeParams,
    dict: &Dictionary,
    batch: &ObservationBatch,
    lambda: f64,
    solver: &SolverConfig,
) -> Result<AmortizationGap> {
    params.check_batch(batch)?;
    if dict.m() != params.m() || dict.n() != params.n() {
        return Err(Error::invalid("reference dictionary shape differs from the SAE"));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let cfg = SolverConfig { lambda, ..*solver };
    cfg.validate()?;
    let lip = Some(lipschitz_constant(dict));
    let codes = encode_batch(params, batch)?;
    let gaps = par::map_range(batch.len(), |i| -> Result<f64> {
        let y = batch.sample_vector(i);
        let amortized = DVector::from_column_slice(col(&codes, i));
        let f_sae = objective_unchecked(dict, &y, &amortized, lambda);
        let cold = ista_prepared(dict, &y, &cfg, None, lip)?;
        let warm = ista_prepared(dict, &y, &cfg, Some(&amortized), lip)?;
        let f_opt = objective_unchecked(dict, &y, &cold.code, lambda).min(objective_unchecked(dict, &y, &warm.code, lambda));
        Ok(f_sae - f_opt)
    });
    let per_sample = gaps.into_iter().collect::<Result<Vec<f64>>>()?;
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(AmortizationGap { per_sample, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::match_dictionaries;
    use crate::seed;
    use crate::synthdgp::{observe, sample_codes, ValueDist};

    fn gauss(r: &mut seed::Rng) -> f64 {
        StandardNormal.sample(r)
    }

    fn batch_of(cols: &[&[f64]]) -> ObservationBatch {
        let m = cols[0].len();
        ObservationBatch::new(DMatrix::from_fn(m, cols.len(), |i, j| cols[j][i])).unwrap()
    }

    fn random_params(m: usize, n: usize, s: u64) -> SaeParams {
        let mut r = seed::rng(s);
        let mut p = SaeParams::init(m, n, s).unwrap();
        p.enc_weight = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut r));
        p.enc_bias = DVector::from_fn(n, |_, _| 0.3 * gauss(&mut r).abs() - 0.1);
        p
    }

    #[test]
    fn encode_examples() {
        let zero = SaeParams::new(DMatrix::zeros(2, 2), DVector::zeros(2), Dictionary::identity(2)).unwrap();
        assert_eq!(encode(&zero, &[4.0, -1.0]).unwrap().as_slice(), &[0.0, 0.0]);
        let id = SaeParams::new(DMatrix::identity(2, 2), DVector::zeros(2), Dictionary::identity(2)).unwrap();
        assert_eq!(encode(&id, &[2.0, -3.0]).unwrap().as_slice(), &[2.0, 0.0]);
        let shifted =
            SaeParams::new(DMatrix::identity(2, 2), DVector::from_element(2, -1.0), Dictionary::identity(2)).unwrap();
        assert_eq!(encode(&shifted, &[2.0, 0.5]).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(encode(&id, &[1.0]).is_err());
    }

    #[test]
    fn loss_examples() {
        let b = batch_of(&[&[1.0, 2.0], &[0.0, -3.0]]);
        let zero = SaeParams::new(DMatrix::zeros(2, 2), DVector::zeros(2), Dictionary::identity(2)).unwrap();
        assert_eq!(sae_loss(&zero, &b, 0.7).unwrap(), (5.0 + 9.0) / 2.0);
        let pos = batch_of(&[&[1.0, 2.0], &[0.5, 3.0]]);
        let id = SaeParams::new(DMatrix::identity(2, 2), DVector::zeros(2), Dictionary::identity(2)).unwrap();
        assert_eq!(sae_loss(&id, &pos, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn loss_matches_hand_computation() {
        // M = 2, N = 3; decoder atoms e1, e2, (e1 + e2)/√2
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let dict = Dictionary::new(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, s, 0.0, 1.0, s])).unwrap();
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let p = SaeParams::new(w, DVector::from_column_slice(&[0.0, -0.5, 0.0]), dict).unwrap();
        let b = batch_of(&[&[1.0, 1.0]]);
        // codes: relu(1) = 1, relu(0.5) = 0.5, relu(1) = 1
        // Θc = (1 + s, 0.5 + s); residual (s, s − 0.5)
        let expected = s * s + (s - 0.5) * (s - 0.5) + 0.2 * 2.5;
        assert!((sae_loss(&p, &b, 0.2).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_batch_gradients() {
        let mut p = random_params(3, 4, 1);
        p.enc_bias = DVector::from_column_slice(&[0.5, -0.2, 0.0, 1.0]);
        let b = ObservationBatch::new(DMatrix::zeros(3, 5)).unwrap();
        let lambda = 0.3;
        let g = gradients(&p, &b, lambda).unwrap();
        assert!(g.enc_weight.iter().all(|v| *v == 0.0));
        // active units: 2ΘᵀΘ·relu(β) + λ; inactive units: 0
        let c = p.enc_bias.map(|v| v.max(0.0));
        let theta = p.dec_dict.atoms();
        let expect = (theta.tr_mul(&(theta * &c)) * 2.0).add_scalar(lambda);
        for j in 0..4 {
            let e = if p.enc_bias[j] > 0.0 { expect[j] } else { 0.0 };
            assert!((g.enc_bias[j] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_unit_has_zero_encoder_gradient() {
        let mut p = random_params(3, 4, 2);
        p.enc_weight.row_mut(1).fill(0.0);
        p.enc_bias[1] = -1.0;
        let mut r = seed::rng(3);
        let b = ObservationBatch::new(DMatrix::from_fn(3, 10, |_, _| StandardNormal.sample(&mut r))).unwrap();
        let g = gradients(&p, &b, 0.1).unwrap();
        assert!(g.enc_weight.row(1).iter().all(|v| *v == 0.0));
        assert_eq!(g.enc_bias[1], 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (m, n) = (3, 5);
        let h = 1e-5;
        let lambda = 0.2;
        for s in 0..5 {
            let p = random_params(m, n, 10 + s);
            let mut r = seed::rng(20 + s);
            let b = ObservationBatch::new(DMatrix::from_fn(m, 7, |_, _| StandardNormal.sample(&mut r))).unwrap();
            let g = gradients(&p, &b, lambda).unwrap();
            // the decoder is perturbed without re-normalization
            let loss_raw = |w: &DMatrix<f64>, beta: &DVector<f64>, theta: &DMatrix<f64>| -> f64 {
                let a = w * b.samples() + beta * DMatrix::from_element(1, b.len(), 1.0);
                let c = a.map(|v| v.max(0.0));
                let res = theta * &c - b.samples();
                (res.norm_squared() + lambda * c.sum()) / b.len() as f64
            };
            let mask = |w: &DMatrix<f64>, beta: &DVector<f64>| -> Vec<bool> {
                let a = w * b.samples() + beta * DMatrix::from_element(1, b.len(), 1.0);
                a.iter().map(|v| *v > 0.0).collect()
            };
            let base_mask = mask(&p.enc_weight, &p.enc_bias);
            let theta = p.dec_dict.atoms().clone();
            let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
            let mut worst = 0.0f64;
            for i in 0..n * m {
                let (mut wp, mut wm) = (p.enc_weight.clone(), p.enc_weight.clone());
                wp[i] += h;
                wm[i] -= h;
                // skip coordinates whose perturbation crosses a ReLU kink
                if mask(&wp, &p.enc_bias) != base_mask || mask(&wm, &p.enc_bias) != base_mask {
                    continue;
                }
                let fd = (loss_raw(&wp, &p.enc_bias, &theta) - loss_raw(&wm, &p.enc_bias, &theta)) / (2.0 * h);
                worst = worst.max(rel(g.enc_weight[i], fd));
            }
            for i in 0..n {
                let (mut bp, mut bm) = (p.enc_bias.clone(), p.enc_bias.clone());
                bp[i] += h;
                bm[i] -= h;
                if mask(&p.enc_weight, &bp) != base_mask || mask(&p.enc_weight, &bm) != base_mask {
                    continue;
                }
                let fd = (loss_raw(&p.enc_weight, &bp, &theta) - loss_raw(&p.enc_weight, &bm, &theta)) / (2.0 * h);
                worst = worst.max(rel(g.enc_bias[i], fd));
            }
            for i in 0..m * n {
                let (mut tp, mut tm) = (theta.clone(), theta.clone());
                tp[i] += h;
                tm[i] -= h;
                let fd = (loss_raw(&p.enc_weight, &p.enc_bias, &tp) - loss_raw(&p.enc_weight, &p.enc_bias, &tm)) / (2.0 * h);
                worst = worst.max(rel(g.dec[i], fd));
            }
            assert!(worst < 1e-4, "seed {s}: {worst}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let codes = sample_codes(6, 1, ValueDist::UnitGaussianMagnitude, 100, 4).unwrap();
        let b = observe(&Dictionary::identity(6), &codes, 0.0, 0).unwrap();
        let cfg = SaeTrainConfig { learning_rate: 0.0, epochs: 3, ..SaeTrainConfig::default() };
        let (p, trace) = train_sae(&b, 6, &cfg).unwrap();
        assert_eq!(p, SaeParams::init(6, 6, cfg.seed).unwrap());
        assert!(trace.epoch_losses.iter().all(|l| *l == trace.initial_loss));
    }

    #[test]
    fn training_is_deterministic_and_keeps_unit_atoms() {
        let codes = sample_codes(8, 2, ValueDist::UnitGaussianMagnitude, 300, 5).unwrap();
        let b = observe(&Dictionary::identity(8), &codes, 0.0, 0).unwrap();
        for tie_weights in [false, true] {
            let cfg = SaeTrainConfig { epochs: 5, tie_weights, seed: 6, ..SaeTrainConfig::default() };
            let (p1, t1) = train_sae(&b, 8, &cfg).unwrap();
            let (p2, t2) = train_sae(&b, 8, &cfg).unwrap();
            assert_eq!(p1, p2);
            assert_eq!(t1, t2);
            assert!(p1.dec_dict.max_norm_deviation() < 1e-9);
            assert!(t1.epoch_losses.last().unwrap() <= &t1.epoch_losses[0]);
        }
    }

    #[test]
    fn identity_dictionary_is_recovered() {
        let truth = Dictionary::identity(8);
        for seed in 0..5 {
            let codes = sample_codes(8, 1, ValueDist::UnitGaussianMagnitude, 2000, seed + 7).unwrap();
            let b = observe(&truth, &codes, 0.0, 0).unwrap();
            let cfg = SaeTrainConfig { seed, lambda: 0.3, learning_rate: 0.05, epochs: 300, ..SaeTrainConfig::default() };
            let (p, trace) = train_sae(&b, 8, &cfg).unwrap();
            let mcc = match_dictionaries(&truth, &p.dec_dict).unwrap().mcc;
            assert!(mcc >= 0.9, "seed {seed}: {mcc}");
            assert!(trace.epoch_losses.last().unwrap() <= &trace.epoch_losses[0]);
        }
    }

    #[test]
    fn divergence_names_the_epoch() {
        let mut r = seed::rng(9);
        let b = ObservationBatch::new(DMatrix::from_fn(4, 64, |_, _| 1e3 * gauss(&mut r))).unwrap();
        let cfg = SaeTrainConfig { learning_rate: 10.0, epochs: 20, ..SaeTrainConfig::default() };
        match train_sae(&b, 4, &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_architectures() {
        let b = ObservationBatch::new(DMatrix::from_element(2, 3, 1.0)).unwrap();
        let cfg = SaeTrainConfig { architecture: SaeArchitecture::Gated, ..SaeTrainConfig::default() };
        assert!(matches!(train_sae(&b, 2, &cfg), Err(Error::Unsupported(_))));
    }

    #[test]
    fn gap_examples() {
        let id = Dictionary::identity(2);
        let solver = SolverConfig { max_iters: 5000, tol: 1e-14, ..SolverConfig::default() };
        // encoder equal to soft thresholding for positive inputs: relu(y − λ/2)
        let lambda = 0.4;
        let exact = SaeParams::new(DMatrix::identity(2, 2), DVector::from_element(2, -lambda / 2.0), id.clone()).unwrap();
        let b = batch_of(&[&[1.0, 2.0], &[0.1, 3.0]]);
        let gap = amortization_gap(&exact, &id, &b, lambda, &solver).unwrap();
        assert!(gap.per_sample.iter().all(|g| g.abs() < 1e-12));
        let zero = SaeParams::new(DMatrix::zeros(2, 2), DVector::zeros(2), id.clone()).unwrap();
        let gap = amortization_gap(&zero, &id, &b, 0.01, &solver).unwrap();
        assert!(gap.mean > 0.0);
    }

    #[test]
    fn splb_round_trip() {
        let p = random_params(3, 5, 11);
        let bytes = p.to_splb().unwrap();
        let tags: Vec<String> = splb::read(&bytes[..]).unwrap().iter().map(|s| s.tag_str()).collect();
        assert_eq!(tags, ["ENCW", "ENCB", "DECD"]);
        assert_eq!(SaeParams::from_splb(&bytes).unwrap(), p);
    }
}
