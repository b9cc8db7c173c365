// SPDX-License-Identifier: MIT OR Apache-2.0

//! Desk-scale identifiability check: train a classifier encoder `f` on
//! `x = g(z)` with `z` drawn from clusters on the unit sphere, then measure how
//! close `h = f∘g` is to an affine map, against the same encoder before
//! training.

mod additivity;
pub mod mlp;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use additivity::{
    additivity_test, analogy_test, binomial_upper_tail, homogeneity_test, sample_pairs, sign_test, AdditivityReport,
    Analogy, AnalogyReport, MapFn, PairPolicy, SignTest,
};
pub use mlp::{Activation, MlpClassifier};

use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::linalg::{self, exact_sum};
use crate::par;
use crate::seed;
use crate::synthdgp::{Generator, GeneratorKind, GeneratorSpec};

/// Ridge added to the normal equations when the affine design is rank deficient.
pub const RIDGE: f64 = 1e-8;

/// Classes are gaussian-then-normalized clusters on `S^{d−1}`, pushed through `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterDgpSpec {
    pub n_classes: usize,
    pub latent_dim: usize,
    /// Within-cluster noise has standard deviation `1/√concentration` before normalizing.
    pub concentration: f64,
    pub generator: GeneratorKind,
    /// Dimension of `x`; `None` means `latent_dim`.
    pub observed_dim: Option<usize>,
    pub seed: u64,
}

impl Default for ClusterDgpSpec {
    fn default() -> Self {
        Self {
            n_classes: 32,
            latent_dim: 4,
            concentration: 5.0,
            generator: GeneratorKind::TwoLayerInvertible,
            observed_dim: None,
            seed: 0,
        }
    }
}

/// Latents (`d × n`), labels and observations (`D × n`); samples are columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSample {
    pub latents: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub observations: DMatrix<f64>,
}

fn gauss(rng: &mut seed::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_gaussian(d: usize, rng: &mut seed::Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| gauss(rng));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

impl ClusterDgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be positive"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::invalid("concentration must be positive and finite"));
        }
        Ok(())
    }

    pub fn observed_dim(&self) -> usize {
        self.observed_dim.unwrap_or(self.latent_dim)
    }

    /// Unit-norm cluster centers, one column per class.
    pub fn centers(&self) -> DMatrix<f64> {
        let mut rng = seed::derived_rng(self.seed, "cluster-centers", &[]);
        let cols: Vec<_> = (0..self.n_classes).map(|_| unit_gaussian(self.latent_dim, &mut rng)).collect();
        DMatrix::from_columns(&cols)
    }

    pub fn generator(&self) -> Result<Generator> {
        GeneratorSpec::new(
            self.generator,
            self.latent_dim,
            self.observed_dim(),
            seed::derive_seed(self.seed, "cluster-generator", &[]),
        )
        .build()
    }

    /// `n` labelled samples from the stream `stream_seed`.
    pub fn sample(&self, n: usize, stream_seed: u64) -> Result<ClusterSample> {
        self.validate()?;
        let g = self.generator()?;
        self.sample_with(&g, n, stream_seed)
    }

    fn sample_with(&self, g: &Generator, n: usize, stream_seed: u64) -> Result<ClusterSample> {
        let centers = self.centers();
        let sd = 1.0 / self.concentration.sqrt();
        let mut rng = seed::rng(stream_seed);
        let mut labels = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0..self.n_classes);
            loop {
                let noise = DVector::from_fn(self.latent_dim, |_, _| sd * gauss(&mut rng));
                let v = centers.column(c) + noise;
                let norm = v.norm();
                if norm > 0.0 {
                    zs.push(v / norm);
                    break;
                }
            }
            labels.push(c);
        }
        let latents = if n == 0 { DMatrix::zeros(self.latent_dim, 0) } else { DMatrix::from_columns(&zs) };
        let xs = par::map_slice(&zs, |z| g.apply(z.as_slice())).into_iter().collect::<Result<Vec<_>>>()?;
        let observations = if n == 0 { DMatrix::zeros(g.output_dim(), 0) } else { DMatrix::from_columns(&xs) };
        Ok(ClusterSample { latents, labels, observations })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_train: usize,
    /// Seeds model initialization, the training set and the epoch shuffles.
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            learning_rate: 0.02,
            epochs: 50,
            batch_size: 64,
            n_train: 8000,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.n_train == 0 {
            return Err(Error::invalid("batch_size and n_train must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    /// The model `train_classifier` starts from.
    pub fn init_model(&self, spec: &ClusterDgpSpec) -> Result<MlpClassifier> {
        MlpClassifier::init(
            spec.observed_dim(),
            &self.hidden,
            spec.latent_dim,
            spec.n_classes,
            self.activation,
            seed::derive_seed(self.seed, "ident-model", &[]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrace {
    pub initial_loss: f64,
    /// Sample-weighted mean of the minibatch losses seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Minibatch gradient descent on softmax cross-entropy.
pub fn train_classifier(spec: &ClusterDgpSpec, cfg: &ClassifierConfig) -> Result<(MlpClassifier, ClassifierTrace)> {
    spec.validate()?;
    cfg.validate()?;
    let data = spec.sample(cfg.n_train, seed::derive_seed(cfg.seed, "ident-train", &[]))?;
    let mut model = cfg.init_model(spec)?;
    let initial_loss = model.loss(&data.observations, &data.labels)?;
    let mut order: Vec<usize> = (0..cfg.n_train).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::derived_rng(cfg.seed, "ident-epoch", &[epoch as u64]));
        let mut weighted = Vec::with_capacity(order.len().div_ceil(cfg.batch_size));
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.observations.select_columns(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, grads) = model.gradients(&x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, detail: format!("non-finite loss {loss}") });
            }
            weighted.push(loss * chunk.len() as f64);
            if cfg.learning_rate > 0.0 {
                model.step(&grads, cfg.learning_rate);
            }
        }
        if !model.is_finite() {
            return Err(Error::Divergence { epoch, detail: "non-finite parameters".into() });
        }
        epoch_losses.push(exact_sum(weighted) / cfg.n_train as f64);
    }
    let train_accuracy = model.accuracy(&data.observations, &data.labels)?;
    Ok((model, ClassifierTrace { initial_loss, epoch_losses, train_accuracy }))
}

/// Affine least-squares fit `y ≈ A z + b` and its coefficient of determination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    /// Mean of `per_output` over non-constant output coordinates.
    pub r_squared: f64,
    /// `NaN` for constant coordinates.
    pub per_output: Vec<f64>,
    /// The ridge fallback was used.
    pub ridge_fallback: bool,
}

/// Fit `y = A z + b` with samples as columns of `z` (`d × n`) and `y` (`p × n`).
pub fn affine_fit(z: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<AffineFit> {
    let (d, n) = z.shape();
    if y.ncols() != n || n == 0 {
        return Err(Error::invalid("affine fit needs matching nonempty sample counts"));
    }
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j < d { z[(j, i)] } else { 1.0 });
    let targets = y.transpose();
    let mut ridge_fallback = false;
    let mut coefs = Vec::with_capacity(targets.ncols());
    for col in targets.column_iter() {
        let t = col.into_owned();
        match linalg::lstsq_qr(&design, &t) {
            Some(c) => coefs.push(c),
            None => {
                ridge_fallback = true;
                let mut gram = design.tr_mul(&design);
                for i in 0..=d {
                    gram[(i, i)] += RIDGE;
                }
                let rhs = design.tr_mul(&t);
                let c = gram
                    .cholesky()
                    .map(|ch| ch.solve(&rhs))
                    .ok_or_else(|| Error::DegenerateFit("ridge system not positive definite".into()))?;
                coefs.push(c);
            }
        }
    }
    let per_output: Vec<f64> = coefs
        .iter()
        .zip(targets.column_iter())
        .map(|(c, t)| {
            let fitted = &design * c;
            let mean = exact_sum(t.iter().copied()) / n as f64;
            let ss_tot = exact_sum(t.iter().map(|v| (v - mean) * (v - mean)));
            let ss_res = exact_sum(t.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)));
            if ss_tot == 0.0 {
                f64::NAN
            } else {
                1.0 - ss_res / ss_tot
            }
        })
        .collect();
    let valid: Vec<f64> = per_output.iter().copied().filter(|v| !v.is_nan()).collect();
    if valid.is_empty() {
        return Err(Error::DegenerateFit("every output coordinate is constant".into()));
    }
    Ok(AffineFit { r_squared: exact_sum(valid.iter().copied()) / valid.len() as f64, per_output, ridge_fallback })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub r_squared: f64,
    pub baseline_r_squared: f64,
    pub per_output_r_squared: Vec<f64>,
    pub ridge_fallback: bool,
    /// Additivity cosines of `z ↦ h(z) − h(0)` on held-out pairs.
    pub additivity_mean: f64,
    pub additivity_min: f64,
    pub baseline_additivity_mean: f64,
}

/// Additivity of the centered map `z ↦ h(z) − h(0)`, so affine maps count as additive.
fn centered_additivity(
    model: &MlpClassifier,
    g: &Generator,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<AdditivityReport> {
    let origin = model.encode(g.apply(&vec![0.0; g.input_dim()])?.as_slice())?;
    let h = |z: &[f64]| -> Result<DVector<f64>> { Ok(model.encode(g.apply(z)?.as_slice())? - &origin) };
    additivity_test(&h, pairs, PairPolicy::SharedSupport)
}

/// R² of an affine fit of `h = f∘g` on `n_test` fresh samples, for `model`
/// and for the `untrained` baseline on the same samples.
pub fn linearity_score(
    model: &MlpClassifier,
    untrained: &MlpClassifier,
    spec: &ClusterDgpSpec,
    n_test: usize,
    seed: u64,
) -> Result<LinearityReport> {
    spec.validate()?;
    let g = spec.generator()?;
    for m in [model, untrained] {
        if m.input_dim() != g.output_dim() {
            return Err(Error::invalid(format!("model input {} vs observed dim {}", m.input_dim(), g.output_dim())));
        }
    }
    let test = spec.sample_with(&g, n_test, seed::derive_seed(seed, "ident-test", &[]))?;
    let fit = affine_fit(&test.latents, &model.encode_batch(&test.observations)?)?;
    let base = affine_fit(&test.latents, &untrained.encode_batch(&test.observations)?)?;
    let pairs_src = spec.sample_with(&g, 2 * (n_test / 2).max(1), seed::derive_seed(seed, "ident-pairs", &[]))?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs_src.latents.ncols() / 2)
        .map(|i| {
            (
                pairs_src.latents.column(2 * i).iter().copied().collect(),
                pairs_src.latents.column(2 * i + 1).iter().copied().collect(),
            )
        })
        .collect();
    let add = centered_additivity(model, &g, &pairs)?;
    let add_base = centered_additivity(untrained, &g, &pairs)?;
    Ok(LinearityReport {
        r_squared: fit.r_squared,
        baseline_r_squared: base.r_squared,
        per_output_r_squared: fit.per_output,
        ridge_fallback: fit.ridge_fallback || base.ridge_fallback,
        additivity_mean: add.mean,
        additivity_min: add.min,
        baseline_additivity_mean: add_base.mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentTrial {
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub train_accuracy: f64,
    pub report: LinearityReport,
}

impl IdentTrial {
    pub fn improved(&self) -> bool {
        self.report.r_squared > self.report.baseline_r_squared
    }
}

/// One trained model per seed; seed `s` replaces both `spec.seed` and `cfg.seed`.
pub fn run_identifiability(
    spec: &ClusterDgpSpec,
    cfg: &ClassifierConfig,
    seeds: &[u64],
    n_test: usize,
) -> Result<Vec<IdentTrial>> {
    par::map_slice(seeds, |&s| {
        let spec = ClusterDgpSpec { seed: s, ..spec.clone() };
        let cfg = ClassifierConfig { seed: s, ..cfg.clone() };
        let (model, trace) = train_classifier(&spec, &cfg)?;
        let untrained = cfg.init_model(&spec)?;
        let report = linearity_score(&model, &untrained, &spec, n_test, s)?;
        Ok(IdentTrial { seed: s, final_loss: trace.epoch_losses.last().copied(), train_accuracy: trace.train_accuracy, report })
    })
    .into_iter()
    .collect()
}

/// `seed,final_loss,train_accuracy,r_squared,baseline_r_squared,additivity_mean,baseline_additivity_mean`.
pub fn write_trials_csv<W: Write>(trials: &[IdentTrial], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "seed",
        "final_loss",
        "train_accuracy",
        "r_squared",
        "baseline_r_squared",
        "additivity_mean",
        "baseline_additivity_mean",
    ])?;
    for t in trials {
        wtr.write_record([
            t.seed.to_string(),
            t.final_loss.map(fmt_f64).unwrap_or_default(),
            fmt_f64(t.train_accuracy),
            fmt_f64(t.report.r_squared),
            fmt_f64(t.report.baseline_r_squared),
            fmt_f64(t.report.additivity_mean),
            fmt_f64(t.report.baseline_additivity_mean),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
