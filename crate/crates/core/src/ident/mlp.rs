// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small tanh MLP encoder `f: R^D → R^d` with a bias-free linear softmax head.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    /// No nonlinearity; the encoder is then affine.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Tanh => u.tanh(),
            Activation::Identity => u,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn slope_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer `u = A x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Encoder layers followed by the classifier head `W` (classes × d, no bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    /// The activation follows every layer except the last.
    pub layers: Vec<Affine>,
    pub activation: Activation,
    pub head: DMatrix<f64>,
}

/// Per-layer activations of a batch (samples as columns). `acts[0]` is the input.
struct Forward {
    acts: Vec<DMatrix<f64>>,
    logits: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<Affine>,
    pub head: DMatrix<f64>,
}

impl MlpClassifier {
    /// LeCun-normal weights, zero biases.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        rep_dim: usize,
        n_classes: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || rep_dim == 0 || n_classes == 0 || hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut rng = seed::derived_rng(seed, "mlp-init", &[]);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(rep_dim);
        let mut lecun = |rows: usize, cols: usize| {
            let nd = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).expect("valid normal");
            DMatrix::from_fn(rows, cols, |_, _| nd.sample(&mut rng))
        };
        let layers = dims
            .windows(2)
            .map(|w| Affine { weight: lecun(w[1], w[0]), bias: DVector::zeros(w[1]) })
            .collect();
        let head = lecun(n_classes, rep_dim);
        Ok(Self { layers, activation, head })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    /// Representation dimension `d`.
    pub fn rep_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.head.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
            && self.head.iter().all(|v| v.is_finite())
    }

    fn forward(&self, x: &DMatrix<f64>) -> Forward {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut u = &layer.weight * acts.last().expect("nonempty");
            for mut col in u.column_iter_mut() {
                col += &layer.bias;
            }
            if i < last {
                u.apply(|v| *v = self.activation.apply(*v));
            }
            acts.push(u);
        }
        let logits = &self.head * acts.last().expect("nonempty");
        Forward { acts, logits }
    }

    /// Encoder output `f(x)` for a batch with samples as columns.
    pub fn encode_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(self.forward(x).acts.pop().expect("nonempty"))
    }

    pub fn encode(&self, x: &[f64]) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.encode_batch(&m)?.column(0).into_owned())
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(self.forward(x).logits)
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.input_dim() {
            return Err(Error::invalid(format!("input dim {} vs model {}", x.nrows(), self.input_dim())));
        }
        Ok(())
    }

    fn check_labels(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<()> {
        self.check_input(x)?;
        if labels.len() != x.ncols() || x.ncols() == 0 {
            return Err(Error::invalid("need one label per sample and at least one sample"));
        }
        if labels.iter().any(|&c| c >= self.n_classes()) {
            return Err(Error::invalid("label out of range"));
        }
        Ok(())
    }

    /// Mean softmax cross-entropy.
    pub fn loss(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
        self.check_labels(x, labels)?;
        let logits = self.forward(x).logits;
        Ok(mean_cross_entropy(&logits, labels))
    }

    pub fn accuracy(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
        self.check_labels(x, labels)?;
        let logits = self.forward(x).logits;
        let correct = labels.iter().enumerate().filter(|&(j, &c)| argmax(logits.column(j).as_slice()) == c).count();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn gradients(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, MlpGradients)> {
        self.check_labels(x, labels)?;
        let Forward { acts, logits } = self.forward(x);
        let b = labels.len() as f64;
        let loss = mean_cross_entropy(&logits, labels);
        let mut delta = softmax_columns(&logits);
        for (j, &c) in labels.iter().enumerate() {
            delta[(c, j)] -= 1.0;
        }
        delta /= b;
        let rep = acts.last().expect("nonempty");
        let head = &delta * rep.transpose();
        let mut d_act = self.head.tr_mul(&delta);
        let mut grads = vec![None; self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                let out = &acts[i + 1];
                d_act.zip_apply(out, |g, h| *g *= self.activation.slope_from_output(h));
            }
            let input = &acts[i];
            let weight = &d_act * input.transpose();
            let bias = DVector::from_iterator(d_act.nrows(), d_act.row_iter().map(|r| r.sum()));
            let next = self.layers[i].weight.tr_mul(&d_act);
            grads[i] = Some(Affine { weight, bias });
            d_act = next;
        }
        let layers = grads.into_iter().map(|g| g.expect("filled")).collect();
        Ok((loss, MlpGradients { layers, head }))
    }

    /// `θ ← θ − lr·∇θ`.
    pub fn step(&mut self, g: &MlpGradients, lr: f64) {
        for (l, gl) in self.layers.iter_mut().zip(&g.layers) {
            l.weight -= &gl.weight * lr;
            l.bias -= &gl.bias * lr;
        }
        self.head -= &g.head * lr;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_columns(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut col in p.column_iter_mut() {
        let mx = col.max();
        col.apply(|v| *v = (*v - mx).exp());
        let s = col.sum();
        col /= s;
    }
    p
}

fn mean_cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (j, &c) in labels.iter().enumerate() {
        let col = logits.column(j);
        let mx = col.max();
        let lse = mx + col.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - col[c];
    }
    total / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn tiny(activation: Activation) -> (MlpClassifier, DMatrix<f64>, Vec<usize>) {
        let mut model = MlpClassifier::init(3, &[5, 4], 2, 3, activation, 11).unwrap();
        // nonzero biases so their gradients are exercised
        let mut rng = seed::rng(5);
        for l in &mut model.layers {
            l.bias.apply(|b| *b = rng.random_range(-0.5..0.5));
        }
        let x = DMatrix::from_fn(3, 6, |_, _| rng.random_range(-1.5..1.5));
        (model, x, vec![0, 2, 1, 1, 0, 2])
    }

    fn max_rel_error(model: &MlpClassifier, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
        let (_, g) = model.gradients(x, labels).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut check = |analytic: f64, perturb: &dyn Fn(&mut MlpClassifier, f64)| {
            let mut p = model.clone();
            perturb(&mut p, h);
            let up = p.loss(x, labels).unwrap();
            let mut p = model.clone();
            perturb(&mut p, -h);
            let down = p.loss(x, labels).unwrap();
            let fd = (up - down) / (2.0 * h);
            let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        };
        for li in 0..model.layers.len() {
            let (r, c) = model.layers[li].weight.shape();
            for i in 0..r {
                for j in 0..c {
                    check(g.layers[li].weight[(i, j)], &|m, d| m.layers[li].weight[(i, j)] += d);
                }
                check(g.layers[li].bias[i], &|m, d| m.layers[li].bias[i] += d);
            }
        }
        let (r, c) = model.head.shape();
        for i in 0..r {
            for j in 0..c {
                check(g.head[(i, j)], &|m, d| m.head[(i, j)] += d);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Identity] {
            let (model, x, labels) = tiny(act);
            let err = max_rel_error(&model, &x, &labels);
            assert!(err < 1e-4, "{act:?}: {err}");
        }
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let (mut model, x, labels) = tiny(Activation::Tanh);
        model.head.fill(0.0);
        assert!((model.loss(&x, &labels).unwrap() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_encoder_is_affine() {
        let (model, _, _) = tiny(Activation::Identity);
        let a = [0.3, -1.0, 2.0];
        let b = [1.0, 0.5, -0.25];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        let zero = model.encode(&[0.0; 3]).unwrap();
        let lhs = model.encode(&sum).unwrap() - &zero;
        let rhs = (model.encode(&a).unwrap() - &zero) + (model.encode(&b).unwrap() - &zero);
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn init_shapes_and_errors() {
        let m = MlpClassifier::init(4, &[64, 64], 4, 10, Activation::Tanh, 0).unwrap();
        assert_eq!((m.input_dim(), m.rep_dim(), m.n_classes(), m.layers.len()), (4, 4, 10, 3));
        assert!(m.is_finite());
        assert!(MlpClassifier::init(4, &[0], 4, 10, Activation::Tanh, 0).is_err());
        assert!(m.loss(&DMatrix::zeros(4, 1), &[10]).is_err());
        assert!(m.loss(&DMatrix::zeros(3, 1), &[0]).is_err());
    }

    #[test]
    fn a_gradient_step_lowers_the_loss() {
        let (mut model, x, labels) = tiny(Activation::Tanh);
        let (before, g) = model.gradients(&x, &labels).unwrap();
        model.step(&g, 1e-2);
        assert!(model.loss(&x, &labels).unwrap() < before);
    }
}
