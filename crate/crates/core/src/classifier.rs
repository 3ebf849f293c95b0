//! Feed-forward classifier head on frozen features: sigmoid hidden layers,
//! one sigmoid score unit, binary cross-entropy, per-sample SGD.

use std::cmp::Ordering;

use sha2::{Digest, Sha256};

use crate::autoencoder::{glorot_scale, TrainConfig, CLASS_ADULT, CLASS_MINOR};
use crate::error::{Error, Result};
use crate::linalg::{dot, rand_matrix, sigmoid_scalar, Matrix, Rng};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One fully connected layer, `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape {
                op: "DenseLayer::new",
                left: weights.shape(),
                right: (bias.len(), 1),
            });
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("DenseLayer::new"));
        }
        Ok(Self { weights, bias })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Hidden sizes `[floor(m/4), floor(m/8)]`, each at least 1.
pub fn default_hidden_dims(m: usize) -> Vec<usize> {
    vec![(m / 4).max(1), (m / 8).max(1)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    layers: Vec<DenseLayer>,
    threshold: f64,
}

impl ClassifierModel {
    /// The last layer must have a single output unit.
    pub fn new(layers: Vec<DenseLayer>, threshold: f64) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::param("classifier needs at least one layer"));
        };
        if last.output_dim() != 1 {
            return Err(Error::Shape {
                op: "classifier output",
                left: last.weights.shape(),
                right: (1, last.input_dim()),
            });
        }
        for pair in layers.windows(2) {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::Shape {
                    op: "classifier layer chain",
                    left: pair[0].weights.shape(),
                    right: pair[1].weights.shape(),
                });
            }
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::param(format!("threshold must be in (0, 1), got {threshold}")));
        }
        Ok(Self { layers, threshold })
    }

    /// All weights and biases zero; every score is 0.5.
    pub fn zeros(input_dim: usize, hidden_dims: &[usize]) -> Result<Self> {
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &h in hidden_dims.iter().chain(std::iter::once(&1)) {
            layers.push(DenseLayer::new(Matrix::zeros(h, fan_in), vec![0.0; h])?);
            fan_in = h;
        }
        Self::new(layers, DEFAULT_THRESHOLD)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::param(format!("threshold must be in (0, 1), got {threshold}")));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Hidden layer widths, excluding the score unit.
    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.output_dim())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    /// Flattened parameters: per layer, weights row-major then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Same architecture with parameters taken from `params`, in the order
    /// of [`ClassifierModel::parameters`].
    pub fn with_parameters(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.parameter_count() {
            return Err(Error::Consistency(format!(
                "{} parameters given, model has {}",
                params.len(),
                self.parameter_count()
            )));
        }
        let mut rest = params;
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (r, c) = l.weights.shape();
            let (w, tail) = rest.split_at(r * c);
            let (b, tail) = tail.split_at(r);
            layers.push(DenseLayer::new(Matrix::new(r, c, w.to_vec())?, b.to_vec())?);
            rest = tail;
        }
        Self::new(layers, self.threshold)
    }

    fn check_input(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "classifier input",
                left: features.shape(),
                right: self.layers[0].weights.shape(),
            });
        }
        Ok(())
    }

    /// Output-unit logit for one sample; fills `acts` with every layer's
    /// activations (input first).
    fn forward(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) -> f64 {
        acts.resize_with(self.layers.len() + 1, Vec::new);
        acts[0].clear();
        acts[0].extend_from_slice(x);
        let mut logit = 0.0;
        for (k, layer) in self.layers.iter().enumerate() {
            let (prev, next) = acts.split_at_mut(k + 1);
            let input = &prev[k];
            let out = &mut next[0];
            out.clear();
            for (j, &b) in layer.bias.iter().enumerate() {
                let z = dot(layer.weights.row(j), input) + b;
                logit = z;
                out.push(sigmoid_scalar(z));
            }
        }
        logit
    }

    pub fn logits(&self, features: &Matrix) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let mut acts = Vec::new();
        Ok(features.iter_rows().map(|x| self.forward(x, &mut acts)).collect())
    }

    /// Per-row score in `(0, 1)`; higher means adult.
    pub fn predict_score(&self, features: &Matrix) -> Result<Vec<f64>> {
        Ok(self.logits(features)?.into_iter().map(sigmoid_scalar).collect())
    }

    /// Adult (1) iff score ≥ threshold.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<u8>> {
        Ok(self
            .predict_score(features)?
            .into_iter()
            .map(|s| self.decide(s))
            .collect())
    }

    pub fn decide(&self, score: f64) -> u8 {
        if score >= self.threshold {
            CLASS_ADULT
        } else {
            CLASS_MINOR
        }
    }
}

pub fn predict_score(model: &ClassifierModel, features: &Matrix) -> Result<Vec<f64>> {
    model.predict_score(features)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a logit against a 0/1 label.
fn bce(logit: f64, label: u8) -> f64 {
    softplus(logit) - f64::from(label) * logit
}

fn check_labels(features: &Matrix, labels: &[u8]) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if let Some(row) = labels.iter().position(|&y| y > CLASS_ADULT) {
        return Err(Error::Validation {
            row,
            msg: format!("label {} is not 0 or 1", labels[row]),
        });
    }
    Ok(())
}

/// Summed binary cross-entropy over the batch.
pub fn classifier_loss(model: &ClassifierModel, features: &Matrix, labels: &[u8]) -> Result<f64> {
    check_labels(features, labels)?;
    let logits = model.logits(features)?;
    Ok(logits.iter().zip(labels).map(|(&z, &y)| bce(z, y)).sum())
}

struct Backprop {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Backprop {
    fn new() -> Self {
        Self {
            acts: Vec::new(),
            deltas: Vec::new(),
        }
    }

    /// Fills `deltas[k]` with `dL/dz` of layer `k` and returns the loss.
    fn run(&mut self, model: &ClassifierModel, x: &[f64], y: u8) -> f64 {
        let logit = model.forward(x, &mut self.acts);
        let n = model.layers.len();
        self.deltas.resize_with(n, Vec::new);
        self.deltas[n - 1].clear();
        self.deltas[n - 1].push(sigmoid_scalar(logit) - f64::from(y));
        for k in (0..n - 1).rev() {
            let (head, tail) = self.deltas.split_at_mut(k + 1);
            let upper = &tail[0];
            let d = &mut head[k];
            let a = &self.acts[k + 1];
            d.clear();
            d.resize(a.len(), 0.0);
            for (j, &du) in upper.iter().enumerate() {
                for (di, wi) in d.iter_mut().zip(model.layers[k + 1].weights.row(j)) {
                    *di += du * wi;
                }
            }
            for (di, ai) in d.iter_mut().zip(a) {
                *di *= ai * (1.0 - ai);
            }
        }
        bce(logit, y)
    }
}

/// Gradient of [`classifier_loss`], flattened like
/// [`ClassifierModel::parameters`].
pub fn classifier_gradients(model: &ClassifierModel, features: &Matrix, labels: &[u8]) -> Result<Vec<f64>> {
    check_labels(features, labels)?;
    model.check_input(features)?;
    let mut grad = vec![0.0; model.parameter_count()];
    let mut bp = Backprop::new();
    for (x, &y) in features.iter_rows().zip(labels) {
        bp.run(model, x, y);
        let mut offset = 0;
        for (k, layer) in model.layers.iter().enumerate() {
            let fan_in = layer.input_dim();
            for (j, &d) in bp.deltas[k].iter().enumerate() {
                let row = &mut grad[offset + j * fan_in..offset + (j + 1) * fan_in];
                for (g, a) in row.iter_mut().zip(&bp.acts[k]) {
                    *g += d * a;
                }
            }
            offset += layer.weights.as_slice().len();
            for (g, &d) in grad[offset..offset + layer.output_dim()].iter_mut().zip(&bp.deltas[k]) {
                *g += d;
            }
            offset += layer.output_dim();
        }
    }
    Ok(grad)
}

fn row_digest(row: &[f64], label: u8) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([label]);
    for v in row {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

/// Visiting order that depends only on the multiset of (row, label) pairs:
/// sorted by content digest, ties broken by the row bits themselves.
fn canonical_order(features: &Matrix, labels: &[u8]) -> Vec<usize> {
    let digests: Vec<[u8; 32]> = features
        .iter_rows()
        .zip(labels)
        .map(|(r, &y)| row_digest(r, y))
        .collect();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        digests[a].cmp(&digests[b]).then_with(|| {
            labels[a].cmp(&labels[b]).then_with(|| {
                features
                    .row(a)
                    .iter()
                    .zip(features.row(b))
                    .map(|(x, y)| x.to_bits().cmp(&y.to_bits()))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
        })
    });
    order
}

/// Trains with the default `[floor(m/4), floor(m/8)]` hidden layers.
pub fn train_classifier(features: &Matrix, labels: &[u8], cfg: &TrainConfig) -> Result<ClassifierModel> {
    train_classifier_with_dims(features, labels, &default_hidden_dims(features.cols()), cfg)
}

/// Per-sample SGD on binary cross-entropy. `cfg.lambda` is unused.
pub fn train_classifier_with_dims(
    features: &Matrix,
    labels: &[u8],
    hidden_dims: &[usize],
    cfg: &TrainConfig,
) -> Result<ClassifierModel> {
    cfg.validate()?;
    check_labels(features, labels)?;
    if features.cols() == 0 {
        return Err(Error::EmptyInput("classifier features"));
    }
    if !labels.contains(&CLASS_MINOR) || !labels.contains(&CLASS_ADULT) {
        return Err(Error::DegenerateLabels("classifier training"));
    }
    if hidden_dims.contains(&0) {
        return Err(Error::param("classifier hidden sizes must be at least 1"));
    }

    let mut rng = Rng::new(cfg.seed);
    let mut layers = Vec::with_capacity(hidden_dims.len() + 1);
    let mut fan_in = features.cols();
    for &h in hidden_dims.iter().chain(std::iter::once(&1)) {
        let scale = cfg.init_scale.unwrap_or_else(|| glorot_scale(fan_in, h));
        layers.push(DenseLayer::new(rand_matrix(&mut rng, h, fan_in, scale)?, vec![0.0; h])?);
        fan_in = h;
    }
    let mut model = ClassifierModel::new(layers, DEFAULT_THRESHOLD)?;

    let mut order = canonical_order(features, labels);
    let lr = cfg.learning_rate;
    let mut bp = Backprop::new();
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            rng.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        for &i in &order {
            epoch_loss += bp.run(&model, features.row(i), labels[i]);
            for (k, layer) in model.layers.iter_mut().enumerate() {
                for (j, &d) in bp.deltas[k].iter().enumerate() {
                    for (w, a) in layer.weights.row_mut(j).iter_mut().zip(&bp.acts[k]) {
                        *w -= lr * (d * a);
                    }
                    layer.bias[j] -= lr * d;
                }
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: epoch_loss,
            });
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::linalg::Rng;

    fn cfg(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: lr,
            seed,
            ..TrainConfig::default()
        }
    }

    fn toy_separable(n: usize, seed: u64) -> (Matrix, Vec<u8>) {
        let mut rng = Rng::new(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        while rows.len() < n {
            let (a, b) = (rng.uniform(), rng.uniform());
            // keep a margin around the line a + b = 1
            if (a + b - 1.0).abs() < 0.1 {
                continue;
            }
            rows.push(vec![a, b]);
            labels.push((a + b > 1.0) as u8);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    fn finite_difference(model: &ClassifierModel, x: &Matrix, y: &[u8], h: f64) -> Vec<f64> {
        let p = model.parameters();
        (0..p.len())
            .map(|i| {
                let mut plus = p.clone();
                plus[i] += h;
                let mut minus = p.clone();
                minus[i] -= h;
                let lp = classifier_loss(&model.with_parameters(&plus).unwrap(), x, y).unwrap();
                let lm = classifier_loss(&model.with_parameters(&minus).unwrap(), x, y).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn default_dims_floor_with_minimum() {
        assert_eq!(default_hidden_dims(784), vec![196, 98]);
        assert_eq!(default_hidden_dims(64), vec![16, 8]);
        assert_eq!(default_hidden_dims(10), vec![2, 1]);
        assert_eq!(default_hidden_dims(2), vec![1, 1]);
    }

    #[test]
    fn zero_model_scores_half() {
        let m = ClassifierModel::zeros(5, &[3, 2]).unwrap();
        let x = Matrix::filled(4, 5, 0.3);
        assert_eq!(m.predict_score(&x).unwrap(), vec![0.5; 4]);
        assert_eq!(m.predict(&x).unwrap(), vec![1; 4]);
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let (x, y) = toy_separable(200, 1);
        let model = train_classifier(&x, &y, &cfg(100, 0.5, 3)).unwrap();
        let pred = model.predict(&x).unwrap();
        let correct = pred.iter().zip(&y).filter(|(p, t)| p == t).count();
        assert!(correct as f64 / y.len() as f64 >= 0.99, "{correct}/200");
    }

    #[test]
    fn constant_features_score_near_half() {
        let x = Matrix::filled(100, 8, 0.4);
        let y: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let model = train_classifier(&x, &y, &cfg(100, 0.01, 5)).unwrap();
        for s in model.predict_score(&x).unwrap() {
            assert!((s - 0.5).abs() <= 0.05, "{s}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = toy_separable(50, 2);
        let c = cfg(5, 0.1, 9);
        assert_eq!(train_classifier(&x, &y, &c).unwrap(), train_classifier(&x, &y, &c).unwrap());
    }

    #[test]
    fn row_permutation_does_not_change_training() {
        let (x, y) = toy_separable(40, 4);
        let perm: Vec<usize> = (0..40).rev().collect();
        let xp = x.select_rows(&perm);
        let yp: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
        for shuffle in [false, true] {
            let c = TrainConfig {
                shuffle,
                ..cfg(5, 0.1, 6)
            };
            assert_eq!(train_classifier(&x, &y, &c).unwrap(), train_classifier(&xp, &yp, &c).unwrap());
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Matrix::filled(3, 2, 0.1);
        assert!(matches!(
            train_classifier(&x, &[1, 1, 1], &cfg(1, 0.1, 0)),
            Err(Error::DegenerateLabels(_))
        ));
        assert!(matches!(
            train_classifier(&x, &[1, 0], &cfg(1, 0.1, 0)),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn shape_errors() {
        let m = ClassifierModel::zeros(5, &[2]).unwrap();
        assert!(matches!(m.predict_score(&Matrix::zeros(1, 4)), Err(Error::Shape { .. })));
        assert!(ClassifierModel::new(vec![], 0.5).is_err());
        assert!(m.clone().with_threshold(1.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(11);
        let x = rand_matrix(&mut rng, 6, 8, 1.0).unwrap().map(|v| v.abs());
        let y = vec![0, 1, 1, 0, 1, 0];
        let model = train_classifier_with_dims(&x, &y, &[4, 2], &cfg(1, 0.1, 1)).unwrap();
        let analytic = classifier_gradients(&model, &x, &y).unwrap();
        let numeric = finite_difference(&model, &x, &y, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-3) < 1e-5, "{a} vs {n}");
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn parameters_round_trip() {
        let (x, y) = toy_separable(20, 8);
        let m = train_classifier_with_dims(&x, &y, &[3], &cfg(2, 0.1, 1)).unwrap();
        assert_eq!(m.with_parameters(&m.parameters()).unwrap(), m);
        assert!(m.with_parameters(&[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn score_in_unit_interval_and_threshold_decides(
            params in proptest::collection::vec(-3.0f64..3.0, 19),
            x in proptest::collection::vec(0.0f64..1.0, 4),
        ) {
            let model = ClassifierModel::zeros(4, &[3]).unwrap().with_parameters(&params).unwrap();
            let xs = Matrix::new(1, 4, x).unwrap();
            let s = model.predict_score(&xs).unwrap()[0];
            prop_assert!(s > 0.0 && s < 1.0);
            let at = model.clone().with_threshold(s).unwrap();
            prop_assert_eq!(at.predict(&xs).unwrap()[0], CLASS_ADULT);
            if s < 1.0 - 1e-9 {
                let above = model.with_threshold(s + 1e-9).unwrap();
                prop_assert_eq!(above.predict(&xs).unwrap()[0], CLASS_MINOR);
            }
        }

        #[test]
        fn batch_scores_equal_single_rows(rows in 1usize..6, seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let x = rand_matrix(&mut rng, rows, 5, 1.0).unwrap();
            let params: Vec<f64> = (0..22).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let model = ClassifierModel::zeros(5, &[3]).unwrap().with_parameters(&params).unwrap();
            let batch = model.predict_score(&x).unwrap();
            for (r, &score) in batch.iter().enumerate() {
                let single = model.predict_score(&x.select_rows(&[r])).unwrap();
                prop_assert_eq!(single[0], score);
            }
        }
    }
}
