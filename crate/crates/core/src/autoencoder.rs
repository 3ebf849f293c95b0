//! Class specific mean autoencoder (CSMA) and its unsupervised baselines.
//!
//! A layer maps a sample `x` to `f = σ(W_e x)` and reconstructs it linearly
//! as `W_d f`. There are no bias terms. CSMA adds `λ‖f − m_c‖²` to the
//! reconstruction error, where `m_c` is the mean feature of the sample's
//! class under the current encoder. Class means are recomputed at the start
//! of every epoch and held fixed while the epoch's per-sample updates run:
//! all minor samples first, then all adult samples.

use crate::error::{Error, Result};
use crate::linalg::{self, column_mean, dot, matmul_transposed, rand_matrix, sigmoid, Matrix, Rng};

pub const CLASS_MINOR: u8 = 0;
pub const CLASS_ADULT: u8 = 1;

/// Abort when an epoch's loss exceeds this multiple of the first epoch's.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Encoder (`hidden × input`) and decoder (`input × hidden`) of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    w_enc: Matrix,
    w_dec: Matrix,
}

impl LayerWeights {
    pub fn new(w_enc: Matrix, w_dec: Matrix) -> Result<Self> {
        if w_enc.rows() != w_dec.cols() || w_enc.cols() != w_dec.rows() {
            return Err(Error::Shape {
                op: "LayerWeights::new",
                left: w_enc.shape(),
                right: w_dec.shape(),
            });
        }
        Ok(Self { w_enc, w_dec })
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_enc: Matrix::zeros(hidden_dim, input_dim),
            w_dec: Matrix::zeros(input_dim, hidden_dim),
        }
    }

    /// Uniform initialization in `[-scale, scale]`; encoder drawn first.
    pub fn random(rng: &mut Rng, input_dim: usize, hidden_dim: usize, scale: f64) -> Result<Self> {
        let w_enc = rand_matrix(rng, hidden_dim, input_dim, scale)?;
        let w_dec = rand_matrix(rng, input_dim, hidden_dim, scale)?;
        Self::new(w_enc, w_dec)
    }

    pub fn input_dim(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_enc.rows()
    }

    pub fn w_enc(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn w_dec(&self) -> &Matrix {
        &self.w_dec
    }

    fn check_input(&self, x: &Matrix, op: &'static str) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op,
                left: x.shape(),
                right: self.w_enc.shape(),
            });
        }
        Ok(())
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_scale(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Mean feature of each class, `1 × hidden` each.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeans {
    pub minor: Matrix,
    pub adult: Matrix,
}

impl ClassMeans {
    pub fn compute(w: &LayerWeights, x_minor: &Matrix, x_adult: &Matrix) -> Result<Self> {
        if x_minor.rows() == 0 {
            return Err(Error::EmptyClass(CLASS_MINOR));
        }
        if x_adult.rows() == 0 {
            return Err(Error::EmptyClass(CLASS_ADULT));
        }
        Ok(Self {
            minor: class_mean(w, x_minor)?,
            adult: class_mean(w, x_adult)?,
        })
    }

    pub fn for_class(&self, class: u8) -> &Matrix {
        if class == CLASS_MINOR {
            &self.minor
        } else {
            &self.adult
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the class-mean penalty. Ignored by the plain and denoising
    /// baselines.
    pub lambda: f64,
    pub seed: u64,
    /// Uniform init bound; `None` uses [`glorot_scale`].
    pub init_scale: Option<f64>,
    /// Shuffle sample order inside each class block every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            lambda: 0.1,
            seed: 0,
            init_scale: None,
            shuffle: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        check_lambda(self.lambda)?;
        if let Some(s) = self.init_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::param(format!("init scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(())
}

/// `σ(x · W_eᵀ)`, one feature row per sample row.
pub fn encode(w: &LayerWeights, x: &Matrix) -> Result<Matrix> {
    w.check_input(x, "encode")?;
    Ok(sigmoid(&matmul_transposed(x, &w.w_enc)?))
}

/// Linear reconstruction `f · W_dᵀ`.
pub fn decode(w: &LayerWeights, f: &Matrix) -> Result<Matrix> {
    if f.cols() != w.hidden_dim() {
        return Err(Error::Shape {
            op: "decode",
            left: f.shape(),
            right: w.w_dec.shape(),
        });
    }
    matmul_transposed(f, &w.w_dec)
}

/// Mean encoded feature of the given samples.
pub fn class_mean(w: &LayerWeights, samples_of_class: &Matrix) -> Result<Matrix> {
    if samples_of_class.rows() == 0 {
        return Err(Error::EmptyInput("class_mean"));
    }
    column_mean(&encode(w, samples_of_class)?)
}

/// Squared reconstruction error summed over the batch.
pub fn ae_loss(w: &LayerWeights, x: &Matrix) -> Result<f64> {
    w.check_input(x, "ae_loss")?;
    let mut scratch = Scratch::new(w);
    Ok(x.iter_rows()
        .map(|row| forward_loss(w, row, row, None, &mut scratch))
        .sum())
}

/// Reconstruction error plus `λ‖f − m_c‖²`, summed over the batch.
pub fn csma_loss(w: &LayerWeights, x_c: &Matrix, mean_c: &Matrix, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    w.check_input(x_c, "csma_loss")?;
    check_mean(w, mean_c)?;
    let mut scratch = Scratch::new(w);
    Ok(x_c
        .iter_rows()
        .map(|row| forward_loss(w, row, row, Some((mean_c.as_slice(), lambda)), &mut scratch))
        .sum())
}

fn check_mean(w: &LayerWeights, mean_c: &Matrix) -> Result<()> {
    if mean_c.shape() != (1, w.hidden_dim()) {
        return Err(Error::Shape {
            op: "class mean",
            left: mean_c.shape(),
            right: (1, w.hidden_dim()),
        });
    }
    Ok(())
}

/// Gradients of a layer loss with respect to both weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_enc: Matrix,
    pub w_dec: Matrix,
}

/// Backpropagation gradients of [`ae_loss`].
pub fn ae_gradients(w: &LayerWeights, x: &Matrix) -> Result<Gradients> {
    w.check_input(x, "ae_gradients")?;
    accumulate_gradients(w, x, None)
}

/// Gradients of [`csma_loss`]. The class mean is a constant target here;
/// it is not differentiated through.
pub fn csma_gradients(w: &LayerWeights, x_c: &Matrix, mean_c: &Matrix, lambda: f64) -> Result<Gradients> {
    check_lambda(lambda)?;
    w.check_input(x_c, "csma_gradients")?;
    check_mean(w, mean_c)?;
    accumulate_gradients(w, x_c, Some((mean_c.as_slice(), lambda)))
}

fn accumulate_gradients(w: &LayerWeights, x: &Matrix, pull: Option<(&[f64], f64)>) -> Result<Gradients> {
    let mut grads = Gradients {
        w_enc: Matrix::zeros(w.hidden_dim(), w.input_dim()),
        w_dec: Matrix::zeros(w.input_dim(), w.hidden_dim()),
    };
    let mut s = Scratch::new(w);
    for row in x.iter_rows() {
        backprop_sample(w, row, row, pull, &mut s);
        for (i, &de) in s.d_recon.iter().enumerate() {
            add_outer_row(grads.w_dec.row_mut(i), de, &s.feature);
        }
        for (j, &dz) in s.d_pre.iter().enumerate() {
            add_outer_row(grads.w_enc.row_mut(j), dz, row);
        }
    }
    if grads.w_enc.as_slice().iter().chain(grads.w_dec.as_slice()).all(|v| v.is_finite()) {
        Ok(grads)
    } else {
        Err(Error::NonFinite("layer gradients"))
    }
}

/// Per-sample buffers reused across the training sweep.
pub(crate) struct Scratch {
    feature: Vec<f64>,
    d_recon: Vec<f64>,
    d_feature: Vec<f64>,
    d_pre: Vec<f64>,
    input: Vec<f64>,
}

impl Scratch {
    fn new(w: &LayerWeights) -> Self {
        let (n, h) = (w.input_dim(), w.hidden_dim());
        Self {
            feature: vec![0.0; h],
            d_recon: vec![0.0; n],
            d_feature: vec![0.0; h],
            d_pre: vec![0.0; h],
            input: vec![0.0; n],
        }
    }
}

/// Forward pass for one sample; leaves the feature and `dL/d(recon)` in
/// `s` and returns the loss.
#[inline]
fn forward_loss(
    w: &LayerWeights,
    input: &[f64],
    target: &[f64],
    pull: Option<(&[f64], f64)>,
    s: &mut Scratch,
) -> f64 {
    for (j, f) in s.feature.iter_mut().enumerate() {
        *f = linalg::sigmoid_scalar(dot(w.w_enc.row(j), input));
    }
    let mut recon_err = 0.0;
    for (i, de) in s.d_recon.iter_mut().enumerate() {
        let e = dot(w.w_dec.row(i), &s.feature) - target[i];
        recon_err += e * e;
        *de = 2.0 * e;
    }
    match pull {
        None => recon_err,
        Some((mean, lambda)) => {
            let penalty: f64 = s
                .feature
                .iter()
                .zip(mean)
                .map(|(f, m)| (f - m) * (f - m))
                .sum();
            recon_err + lambda * penalty
        }
    }
}

/// Forward and backward pass for one sample. On return `s.d_recon` holds
/// `dL/d(W_d f)` and `s.d_pre` holds `dL/d(W_e x)`.
#[inline]
fn backprop_sample(
    w: &LayerWeights,
    input: &[f64],
    target: &[f64],
    pull: Option<(&[f64], f64)>,
    s: &mut Scratch,
) -> f64 {
    let loss = forward_loss(w, input, target, pull, s);
    s.d_feature.iter_mut().for_each(|v| *v = 0.0);
    for (i, &de) in s.d_recon.iter().enumerate() {
        linalg::axpy(&mut s.d_feature, de, w.w_dec.row(i));
    }
    if let Some((mean, lambda)) = pull {
        for ((df, f), m) in s.d_feature.iter_mut().zip(&s.feature).zip(mean) {
            *df += 2.0 * lambda * (f - m);
        }
    }
    for ((dz, df), f) in s.d_pre.iter_mut().zip(&s.d_feature).zip(&s.feature) {
        *dz = df * f * (1.0 - f);
    }
    loss
}

#[inline]
fn add_outer_row(g: &mut [f64], a: f64, x: &[f64]) {
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi += a * xi;
    }
}

/// `w -= lr * (a * x)`, the same rounding as subtracting `lr` times an
/// accumulated single-sample gradient.
#[inline]
fn sgd_outer_row(w: &mut [f64], lr: f64, a: f64, x: &[f64]) {
    for (wi, xi) in w.iter_mut().zip(x) {
        *wi -= lr * (a * xi);
    }
}

/// One gradient-descent step on a single sample; returns the pre-update loss.
fn sgd_step(
    w: &mut LayerWeights,
    input: &[f64],
    target: &[f64],
    pull: Option<(&[f64], f64)>,
    lr: f64,
    s: &mut Scratch,
) -> f64 {
    let loss = backprop_sample(w, input, target, pull, s);
    for (i, &de) in s.d_recon.iter().enumerate() {
        sgd_outer_row(w.w_dec.row_mut(i), lr, de, &s.feature);
    }
    for (j, &dz) in s.d_pre.iter().enumerate() {
        sgd_outer_row(w.w_enc.row_mut(j), lr, dz, input);
    }
    loss
}

/// Hooks into the training loop, used for instrumentation and tests.
pub trait TrainObserver {
    fn epoch_start(&mut self, _epoch: usize, _means: Option<&ClassMeans>) {}
    fn sample_step(&mut self, _epoch: usize, _class: u8, _means: Option<&ClassMeans>) {}
    fn epoch_end(&mut self, _epoch: usize, _loss: f64) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Output of CSMA training for one layer.
#[derive(Debug, Clone)]
pub struct LayerFit {
    pub weights: LayerWeights,
    /// Class means of the returned weights.
    pub means: ClassMeans,
    pub epoch_losses: Vec<f64>,
}

/// Output of the unsupervised baselines.
#[derive(Debug, Clone)]
pub struct PlainFit {
    pub weights: LayerWeights,
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Objective {
    Plain,
    ClassMean { lambda: f64 },
    Denoising { corruption: f64 },
}

const MASK_STREAM: u64 = 1;

fn fit_layer(
    blocks: &[&Matrix],
    hidden_dim: usize,
    cfg: &TrainConfig,
    objective: Objective,
    observer: &mut dyn TrainObserver,
) -> Result<(LayerWeights, Vec<f64>)> {
    cfg.validate()?;
    if hidden_dim == 0 {
        return Err(Error::param("hidden dimension must be at least 1"));
    }
    let input_dim = blocks[0].cols();
    for b in blocks {
        if b.cols() != input_dim {
            return Err(Error::Shape {
                op: "training blocks",
                left: blocks[0].shape(),
                right: b.shape(),
            });
        }
    }
    if input_dim == 0 {
        return Err(Error::EmptyInput("training samples"));
    }

    let mut rng = Rng::new(cfg.seed);
    let mut mask_rng = rng.fork(MASK_STREAM);
    let scale = cfg.init_scale.unwrap_or_else(|| glorot_scale(input_dim, hidden_dim));
    let mut w = LayerWeights::random(&mut rng, input_dim, hidden_dim, scale)?;
    let mut scratch = Scratch::new(&w);
    let mut orders: Vec<Vec<usize>> = blocks.iter().map(|b| (0..b.rows()).collect()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let lr = cfg.learning_rate;

    for epoch in 0..cfg.epochs {
        let means = match objective {
            Objective::ClassMean { .. } => Some(ClassMeans::compute(&w, blocks[0], blocks[1])?),
            _ => None,
        };
        observer.epoch_start(epoch, means.as_ref());
        if cfg.shuffle {
            for order in orders.iter_mut() {
                rng.shuffle(order);
            }
        }

        let mut epoch_loss = 0.0;
        for (b, (block, order)) in blocks.iter().zip(&orders).enumerate() {
            let class = b as u8;
            let pull = match (objective, means.as_ref()) {
                (Objective::ClassMean { lambda }, Some(m)) => {
                    Some((m.for_class(class).as_slice(), lambda))
                }
                _ => None,
            };
            for &idx in order {
                observer.sample_step(epoch, class, means.as_ref());
                let x = block.row(idx);
                let loss = if let Objective::Denoising { corruption } = objective {
                    let mut input = std::mem::take(&mut scratch.input);
                    corrupt_into(&mut mask_rng, x, corruption, &mut input);
                    let l = sgd_step(&mut w, &input, x, None, lr, &mut scratch);
                    scratch.input = input;
                    l
                } else {
                    sgd_step(&mut w, x, x, pull, lr, &mut scratch)
                };
                epoch_loss += loss;
            }
        }

        observer.epoch_end(epoch, epoch_loss);
        let initial = losses.first().copied().unwrap_or(epoch_loss);
        if !epoch_loss.is_finite() || epoch_loss > DIVERGENCE_FACTOR * initial {
            return Err(Error::Divergence {
                epoch,
                loss: epoch_loss,
            });
        }
        losses.push(epoch_loss);
    }
    if w.w_enc.as_slice().iter().chain(w.w_dec.as_slice()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training"));
    }
    Ok((w, losses))
}

/// Train one CSMA layer (minor block first, then adult block each epoch).
pub fn train_single_layer(
    x_minor: &Matrix,
    x_adult: &Matrix,
    hidden_dim: usize,
    cfg: &TrainConfig,
) -> Result<LayerFit> {
    train_single_layer_observed(x_minor, x_adult, hidden_dim, cfg, &mut NoopObserver)
}

pub fn train_single_layer_observed(
    x_minor: &Matrix,
    x_adult: &Matrix,
    hidden_dim: usize,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<LayerFit> {
    if x_minor.rows() == 0 {
        return Err(Error::EmptyClass(CLASS_MINOR));
    }
    if x_adult.rows() == 0 {
        return Err(Error::EmptyClass(CLASS_ADULT));
    }
    let objective = Objective::ClassMean { lambda: cfg.lambda };
    let (weights, epoch_losses) = fit_layer(&[x_minor, x_adult], hidden_dim, cfg, objective, observer)?;
    let means = ClassMeans::compute(&weights, x_minor, x_adult)?;
    Ok(LayerFit {
        weights,
        means,
        epoch_losses,
    })
}

/// Plain autoencoder with the same per-sample sweep over `blocks` in order.
pub fn train_autoencoder(blocks: &[&Matrix], hidden_dim: usize, cfg: &TrainConfig) -> Result<PlainFit> {
    if blocks.is_empty() || blocks.iter().any(|b| b.rows() == 0) {
        return Err(Error::EmptyInput("train_autoencoder"));
    }
    let (weights, epoch_losses) = fit_layer(blocks, hidden_dim, cfg, Objective::Plain, &mut NoopObserver)?;
    Ok(PlainFit {
        weights,
        epoch_losses,
    })
}

/// Denoising autoencoder: each presentation zeroes every pixel with
/// probability `corruption_prob` and reconstructs the clean sample.
pub fn train_denoising_baseline(
    x_all: &Matrix,
    hidden_dim: usize,
    cfg: &TrainConfig,
    corruption_prob: f64,
) -> Result<PlainFit> {
    if !(0.0..1.0).contains(&corruption_prob) {
        return Err(Error::param(format!(
            "corruption probability must be in [0, 1), got {corruption_prob}"
        )));
    }
    if x_all.rows() == 0 {
        return Err(Error::EmptyInput("train_denoising_baseline"));
    }
    let objective = Objective::Denoising {
        corruption: corruption_prob,
    };
    let (weights, epoch_losses) = fit_layer(&[x_all], hidden_dim, cfg, objective, &mut NoopObserver)?;
    Ok(PlainFit {
        weights,
        epoch_losses,
    })
}

fn corrupt_into(rng: &mut Rng, x: &[f64], prob: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(x.iter().map(|&v| if rng.uniform() < prob { 0.0 } else { v }));
}

/// Masking noise: a copy of `x` with each entry zeroed with probability `prob`.
pub fn corrupt(rng: &mut Rng, x: &[f64], prob: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    corrupt_into(rng, x, prob, &mut out);
    out
}

/// Greedily trained stack of CSMA encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct CsmaModel {
    layers: Vec<LayerWeights>,
    lambdas: Vec<f64>,
    class_means: Vec<ClassMeans>,
    training_log: Vec<Vec<f64>>,
}

impl CsmaModel {
    /// Wraps already-trained layers. Checks that the dimensions chain.
    pub fn new(layers: Vec<LayerWeights>, lambdas: Vec<f64>) -> Result<Self> {
        if layers.len() != lambdas.len() {
            return Err(Error::Consistency(format!(
                "{} layers but {} lambdas",
                layers.len(),
                lambdas.len()
            )));
        }
        for pair in layers.windows(2) {
            if pair[1].input_dim() != pair[0].hidden_dim() {
                return Err(Error::Shape {
                    op: "CsmaModel layer chain",
                    left: pair[0].w_enc().shape(),
                    right: pair[1].w_enc().shape(),
                });
            }
        }
        for &l in &lambdas {
            check_lambda(l)?;
        }
        Ok(Self {
            layers,
            lambdas,
            class_means: Vec::new(),
            training_log: Vec::new(),
        })
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Class means of each layer at the end of its training; empty for a
    /// model loaded from disk.
    pub fn class_means(&self) -> &[ClassMeans] {
        &self.class_means
    }

    /// Per-layer epoch losses; empty for a model loaded from disk.
    pub fn training_log(&self) -> &[Vec<f64>] {
        &self.training_log
    }

    /// Input dimension followed by every layer's hidden dimension.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.layers.first().map(|l| l.input_dim()).into_iter().collect();
        dims.extend(self.layers.iter().map(|l| l.hidden_dim()));
        dims
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.input_dim())
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.hidden_dim())
    }

    pub fn extract_features(&self, x: &Matrix) -> Result<Matrix> {
        extract_features(self, x)
    }
}

/// Encoder-only forward pass through every layer. An empty model returns
/// `x` unchanged.
pub fn extract_features(model: &CsmaModel, x: &Matrix) -> Result<Matrix> {
    let mut current = x.clone();
    for layer in &model.layers {
        current = encode(layer, &current)?;
    }
    Ok(current)
}

/// Greedy layer-wise CSMA: layer `i` trains on both classes encoded by
/// layers `0..i`. `cfgs[i]` configures layer `i`, including its λ.
pub fn train_stacked(
    x_minor: &Matrix,
    x_adult: &Matrix,
    hidden_dims: &[usize],
    cfgs: &[TrainConfig],
) -> Result<CsmaModel> {
    train_stacked_with(x_minor, x_adult, hidden_dims, cfgs, |minor, adult, hidden, cfg| {
        train_single_layer(minor, adult, hidden, cfg).map(|fit| (fit.weights, Some(fit.means), fit.epoch_losses))
    })
}

/// Greedy stack of plain autoencoders trained with the CSMA sweep order.
pub fn train_stacked_autoencoder(
    x_minor: &Matrix,
    x_adult: &Matrix,
    hidden_dims: &[usize],
    cfgs: &[TrainConfig],
) -> Result<CsmaModel> {
    let mut model = train_stacked_with(x_minor, x_adult, hidden_dims, cfgs, |minor, adult, hidden, cfg| {
        let fit = train_autoencoder(&[minor, adult], hidden, cfg)?;
        let means = ClassMeans::compute(&fit.weights, minor, adult)?;
        Ok((fit.weights, Some(means), fit.epoch_losses))
    })?;
    model.lambdas.iter_mut().for_each(|l| *l = 0.0);
    Ok(model)
}

/// Greedy stack of denoising autoencoders; labels only select the blocks
/// used for the reported class means.
pub fn train_stacked_denoising(
    x_minor: &Matrix,
    x_adult: &Matrix,
    hidden_dims: &[usize],
    cfgs: &[TrainConfig],
    corruption_prob: f64,
) -> Result<CsmaModel> {
    let mut model = train_stacked_with(x_minor, x_adult, hidden_dims, cfgs, |minor, adult, hidden, cfg| {
        let all = minor.vstack(adult)?;
        let fit = train_denoising_baseline(&all, hidden, cfg, corruption_prob)?;
        let means = ClassMeans::compute(&fit.weights, minor, adult)?;
        Ok((fit.weights, Some(means), fit.epoch_losses))
    })?;
    model.lambdas.iter_mut().for_each(|l| *l = 0.0);
    Ok(model)
}

type LayerOutput = (LayerWeights, Option<ClassMeans>, Vec<f64>);

fn train_stacked_with(
    x_minor: &Matrix,
    x_adult: &Matrix,
    hidden_dims: &[usize],
    cfgs: &[TrainConfig],
    mut train_layer: impl FnMut(&Matrix, &Matrix, usize, &TrainConfig) -> Result<LayerOutput>,
) -> Result<CsmaModel> {
    if hidden_dims.is_empty() {
        return Err(Error::param("at least one layer is required"));
    }
    if cfgs.len() != hidden_dims.len() {
        return Err(Error::Consistency(format!(
            "{} layer dims but {} layer configs",
            hidden_dims.len(),
            cfgs.len()
        )));
    }
    let mut layers = Vec::with_capacity(hidden_dims.len());
    let mut means = Vec::with_capacity(hidden_dims.len());
    let mut log = Vec::with_capacity(hidden_dims.len());
    let mut minor = x_minor.clone();
    let mut adult = x_adult.clone();
    for (i, (&hidden, cfg)) in hidden_dims.iter().zip(cfgs).enumerate() {
        let (w, m, losses) = train_layer(&minor, &adult, hidden, cfg)?;
        if i + 1 < hidden_dims.len() {
            minor = encode(&w, &minor)?;
            adult = encode(&w, &adult)?;
        }
        layers.push(w);
        means.extend(m);
        log.push(losses);
    }
    let lambdas = cfgs.iter().map(|c| c.lambda).collect();
    let mut model = CsmaModel::new(layers, lambdas)?;
    model.class_means = means;
    model.training_log = log;
    Ok(model)
}
