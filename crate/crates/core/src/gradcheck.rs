//! Finite-difference self check of every analytic gradient in the crate.

use serde::Serialize;

use crate::autoencoder::{ae_gradients, ae_loss, class_mean, csma_gradients, csma_loss, LayerWeights};
use crate::classifier::{classifier_gradients, classifier_loss, default_hidden_dims, ClassifierModel};
use crate::error::{Error, Result};
use crate::linalg::{rand_matrix, Matrix, Rng};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
pub const MAX_DIM: usize = 16;
const BATCH: usize = 4;

/// `|a − n| / max(|a|, |n|, 1e-3)`. The floor keeps components that are
/// zero up to rounding from reporting a huge relative error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Central differences `(f(p + h e_i) − f(p − h e_i)) / 2h` for every `i`.
pub fn central_differences(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let plus = f(&p)?;
        p[i] = orig - h;
        let minus = f(&p)?;
        p[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckCase {
    pub name: String,
    pub parameters: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub cases: Vec<CheckCase>,
}

impl CheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() <= self.tolerance
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let verdict = if c.max_relative_error <= self.tolerance { "ok" } else { "FAIL" };
            out.push_str(&format!(
                "{:<16} params={:<4} max_rel_err={:.3e} {verdict}\n",
                c.name, c.parameters, c.max_relative_error
            ));
        }
        out.push_str(&format!(
            "max_rel_err={:.3e} tolerance={:.0e} result={}\n",
            self.max_relative_error(),
            self.tolerance,
            if self.passed() { "pass" } else { "fail" }
        ));
        out
    }
}

fn layer_params(w: &LayerWeights) -> Vec<f64> {
    w.w_enc().as_slice().iter().chain(w.w_dec().as_slice()).copied().collect()
}

fn layer_from(template: &LayerWeights, p: &[f64]) -> Result<LayerWeights> {
    let (h, n) = template.w_enc().shape();
    LayerWeights::new(
        Matrix::new(h, n, p[..h * n].to_vec())?,
        Matrix::new(n, h, p[h * n..].to_vec())?,
    )
}

fn max_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Compares analytic and numeric gradients of the autoencoder loss, the
/// CSMA loss at λ ∈ {0, 0.1, 1} and the classifier loss on random
/// instances. `corrupt` perturbs every analytic gradient by 1% as a
/// negative control.
pub fn run(seed: u64, input_dim: usize, hidden_dim: usize, corrupt: bool) -> Result<CheckReport> {
    for (name, d) in [("input", input_dim), ("hidden", hidden_dim)] {
        if d == 0 || d > MAX_DIM {
            return Err(Error::param(format!("{name} dimension must be in 1..={MAX_DIM}, got {d}")));
        }
    }
    let tamper = |g: Vec<f64>| -> Vec<f64> {
        if corrupt {
            g.into_iter().map(|v| v * 1.01 + 1e-3).collect()
        } else {
            g
        }
    };

    let mut rng = Rng::new(seed);
    let x = rand_matrix(&mut rng, BATCH, input_dim, 1.0)?.map(f64::abs);
    let w = LayerWeights::new(
        rand_matrix(&mut rng, hidden_dim, input_dim, 0.5)?,
        rand_matrix(&mut rng, input_dim, hidden_dim, 0.5)?,
    )?;
    // target mean from a different batch so the penalty is not trivially zero
    let other = rand_matrix(&mut rng, BATCH, input_dim, 1.0)?.map(f64::abs);
    let mean = class_mean(&w, &other)?;
    let p = layer_params(&w);
    let mut cases = Vec::new();

    let g = ae_gradients(&w, &x)?;
    let analytic = tamper([g.w_enc.into_vec(), g.w_dec.into_vec()].concat());
    let numeric = central_differences(&p, STEP, |q| ae_loss(&layer_from(&w, q)?, &x))?;
    cases.push(CheckCase {
        name: "autoencoder".into(),
        parameters: p.len(),
        max_relative_error: max_error(&analytic, &numeric),
    });

    for lambda in [0.0, 0.1, 1.0] {
        let g = csma_gradients(&w, &x, &mean, lambda)?;
        let analytic = tamper([g.w_enc.into_vec(), g.w_dec.into_vec()].concat());
        let numeric = central_differences(&p, STEP, |q| csma_loss(&layer_from(&w, q)?, &x, &mean, lambda))?;
        cases.push(CheckCase {
            name: format!("csma_lambda_{lambda}"),
            parameters: p.len(),
            max_relative_error: max_error(&analytic, &numeric),
        });
    }

    let labels: Vec<u8> = (0..BATCH).map(|i| (i % 2) as u8).collect();
    let template = ClassifierModel::zeros(input_dim, &default_hidden_dims(input_dim))?;
    let cp: Vec<f64> = (0..template.parameter_count()).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
    let clf = template.with_parameters(&cp)?;
    let analytic = tamper(classifier_gradients(&clf, &x, &labels)?);
    let numeric = central_differences(&cp, STEP, |q| classifier_loss(&clf.with_parameters(q)?, &x, &labels))?;
    cases.push(CheckCase {
        name: "classifier".into(),
        parameters: cp.len(),
        max_relative_error: max_error(&analytic, &numeric),
    });

    Ok(CheckReport {
        seed,
        tolerance: TOLERANCE,
        cases,
    })
}
