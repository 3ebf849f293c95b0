//! Experiment configuration, run manifests and the train / eval / compare
//! pipeline used by the command line front-end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    train_stacked, train_stacked_autoencoder, train_stacked_denoising, CsmaModel, TrainConfig, CLASS_ADULT,
    CLASS_MINOR,
};
use crate::classifier::{default_hidden_dims, train_classifier_with_dims, ClassifierModel};
use crate::data::{load_csv, load_idx, split_balanced, Binarize, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::metrics::{evaluate, mcnemar_test, EvalReport, McNemarResult};
use crate::persist::{write_atomic, SavedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Idx,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "idx" => Ok(Self::Idx),
            _ => Err(Error::param(format!("unknown data format {s:?} (csv or idx)"))),
        }
    }
}

/// Which encoder stack produces the classifier's features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureModel {
    Csma,
    Autoencoder,
    Denoising,
}

impl FromStr for FeatureModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csma" => Ok(Self::Csma),
            "autoencoder" | "ae" => Ok(Self::Autoencoder),
            "denoising" | "dae" => Ok(Self::Denoising),
            _ => Err(Error::param(format!(
                "unknown feature model {s:?} (csma, autoencoder or denoising)"
            ))),
        }
    }
}

/// Everything a run depends on. `None` dimensions are resolved from the
/// data: `layer_dims = [m, m]`, `classifier_dims = [m/4, m/8]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    /// IDX label file; CSV labels come from `label_column`.
    pub labels: Option<PathBuf>,
    pub format: DataFormat,
    pub label_column: String,
    pub binarize_threshold: u8,
    pub image_height: Option<usize>,
    pub image_width: Option<usize>,
    pub layer_dims: Option<Vec<usize>>,
    /// One value for every layer, or one per layer.
    pub lambdas: Vec<f64>,
    pub classifier_dims: Option<Vec<usize>>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub classifier_epochs: Option<usize>,
    pub classifier_learning_rate: Option<f64>,
    pub train_fraction: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub feature_model: FeatureModel,
    pub corruption: f64,
    pub model_out: PathBuf,
    pub manifest_out: PathBuf,
    pub train_out: Option<PathBuf>,
    pub test_out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            labels: None,
            format: DataFormat::Csv,
            label_column: "label".into(),
            binarize_threshold: 5,
            image_height: None,
            image_width: None,
            layer_dims: None,
            lambdas: vec![0.1],
            classifier_dims: None,
            epochs: 100,
            learning_rate: 0.01,
            classifier_epochs: None,
            classifier_learning_rate: None,
            train_fraction: 0.70,
            seed: 0,
            shuffle: false,
            feature_model: FeatureModel::Csma,
            corruption: 0.25,
            model_out: "model.csma".into(),
            manifest_out: "manifest.json".into(),
            train_out: None,
            test_out: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::param(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::param(format!("{key}: empty list")));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::param(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "data",
        "labels",
        "format",
        "label_column",
        "binarize_threshold",
        "image_height",
        "image_width",
        "layer_dims",
        "lambdas",
        "classifier_dims",
        "epochs",
        "learning_rate",
        "classifier_epochs",
        "classifier_learning_rate",
        "train_fraction",
        "seed",
        "shuffle",
        "feature_model",
        "corruption",
        "model_out",
        "manifest_out",
        "train_out",
        "test_out",
    ];

    /// Sets one field from its textual form. Hyphens in `key` are read as
    /// underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "data" => self.data = Some(value.into()),
            "labels" => self.labels = Some(value.into()),
            "format" => self.format = value.parse()?,
            "label_column" => self.label_column = value.to_string(),
            "binarize_threshold" => self.binarize_threshold = parse_value(k, value)?,
            "image_height" => self.image_height = Some(parse_value(k, value)?),
            "image_width" => self.image_width = Some(parse_value(k, value)?),
            "layer_dims" => self.layer_dims = Some(parse_list(k, value)?),
            "lambdas" | "lambda" => self.lambdas = parse_list(k, value)?,
            "classifier_dims" => self.classifier_dims = Some(parse_list(k, value)?),
            "epochs" => self.epochs = parse_value(k, value)?,
            "learning_rate" => self.learning_rate = parse_value(k, value)?,
            "classifier_epochs" => self.classifier_epochs = Some(parse_value(k, value)?),
            "classifier_learning_rate" => self.classifier_learning_rate = Some(parse_value(k, value)?),
            "train_fraction" => self.train_fraction = parse_value(k, value)?,
            "seed" => self.seed = parse_value(k, value)?,
            "shuffle" => self.shuffle = parse_bool(k, value)?,
            "feature_model" => self.feature_model = value.parse()?,
            "corruption" => self.corruption = parse_value(k, value)?,
            "model_out" => self.model_out = value.into(),
            "manifest_out" => self.manifest_out = value.into(),
            "train_out" => self.train_out = Some(value.into()),
            "test_out" => self.test_out = Some(value.into()),
            _ => return Err(Error::param(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line {}: expected key=value", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Inverse of [`ExperimentConfig::apply_text`] for every set field.
    pub fn to_text(&self) -> String {
        fn list<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        if let Some(p) = &self.data {
            put("data", p.display().to_string());
        }
        if let Some(p) = &self.labels {
            put("labels", p.display().to_string());
        }
        put("format", format!("{:?}", self.format).to_lowercase());
        put("label_column", self.label_column.clone());
        put("binarize_threshold", self.binarize_threshold.to_string());
        if let Some(h) = self.image_height {
            put("image_height", h.to_string());
        }
        if let Some(w) = self.image_width {
            put("image_width", w.to_string());
        }
        if let Some(d) = &self.layer_dims {
            put("layer_dims", list(d));
        }
        put("lambdas", list(&self.lambdas));
        if let Some(d) = &self.classifier_dims {
            put("classifier_dims", list(d));
        }
        put("epochs", self.epochs.to_string());
        put("learning_rate", self.learning_rate.to_string());
        if let Some(e) = self.classifier_epochs {
            put("classifier_epochs", e.to_string());
        }
        if let Some(lr) = self.classifier_learning_rate {
            put("classifier_learning_rate", lr.to_string());
        }
        put("train_fraction", self.train_fraction.to_string());
        put("seed", self.seed.to_string());
        put("shuffle", self.shuffle.to_string());
        put("feature_model", format!("{:?}", self.feature_model).to_lowercase());
        put("corruption", self.corruption.to_string());
        put("model_out", self.model_out.display().to_string());
        put("manifest_out", self.manifest_out.display().to_string());
        if let Some(p) = &self.train_out {
            put("train_out", p.display().to_string());
        }
        if let Some(p) = &self.test_out {
            put("test_out", p.display().to_string());
        }
        out
    }

    pub fn image_shape(&self) -> Result<Option<(usize, usize)>> {
        match (self.image_height, self.image_width) {
            (Some(h), Some(w)) => Ok(Some((h, w))),
            (None, None) => Ok(None),
            _ => Err(Error::param("image_height and image_width must be given together")),
        }
    }

    /// Fills the data-dependent defaults for input dimension `m`.
    pub fn resolve(&mut self, m: usize) -> Result<()> {
        let dims = self.layer_dims.get_or_insert_with(|| vec![m, m]).clone();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::param("layer_dims must be non-empty and positive"));
        }
        if self.lambdas.len() == 1 && dims.len() > 1 {
            self.lambdas = vec![self.lambdas[0]; dims.len()];
        }
        if self.lambdas.len() != dims.len() {
            return Err(Error::param(format!(
                "{} lambdas for {} layers",
                self.lambdas.len(),
                dims.len()
            )));
        }
        let last = *dims.last().expect("non-empty");
        let clf = self.classifier_dims.get_or_insert_with(|| default_hidden_dims(last));
        if clf.contains(&0) {
            return Err(Error::param("classifier_dims must be positive"));
        }
        self.classifier_epochs.get_or_insert(self.epochs);
        self.classifier_learning_rate.get_or_insert(self.learning_rate);
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::param(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    fn layer_configs(&self, seeds: &[u64]) -> Vec<TrainConfig> {
        seeds
            .iter()
            .zip(&self.lambdas)
            .map(|(&seed, &lambda)| TrainConfig {
                epochs: self.epochs,
                learning_rate: self.learning_rate,
                lambda,
                seed,
                init_scale: None,
                shuffle: self.shuffle,
            })
            .collect()
    }
}

/// Loads the dataset named by `cfg.data` (and `cfg.labels` for IDX),
/// attaching `cfg`'s image shape when given.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    let data = cfg.data.as_deref().ok_or_else(|| Error::param("no data path given"))?;
    let ds = match cfg.format {
        DataFormat::Csv => load_csv(data, &cfg.label_column)?,
        DataFormat::Idx => {
            let labels = cfg
                .labels
                .as_deref()
                .ok_or_else(|| Error::param("IDX data needs a labels path"))?;
            load_idx(
                data,
                labels,
                Binarize {
                    threshold: cfg.binarize_threshold,
                },
            )?
        }
    };
    match cfg.image_shape()? {
        Some(shape) => ds.with_image_shape(Some(shape)),
        None => Ok(ds),
    }
}

/// Derived per-stage seeds: split, one per layer, classifier.
struct Seeds {
    split: u64,
    layers: Vec<u64>,
    classifier: u64,
}

impl Seeds {
    fn new(seed: u64, layers: usize) -> Self {
        let mut rng = Rng::new(seed);
        Self {
            split: rng.next_u64(),
            layers: (0..layers).map(|_| rng.next_u64()).collect(),
            classifier: rng.next_u64(),
        }
    }
}

/// Trains the configured encoder stack on `train`. `cfg` must be resolved.
pub fn train_feature_model(cfg: &ExperimentConfig, train: &LabeledDataset) -> Result<CsmaModel> {
    let dims = cfg
        .layer_dims
        .as_deref()
        .ok_or_else(|| Error::param("configuration is not resolved"))?;
    let seeds = Seeds::new(cfg.seed, dims.len());
    let cfgs = cfg.layer_configs(&seeds.layers);
    let minor = train.class_samples(CLASS_MINOR);
    let adult = train.class_samples(CLASS_ADULT);
    match cfg.feature_model {
        FeatureModel::Csma => train_stacked(&minor, &adult, dims, &cfgs),
        FeatureModel::Autoencoder => train_stacked_autoencoder(&minor, &adult, dims, &cfgs),
        FeatureModel::Denoising => train_stacked_denoising(&minor, &adult, dims, &cfgs, cfg.corruption),
    }
}

/// Classifier head on the features of `train`. `cfg` must be resolved.
pub fn train_head(cfg: &ExperimentConfig, features: &Matrix, labels: &[u8]) -> Result<ClassifierModel> {
    let dims = cfg.layer_dims.as_deref().unwrap_or(&[]);
    let seeds = Seeds::new(cfg.seed, dims.len());
    let tc = TrainConfig {
        epochs: cfg.classifier_epochs.unwrap_or(cfg.epochs),
        learning_rate: cfg.classifier_learning_rate.unwrap_or(cfg.learning_rate),
        lambda: 0.0,
        seed: seeds.classifier,
        init_scale: None,
        shuffle: cfg.shuffle,
    };
    let hidden = cfg
        .classifier_dims
        .clone()
        .unwrap_or_else(|| default_hidden_dims(features.cols()));
    train_classifier_with_dims(features, labels, &hidden, &tc)
}

/// Per-sample outputs of a model on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<u8>,
    pub predictions: Vec<u8>,
    pub scores: Vec<f64>,
}

impl Predictions {
    pub fn correct(&self) -> Vec<bool> {
        self.predictions.iter().zip(&self.labels).map(|(p, y)| p == y).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,prediction,score\n");
        for ((y, p), s) in self.labels.iter().zip(&self.predictions).zip(&self.scores) {
            let _ = writeln!(out, "{y},{p},{s}");
        }
        out
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Format(format!("{}: no {name:?} column", path.display())))
        };
        let (ci_label, ci_pred, ci_score) = (col("label")?, col("prediction")?, col("score")?);
        let mut out = Predictions {
            labels: Vec::new(),
            predictions: Vec::new(),
            scores: Vec::new(),
        };
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
            let class = |i: usize| -> Result<u8> {
                match field(i).as_str() {
                    "0" => Ok(CLASS_MINOR),
                    "1" => Ok(CLASS_ADULT),
                    other => Err(Error::Validation {
                        row,
                        msg: format!("{other:?} is not 0 or 1"),
                    }),
                }
            };
            out.labels.push(class(ci_label)?);
            out.predictions.push(class(ci_pred)?);
            out.scores.push(
                field(ci_score)
                    .parse()
                    .map_err(|_| Error::Format(format!("row {row}: bad score {:?}", field(ci_score))))?,
            );
        }
        Ok(out)
    }
}

/// Features, scores and decisions of a saved model on `ds`.
pub fn predict(model: &SavedModel, ds: &LabeledDataset) -> Result<Predictions> {
    let input = model.csma.input_dim().unwrap_or_else(|| {
        model
            .classifier
            .as_ref()
            .map(ClassifierModel::input_dim)
            .unwrap_or(0)
    });
    if input != ds.dim() {
        return Err(Error::Shape {
            op: "model input vs data",
            left: (1, input),
            right: ds.samples().shape(),
        });
    }
    let clf = model
        .classifier
        .as_ref()
        .ok_or_else(|| Error::Format("model file has no classifier section".into()))?;
    let features = model.csma.extract_features(ds.samples())?;
    let scores = clf.predict_score(&features)?;
    Ok(Predictions {
        labels: ds.labels().to_vec(),
        predictions: scores.iter().map(|&s| clf.decide(s)).collect(),
        scores,
    })
}

pub fn evaluate_predictions(p: &Predictions) -> Result<EvalReport> {
    evaluate(&p.predictions, &p.scores, &p.labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    /// 64-bit content hash, hex.
    pub fingerprint: String,
    pub samples: usize,
    pub dim: usize,
    pub minors: usize,
    pub adults: usize,
}

impl DatasetSummary {
    pub fn of(ds: &LabeledDataset) -> Self {
        Self {
            fingerprint: format!("{:016x}", ds.fingerprint()),
            samples: ds.len(),
            dim: ds.dim(),
            minors: ds.class_count(CLASS_MINOR),
            adults: ds.class_count(CLASS_ADULT),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub train: DatasetSummary,
    pub test: DatasetSummary,
    /// Epoch losses of each encoder layer.
    pub layer_epoch_losses: Vec<Vec<f64>>,
    pub train_mean_accuracy: f64,
    pub test_metrics: EvalReport,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    /// Equality ignoring the wall-clock time and where outputs were written.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        let mut a = self.clone();
        a.wall_clock_seconds = other.wall_clock_seconds;
        a.config.model_out.clone_from(&other.config.model_out);
        a.config.manifest_out.clone_from(&other.config.manifest_out);
        a.config.train_out.clone_from(&other.config.train_out);
        a.config.test_out.clone_from(&other.config.test_out);
        &a == other
    }
}

pub struct TrainOutcome {
    pub model: SavedModel,
    pub manifest: RunManifest,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Balanced split, encoder training, feature extraction, classifier
/// training and test-set evaluation. Nothing is written to disk.
pub fn run_training(cfg: &ExperimentConfig, ds: &LabeledDataset) -> Result<TrainOutcome> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    cfg.resolve(ds.dim())?;
    let layers = cfg.layer_dims.as_ref().map_or(0, Vec::len);
    let seeds = Seeds::new(cfg.seed, layers);
    let (train, test) = split_balanced(ds, cfg.train_fraction, seeds.split)?;

    let csma = train_feature_model(&cfg, &train)?;
    let train_features = csma.extract_features(train.samples())?;
    let classifier = train_head(&cfg, &train_features, train.labels())?;
    let model = SavedModel {
        csma,
        classifier: Some(classifier),
    };

    let train_report = evaluate_predictions(&predict(&model, &train)?)?;
    let test_metrics = evaluate_predictions(&predict(&model, &test)?)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        dataset: DatasetSummary::of(ds),
        train: DatasetSummary::of(&train),
        test: DatasetSummary::of(&test),
        layer_epoch_losses: model.csma.training_log().to_vec(),
        train_mean_accuracy: train_report.mean_accuracy,
        test_metrics,
        config: cfg,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        model,
        manifest,
        train,
        test,
    })
}

/// Writes the model, the manifest and (when configured) the split CSVs.
pub fn write_outputs(outcome: &TrainOutcome) -> Result<()> {
    let cfg = &outcome.manifest.config;
    crate::persist::save_model(&cfg.model_out, &outcome.model)?;
    if let Some(p) = &cfg.train_out {
        crate::data::write_csv(&outcome.train, p)?;
    }
    if let Some(p) = &cfg.test_out {
        crate::data::write_csv(&outcome.test, p)?;
    }
    write_atomic(&cfg.manifest_out, outcome.manifest.to_json()?.as_bytes())
}

/// McNemar test of two prediction sets against shared labels. Without
/// `labels` the label columns of `a` and `b` must agree.
pub fn compare(a: &Predictions, b: &Predictions, labels: Option<&[u8]>) -> Result<McNemarResult> {
    if a.predictions.len() != b.predictions.len() {
        return Err(Error::Consistency(format!(
            "prediction files have {} and {} rows",
            a.predictions.len(),
            b.predictions.len()
        )));
    }
    let labels = match labels {
        Some(l) => l,
        None => {
            if a.labels != b.labels {
                return Err(Error::Consistency("label columns of the two files differ".into()));
            }
            &a.labels
        }
    };
    if labels.len() != a.predictions.len() {
        return Err(Error::Consistency(format!(
            "{} labels for {} predictions",
            labels.len(),
            a.predictions.len()
        )));
    }
    let correct = |p: &Predictions| -> Vec<bool> { p.predictions.iter().zip(labels).map(|(x, y)| x == y).collect() };
    mcnemar_test(&correct(a), &correct(b))
}

pub fn mcnemar_text(m: &McNemarResult) -> String {
    format!(
        "b={}\nc={}\np_value={}\nsignificant_at_95={}\n",
        m.b, m.c, m.p_value, m.significant_at_95
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_two_class;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("layer_dims=12\nepochs=15\nlearning_rate=0.01\nclassifier_learning_rate=0.1\nseed=3\n")
            .unwrap();
        cfg
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let mut cfg = ExperimentConfig::default();
        cfg.resolve(64).unwrap();
        assert_eq!(cfg.layer_dims, Some(vec![64, 64]));
        assert_eq!(cfg.lambdas, vec![0.1, 0.1]);
        assert_eq!(cfg.classifier_dims, Some(vec![16, 8]));
        assert_eq!((cfg.epochs, cfg.learning_rate, cfg.train_fraction), (100, 0.01, 0.70));
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "# comment\n\ndata = d.csv\nlayer-dims=8,4\nlambdas=0.5,0\nshuffle=yes\nfeature_model=dae\nimage_height=2\nimage_width=4\n",
        )
        .unwrap();
        assert_eq!(cfg.layer_dims, Some(vec![8, 4]));
        assert_eq!(cfg.feature_model, FeatureModel::Denoising);
        let mut back = ExperimentConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_errors() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(cfg.apply_text("nonsense"), Err(Error::Format(_))));
        assert!(matches!(cfg.set("bogus", "1"), Err(Error::Parameter(_))));
        assert!(matches!(cfg.set("epochs", "-1"), Err(Error::Parameter(_))));
        cfg.set("lambdas", "0.1,0.2,0.3").unwrap();
        cfg.set("layer_dims", "4,4").unwrap();
        assert!(cfg.resolve(4).is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.set("image_height", "3").unwrap();
        assert!(cfg.image_shape().is_err());
    }

    #[test]
    fn training_is_reproducible() {
        let ds = synth_two_class(40, 16, 0.4, 0.1, 1).unwrap();
        let a = run_training(&small_cfg(), &ds).unwrap();
        let b = run_training(&small_cfg(), &ds).unwrap();
        assert!(a.manifest.same_run(&b.manifest));
        let mut moved = b.manifest.clone();
        moved.config.model_out = "elsewhere.csma".into();
        assert!(a.manifest.same_run(&moved));
        moved.config.epochs += 1;
        assert!(!a.manifest.same_run(&moved));
        assert_eq!(a.model, b.model);
        assert_eq!(a.manifest.train.samples, 56);
        assert_eq!(a.manifest.layer_epoch_losses[0].len(), 15);
        let json = a.manifest.to_json().unwrap();
        assert!(RunManifest::from_json(&json).unwrap().same_run(&a.manifest));
    }

    #[test]
    fn prediction_files_round_trip() {
        let p = Predictions {
            labels: vec![0, 1, 1],
            predictions: vec![0, 0, 1],
            scores: vec![0.1, 0.4999999999999999, 0.9],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        fs::write(&path, p.to_csv()).unwrap();
        assert_eq!(Predictions::read_csv(&path).unwrap(), p);
    }

    #[test]
    fn compare_cases() {
        let p = |preds: Vec<u8>| Predictions {
            labels: vec![1; preds.len()],
            scores: vec![0.5; preds.len()],
            predictions: preds,
        };
        let same = compare(&p(vec![1, 0, 1]), &p(vec![1, 0, 1]), None).unwrap();
        assert_eq!((same.b, same.c, same.p_value), (0, 0, 1.0));
        let a = p(vec![1; 10]);
        let b = p(vec![0; 10]);
        let r = compare(&a, &b, None).unwrap();
        assert_eq!((r.b, r.c), (10, 0));
        assert!((r.p_value - 0.001953125).abs() < 1e-12 && r.significant_at_95);
        assert_eq!(compare(&b, &a, None).unwrap().p_value, r.p_value);
        assert!(matches!(compare(&a, &p(vec![1; 9]), None), Err(Error::Consistency(_))));
    }

    #[test]
    fn predict_checks_dimensions() {
        let ds = synth_two_class(20, 16, 0.4, 0.1, 1).unwrap();
        let model = run_training(&small_cfg(), &ds).unwrap().model;
        let other = synth_two_class(5, 9, 0.4, 0.1, 1).unwrap();
        assert!(matches!(predict(&model, &other), Err(Error::Shape { .. })));
    }
}
