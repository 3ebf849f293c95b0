use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use csma::data::{perturb, synth_two_class, write_csv, PerturbationSpec};
use csma::error::{exit_code, Error, Result};
use csma::experiment::{
    compare, evaluate_predictions, load_dataset, mcnemar_text, predict, run_training, write_outputs,
    ExperimentConfig, Predictions,
};
use csma::{gradcheck, persist};

#[derive(Parser)]
#[command(name = "csma", version, about = "Class specific mean autoencoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split, train the encoder stack and classifier, write model and manifest.
    Train(Box<TrainArgs>),
    /// Evaluate a saved model, optionally on perturbed data.
    Eval(EvalArgs),
    /// McNemar test between two prediction files.
    Compare(CompareArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic two-class dataset as CSV.
    Synth(SynthArgs),
    /// Write a perturbed copy of a dataset as CSV.
    Perturb(PerturbArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Key=value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    /// IDX label file.
    #[arg(long)]
    labels: Option<String>,
    /// csv or idx.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    label_column: Option<String>,
    /// IDX labels below this value become class 0.
    #[arg(long)]
    binarize_threshold: Option<String>,
    #[arg(long)]
    image_height: Option<String>,
    #[arg(long)]
    image_width: Option<String>,
    /// Extra KEY=VALUE overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl DataArgs {
    fn flags(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("data", &self.data),
            ("labels", &self.labels),
            ("format", &self.format),
            ("label_column", &self.label_column),
            ("binarize_threshold", &self.binarize_threshold),
            ("image_height", &self.image_height),
            ("image_width", &self.image_width),
        ]
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Hidden sizes, comma separated (default m,m).
    #[arg(long)]
    layer_dims: Option<String>,
    /// One λ for all layers or one per layer.
    #[arg(long)]
    lambdas: Option<String>,
    /// Classifier hidden sizes (default m/4,m/8).
    #[arg(long)]
    classifier_dims: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    classifier_epochs: Option<String>,
    #[arg(long)]
    classifier_learning_rate: Option<String>,
    #[arg(long)]
    train_fraction: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    shuffle: Option<String>,
    /// csma, autoencoder or denoising.
    #[arg(long)]
    feature_model: Option<String>,
    /// Masking probability of the denoising baseline.
    #[arg(long)]
    corruption: Option<String>,
    #[arg(long)]
    model_out: Option<String>,
    #[arg(long)]
    manifest_out: Option<String>,
    #[arg(long)]
    train_out: Option<String>,
    #[arg(long)]
    test_out: Option<String>,
}

impl TrainArgs {
    fn flags(&self) -> Vec<(&'static str, &Option<String>)> {
        let mut v = self.data.flags();
        v.extend([
            ("layer_dims", &self.layer_dims),
            ("lambdas", &self.lambdas),
            ("classifier_dims", &self.classifier_dims),
            ("epochs", &self.epochs),
            ("learning_rate", &self.learning_rate),
            ("classifier_epochs", &self.classifier_epochs),
            ("classifier_learning_rate", &self.classifier_learning_rate),
            ("train_fraction", &self.train_fraction),
            ("seed", &self.seed),
            ("shuffle", &self.shuffle),
            ("feature_model", &self.feature_model),
            ("corruption", &self.corruption),
            ("model_out", &self.model_out),
            ("manifest_out", &self.manifest_out),
            ("train_out", &self.train_out),
            ("test_out", &self.test_out),
        ]);
        v
    }
}

#[derive(Args)]
#[group(multiple = false)]
struct PerturbFlags {
    /// Gaussian blur with this σ.
    #[arg(long)]
    blur: Option<f64>,
    /// Additive Gaussian noise with this standard deviation.
    #[arg(long)]
    noise_std: Option<f64>,
    /// Number of square zero holes.
    #[arg(long)]
    holes: Option<usize>,
}

#[derive(Args)]
struct PerturbOptions {
    #[command(flatten)]
    kind: PerturbFlags,
    #[arg(long, default_value_t = 0.0)]
    noise_mean: f64,
    #[arg(long, default_value_t = 3)]
    hole_size: usize,
}

impl PerturbOptions {
    fn spec(&self, seed: u64) -> Option<PerturbationSpec> {
        let k = &self.kind;
        if let Some(sigma) = k.blur {
            Some(PerturbationSpec { seed, ..PerturbationSpec::blur(sigma) })
        } else if let Some(std) = k.noise_std {
            Some(PerturbationSpec::gaussian_noise(self.noise_mean, std, seed))
        } else {
            k.holes.map(|n| PerturbationSpec::holes(n, self.hole_size, seed))
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    perturbation: PerturbOptions,
    /// Seed of the perturbation noise.
    #[arg(long, default_value_t = 0)]
    perturb_seed: u64,
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// ROC points as threshold,fpr,tpr.
    #[arg(long)]
    roc_out: Option<PathBuf>,
    /// Per-sample label,prediction,score.
    #[arg(long)]
    predictions_out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// CSV whose label column overrides the labels in the prediction files.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: String,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    input_dim: usize,
    #[arg(long, default_value_t = 6)]
    hidden_dim: usize,
    /// Perturb the analytic gradients; the check must then fail.
    #[arg(long)]
    corrupt_gradient: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    n_per_class: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.3)]
    separation: f64,
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    perturbation: PerturbOptions,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn build_config(data: &DataArgs, flags: &[(&'static str, &Option<String>)]) -> Result<ExperimentConfig> {
    let mut cfg = match &data.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for kv in &data.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::param(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    persist::write_atomic(path, text.as_bytes())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = build_config(&args.data, &args.flags())?;
    let ds = load_dataset(&cfg)?;
    let outcome = run_training(&cfg, &ds)?;
    write_outputs(&outcome)?;
    let m = &outcome.manifest;
    println!("train_samples={}", m.train.samples);
    println!("test_samples={}", m.test.samples);
    print!("{}", m.test_metrics.to_report_text());
    println!("model={}", m.config.model_out.display());
    println!("manifest={}", m.config.manifest_out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = build_config(&args.data, &args.data.flags())?;
    let model = persist::load_model(&args.model)?;
    let mut ds = load_dataset(&cfg)?;
    if let Some(spec) = args.perturbation.spec(args.perturb_seed) {
        ds = perturb(&ds, &spec)?;
    }
    let preds = predict(&model, &ds)?;
    let report = evaluate_predictions(&preds)?;
    let text = report.to_report_text();
    print!("{text}");
    if let Some(p) = &args.report_out {
        write_text(p, &text)?;
    }
    if let Some(p) = &args.roc_out {
        write_text(p, &report.roc_csv())?;
    }
    if let Some(p) = &args.predictions_out {
        write_text(p, &preds.to_csv())?;
    }
    Ok(())
}

fn read_labels(path: &Path, column: &str) -> Result<Vec<u8>> {
    let mut reader = csv::Reader::from_path(path)?;
    let idx = reader
        .headers()?
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::Format(format!("{}: no {column:?} column", path.display())))?;
    let mut labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        match rec.get(idx).map(str::trim) {
            Some("0") | Some("0.0") => labels.push(0),
            Some("1") | Some("1.0") => labels.push(1),
            other => {
                return Err(Error::Validation {
                    row,
                    msg: format!("label {other:?} is not 0 or 1"),
                })
            }
        }
    }
    Ok(labels)
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let a = Predictions::read_csv(&args.a)?;
    let b = Predictions::read_csv(&args.b)?;
    let labels = args
        .labels
        .as_deref()
        .map(|p| read_labels(p, &args.label_column))
        .transpose()?;
    let result = compare(&a, &b, labels.as_deref())?;
    print!("{}", mcnemar_text(&result));
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let report = gradcheck::run(args.seed, args.input_dim, args.hidden_dim, args.corrupt_gradient)?;
    print!("{}", report.to_text());
    Ok(report.passed())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let ds = synth_two_class(args.n_per_class, args.dim, args.separation, args.noise, args.seed)?;
    write_csv(&ds, &args.out)?;
    if let Some((h, w)) = ds.image_shape() {
        eprintln!("wrote {} samples, image shape {h}x{w}", ds.len());
    } else {
        eprintln!("wrote {} samples", ds.len());
    }
    Ok(())
}

fn cmd_perturb(args: &PerturbArgs) -> Result<()> {
    let spec = args
        .perturbation
        .spec(args.seed)
        .ok_or_else(|| Error::param("one of --blur, --noise-std or --holes is required"))?;
    let cfg = build_config(&args.data, &args.data.flags())?;
    let ds = load_dataset(&cfg)?;
    write_csv(&perturb(&ds, &spec)?, &args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Compare(a) => cmd_compare(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Perturb(a) => cmd_perturb(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(exit_code::CHECK_FAILED as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
