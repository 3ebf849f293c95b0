//! Labeled datasets: IDX and CSV ingestion, the balanced train/test split,
//! a synthetic two-class generator, and test-time perturbations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{CLASS_ADULT, CLASS_MINOR};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Samples in `[0, 1]` (one flattened image per row) with binary labels,
/// `0 = minor` and `1 = adult`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Matrix,
    labels: Vec<u8>,
    image_shape: Option<(usize, usize)>,
}

impl LabeledDataset {
    pub fn new(samples: Matrix, labels: Vec<u8>, image_shape: Option<(usize, usize)>) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} sample rows but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        if let Some(row) = labels.iter().position(|&y| y > CLASS_ADULT) {
            return Err(Error::Validation {
                row,
                msg: format!("label {} is not 0 or 1", labels[row]),
            });
        }
        if let Some(pos) = samples.as_slice().iter().position(|v| !(0.0..=1.0).contains(v)) {
            let row = pos / samples.cols().max(1);
            return Err(Error::Validation {
                row,
                msg: format!("feature value {} outside [0, 1]", samples.as_slice()[pos]),
            });
        }
        let ds = Self {
            samples,
            labels,
            image_shape: None,
        };
        ds.with_image_shape(image_shape)
    }

    /// Attaches (or clears) the image shape; `height × width` must equal
    /// the sample dimension.
    pub fn with_image_shape(mut self, shape: Option<(usize, usize)>) -> Result<Self> {
        if let Some((h, w)) = shape {
            if h * w != self.samples.cols() {
                return Err(Error::Shape {
                    op: "image shape",
                    left: (h, w),
                    right: self.samples.shape(),
                });
            }
        }
        self.image_shape = shape;
        Ok(self)
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn class_indices(&self, class: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&y| y == class).count()
    }

    /// Rows of one class, in dataset order.
    pub fn class_samples(&self, class: u8) -> Matrix {
        self.samples.select_rows(&self.class_indices(class))
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: self.samples.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            image_shape: self.image_shape,
        }
    }

    /// 64-bit content hash: the first eight bytes (big-endian) of SHA-256
    /// over rows and cols as u64 LE, the label bytes, then every sample
    /// value's IEEE-754 bits as u64 LE.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.samples.rows() as u64).to_le_bytes());
        h.update((self.samples.cols() as u64).to_le_bytes());
        h.update(&self.labels);
        for v in self.samples.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Maps a raw IDX label (e.g. a digit) to `{0, 1}`: values below
/// `threshold` become class 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binarize {
    pub threshold: u8,
}

impl Binarize {
    pub fn apply(&self, raw: u8) -> u8 {
        if raw < self.threshold {
            CLASS_MINOR
        } else {
            CLASS_ADULT
        }
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("slice of 4")))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Reads an IDX image file (magic `0x00000803`) and label file (magic
/// `0x00000801`). Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path, rule: Binarize) -> Result<LabeledDataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;

    let magic = read_be_u32(&images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("images: bad magic {magic:#010x}")));
    }
    let n = read_be_u32(&images, 4, "images")? as usize;
    let height = read_be_u32(&images, 8, "images")? as usize;
    let width = read_be_u32(&images, 12, "images")? as usize;
    let pixels = &images[16..];
    let expected = n * height * width;
    if pixels.len() != expected {
        return Err(Error::Format(format!(
            "images: expected {expected} pixel bytes, found {}",
            pixels.len()
        )));
    }

    let magic = read_be_u32(&labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("labels: bad magic {magic:#010x}")));
    }
    let n_labels = read_be_u32(&labels, 4, "labels")? as usize;
    let raw_labels = &labels[8..];
    if raw_labels.len() != n_labels {
        return Err(Error::Format(format!(
            "labels: expected {n_labels} label bytes, found {}",
            raw_labels.len()
        )));
    }
    if n_labels != n {
        return Err(Error::Consistency(format!("{n} images but {n_labels} labels")));
    }

    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let samples = Matrix::new(n, height * width, data)?;
    let labels = raw_labels.iter().map(|&y| rule.apply(y)).collect();
    LabeledDataset::new(samples, labels, Some((height, width)))
}

/// Writes raw 8-bit images and labels in IDX format.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    height: usize,
    width: usize,
    pixels: &[u8],
    raw_labels: &[u8],
) -> Result<()> {
    if pixels.len() != raw_labels.len() * height * width {
        return Err(Error::Consistency(format!(
            "{} pixel bytes for {} images of {height}x{width}",
            pixels.len(),
            raw_labels.len()
        )));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [raw_labels.len(), height, width] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend_from_slice(pixels);
    fs::write(images_path, img)?;

    let mut lab = Vec::with_capacity(8 + raw_labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(raw_labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(raw_labels);
    fs::write(labels_path, lab)?;
    Ok(())
}

/// Reads a CSV with a header row. `label_column` names the label column;
/// every other column is a feature in `[0, 1]`. Row order is preserved.
pub fn load_csv(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Format(format!("no column named {label_column:?}")))?;
    let dim = headers.len() - 1;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {row}, column {col}: {field:?} is not a number")))?;
            if col == label_idx {
                if value != 0.0 && value != 1.0 {
                    return Err(Error::Validation {
                        row,
                        msg: format!("label {value} is not 0 or 1"),
                    });
                }
                labels.push(value as u8);
            } else {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::Validation {
                        row,
                        msg: format!("feature {value} in column {col} outside [0, 1]"),
                    });
                }
                data.push(value);
            }
        }
    }
    let samples = Matrix::new(labels.len(), dim, data)?;
    LabeledDataset::new(samples, labels, None)
}

/// Writes `label,x0,x1,…` with shortest round-trip float formatting.
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..ds.dim()).map(|j| format!("x{j}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (row, &y) in ds.samples.iter_rows().zip(&ds.labels) {
        write!(w, "{y}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Index partition produced by [`balanced_split_indices`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// With `n_small` the size of the smaller class and
/// `k = floor(train_fraction · n_small)`, draws `k` samples of each class
/// for training; everything else is test. Both lists are ascending.
/// The floor tolerates 1e-9 of binary representation error, so 0.7 · 90
/// gives 63.
pub fn balanced_split_indices(labels: &[u8], train_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut minors: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == CLASS_MINOR).collect();
    let mut adults: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == CLASS_ADULT).collect();
    if minors.is_empty() {
        return Err(Error::EmptyClass(CLASS_MINOR));
    }
    if adults.is_empty() {
        return Err(Error::EmptyClass(CLASS_ADULT));
    }
    let n_small = minors.len().min(adults.len());
    let k = (train_fraction * n_small as f64 + 1e-9).floor() as usize;
    if k == 0 {
        return Err(Error::InsufficientData(format!(
            "fraction {train_fraction} of {n_small} samples selects none"
        )));
    }
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut minors);
    rng.shuffle(&mut adults);
    let mut in_train = vec![false; labels.len()];
    for &i in minors[..k].iter().chain(&adults[..k]) {
        in_train[i] = true;
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| in_train[i]);
    Ok(SplitIndices { train, test })
}

pub fn split_balanced(
    ds: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let idx = balanced_split_indices(&ds.labels, train_fraction, seed)?;
    Ok((ds.subset(&idx.train), ds.subset(&idx.test)))
}

/// The two class templates of [`synth_two_class`]: mid-gray shifted by
/// `±separation/2`, with the sign flipped between the top and bottom half
/// of the image (first and second half of the vector when it is not a
/// square). Their mean absolute difference is exactly `separation`.
pub fn synth_templates(dim: usize, separation: f64) -> (Vec<f64>, Vec<f64>) {
    let side = square_side(dim);
    let half = separation / 2.0;
    let sign = |j: usize| -> f64 {
        let upper = match side {
            Some(s) => j / s < s / 2,
            None => j < dim / 2,
        };
        if upper {
            1.0
        } else {
            -1.0
        }
    };
    let minor = (0..dim).map(|j| 0.5 + half * sign(j)).collect();
    let adult = (0..dim).map(|j| 0.5 - half * sign(j)).collect();
    (minor, adult)
}

fn square_side(dim: usize) -> Option<usize> {
    let s = (dim as f64).sqrt().round() as usize;
    (s * s == dim).then_some(s)
}

/// Two Gaussian clouds around [`synth_templates`], clamped to `[0, 1]`.
/// Rows alternate minor, adult, minor, … . A square `dim` carries the
/// matching image shape.
pub fn synth_two_class(
    n_per_class: usize,
    dim: usize,
    mean_separation: f64,
    noise_std: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_per_class == 0 || dim == 0 {
        return Err(Error::param("sample count and dimension must be positive"));
    }
    if !(mean_separation > 0.0 && mean_separation <= 1.0) {
        return Err(Error::param(format!(
            "mean separation must be in (0, 1], got {mean_separation}"
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::param(format!("noise std must be non-negative, got {noise_std}")));
    }
    let (minor, adult) = synth_templates(dim, mean_separation);
    let mut rng = Rng::new(seed);
    let mut data = Vec::with_capacity(2 * n_per_class * dim);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        for (class, template) in [(CLASS_MINOR, &minor), (CLASS_ADULT, &adult)] {
            for &mu in template.iter() {
                data.push((mu + noise_std * rng.normal()).clamp(0.0, 1.0));
            }
            labels.push(class);
        }
    }
    let samples = Matrix::new(2 * n_per_class, dim, data)?;
    let shape = square_side(dim).map(|s| (s, s));
    LabeledDataset::new(samples, labels, shape)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// Normalized Gaussian kernel with radius `ceil(3σ)`, reflected borders.
    Blur { sigma: f64 },
    /// Additive `N(mean, std_dev²)` per pixel, then clamped to `[0, 1]`.
    GaussianNoise { mean: f64, std_dev: f64 },
    /// `count` square blocks of side `size` set to 0, top-left corners
    /// uniform over all pixels, clipped at the border, overlaps allowed.
    Holes { count: usize, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub perturbation: Perturbation,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn blur(sigma: f64) -> Self {
        Self {
            perturbation: Perturbation::Blur { sigma },
            seed: 0,
        }
    }

    pub fn gaussian_noise(mean: f64, std_dev: f64, seed: u64) -> Self {
        Self {
            perturbation: Perturbation::GaussianNoise { mean, std_dev },
            seed,
        }
    }

    pub fn holes(count: usize, size: usize, seed: u64) -> Self {
        Self {
            perturbation: Perturbation::Holes { count, size },
            seed,
        }
    }

    /// Blur σ=3, noise N(0, 0.01²), noise N(0, 0.001²), ten 3×3 holes.
    pub fn robustness_suite(seed: u64) -> Vec<(&'static str, PerturbationSpec)> {
        vec![
            ("blur_sigma_3", Self::blur(3.0)),
            ("noise_std_0.01", Self::gaussian_noise(0.0, 0.01, seed)),
            ("noise_std_0.001", Self::gaussian_noise(0.0, 0.001, seed)),
            ("holes_10x3x3", Self::holes(10, 3, seed)),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match self.perturbation {
            Perturbation::Blur { sigma } if !(sigma > 0.0) || !sigma.is_finite() => {
                Err(Error::param(format!("blur sigma must be positive, got {sigma}")))
            }
            Perturbation::GaussianNoise { mean, std_dev }
                if !mean.is_finite() || !(std_dev >= 0.0) || !std_dev.is_finite() =>
            {
                Err(Error::param(format!("invalid noise N({mean}, {std_dev}²)")))
            }
            Perturbation::Holes { size: 0, .. } => Err(Error::param("hole size must be positive")),
            _ => Ok(()),
        }
    }
}

/// One-dimensional normalized Gaussian kernel of radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Symmetric reflection of an out-of-range index; works for any offset.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = i.rem_euclid(2 * n);
    (if j >= n { 2 * n - 1 - j } else { j }) as usize
}

/// Separable blur. Each pass computes `x_c + Σ k_i (x_{c+i} − x_c)`, which
/// equals `Σ k_i x_{c+i}` for a normalized kernel and keeps constant
/// images bit-exact.
fn blur_image(pixels: &mut [f64], height: usize, width: usize, kernel: &[f64]) {
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; pixels.len()];
    for r in 0..height {
        for c in 0..width {
            let center = pixels[r * width + c];
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                let cc = reflect(c as isize + t as isize - radius, width);
                acc += k * (pixels[r * width + cc] - center);
            }
            tmp[r * width + c] = center + acc;
        }
    }
    for r in 0..height {
        for c in 0..width {
            let center = tmp[r * width + c];
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                let rr = reflect(r as isize + t as isize - radius, height);
                acc += k * (tmp[rr * width + c] - center);
            }
            pixels[r * width + c] = (center + acc).clamp(0.0, 1.0);
        }
    }
}

/// Applies a perturbation to every sample; labels are untouched.
pub fn perturb(ds: &LabeledDataset, spec: &PerturbationSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut samples = ds.samples.clone();
    let dim = ds.dim();
    let mut rng = Rng::new(spec.seed);
    match spec.perturbation {
        Perturbation::Blur { sigma } => {
            let (h, w) = ds.image_shape.ok_or(Error::MissingShape("blur"))?;
            let kernel = gaussian_kernel(sigma);
            for r in 0..samples.rows() {
                blur_image(samples.row_mut(r), h, w, &kernel);
            }
        }
        Perturbation::GaussianNoise { mean, std_dev } => {
            for v in samples.as_mut_slice() {
                *v = (*v + mean + std_dev * rng.normal()).clamp(0.0, 1.0);
            }
        }
        Perturbation::Holes { count, size } => {
            let (h, w) = ds.image_shape.ok_or(Error::MissingShape("holes"))?;
            debug_assert_eq!(h * w, dim);
            for r in 0..samples.rows() {
                let row = samples.row_mut(r);
                for _ in 0..count {
                    let top = rng.below(h);
                    let left = rng.below(w);
                    for y in top..(top + size).min(h) {
                        row[y * w + left..y * w + (left + size).min(w)].fill(0.0);
                    }
                }
            }
        }
    }
    Ok(LabeledDataset {
        samples,
        labels: ds.labels.clone(),
        image_shape: ds.image_shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn gray(n: usize, h: usize, w: usize, value: f64) -> LabeledDataset {
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        LabeledDataset::new(Matrix::filled(n, h * w, value), labels, Some((h, w))).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            LabeledDataset::new(Matrix::filled(2, 2, 0.5), vec![0], None),
            Err(Error::Consistency(_))
        ));
        assert!(matches!(
            LabeledDataset::new(Matrix::filled(1, 2, 1.5), vec![0], None),
            Err(Error::Validation { row: 0, .. })
        ));
        assert!(LabeledDataset::new(Matrix::filled(1, 2, 0.5), vec![2], None).is_err());
        assert!(LabeledDataset::new(Matrix::filled(1, 4, 0.5), vec![1], Some((3, 1))).is_err());
    }

    #[test]
    fn split_small_balanced_case() {
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let idx = balanced_split_indices(&labels, 0.5, 3).unwrap();
        assert_eq!(idx.train.len(), 10);
        assert_eq!(idx.train.iter().filter(|&&i| labels[i] == 0).count(), 5);
        assert_eq!(idx.test.iter().filter(|&&i| labels[i] == 1).count(), 5);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            balanced_split_indices(&[0, 0, 1], 0.4, 1),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(balanced_split_indices(&[1, 1], 0.5, 1), Err(Error::EmptyClass(0))));
        assert!(matches!(balanced_split_indices(&[0, 1], 1.0, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn split_floor_absorbs_representation_error() {
        let mut labels = vec![0u8; 90];
        labels.extend(vec![1u8; 200]);
        let idx = balanced_split_indices(&labels, 0.7, 0).unwrap();
        assert_eq!(idx.train.len(), 2 * 63);
    }

    #[test]
    fn synth_properties() {
        let ds = synth_two_class(5, 16, 0.3, 0.0, 1).unwrap();
        let minors = ds.class_samples(0);
        for r in 1..minors.rows() {
            assert_eq!(minors.row(r), minors.row(0));
        }
        assert_eq!(ds.image_shape(), Some((4, 4)));
        assert_eq!(synth_two_class(20, 10, 0.3, 0.1, 9).unwrap(), synth_two_class(20, 10, 0.3, 0.1, 9).unwrap());
        assert!(synth_two_class(0, 4, 0.3, 0.1, 1).is_err());
        assert!(synth_two_class(4, 4, 0.0, 0.1, 1).is_err());

        let (a, b) = synth_templates(64, 0.3);
        let mad: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 64.0;
        assert!((mad - 0.3).abs() < 1e-12);
    }

    #[test]
    fn synth_empirical_separation() {
        let ds = synth_two_class(500, 64, 0.3, 0.15, 4).unwrap();
        let m0 = crate::linalg::column_mean(&ds.class_samples(0)).unwrap();
        let m1 = crate::linalg::column_mean(&ds.class_samples(1)).unwrap();
        let mad: f64 = m0
            .as_slice()
            .iter()
            .zip(m1.as_slice())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / 64.0;
        assert!((mad - 0.3).abs() <= 0.015, "{mad}");
    }

    #[test]
    fn kernel_sums_to_one() {
        for sigma in [0.5, 1.0, 3.0, 7.5] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            let total: f64 = k.iter().flat_map(|a| k.iter().map(move |b| a * b)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(-9, 3), 2);
        for i in -50..50 {
            assert!(reflect(i, 4) < 4);
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        for value in [0.0, 0.3, 0.62, 1.0] {
            let ds = gray(3, 8, 8, value);
            let out = perturb(&ds, &PerturbationSpec::blur(3.0)).unwrap();
            assert_eq!(out, ds);
        }
    }

    #[test]
    fn blur_spreads_a_point() {
        let mut m = Matrix::zeros(1, 49);
        m.set(0, 24, 1.0);
        let ds = LabeledDataset::new(m, vec![0], Some((7, 7))).unwrap();
        let out = perturb(&ds, &PerturbationSpec::blur(1.0)).unwrap();
        let s = out.samples();
        assert!(s.get(0, 24) < 1.0 && s.get(0, 24) > s.get(0, 25));
        assert!((s.get(0, 23) - s.get(0, 25)).abs() < 1e-15);
        assert!((s.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noise_identity_and_statistics() {
        let ds = gray(4, 5, 5, 0.5);
        assert_eq!(perturb(&ds, &PerturbationSpec::gaussian_noise(0.0, 0.0, 1)).unwrap(), ds);

        let big = gray(1000, 10, 10, 0.5);
        let out = perturb(&big, &PerturbationSpec::gaussian_noise(0.0, 0.01, 7)).unwrap();
        let deltas: Vec<f64> = out.samples().as_slice().iter().map(|v| v - 0.5).collect();
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (deltas.len() - 1) as f64;
        assert!((var.sqrt() - 0.01).abs() <= 0.0005, "{}", var.sqrt());
    }

    #[test]
    fn holes_zero_at_most_count_times_area() {
        let ds = gray(200, 28, 28, 0.8);
        let out = perturb(&ds, &PerturbationSpec::holes(10, 3, 5)).unwrap();
        for row in out.samples().iter_rows() {
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            assert!(zeros <= 90 && zeros > 0);
        }
        assert_eq!(out.labels(), ds.labels());
        assert_eq!(out, perturb(&ds, &PerturbationSpec::holes(10, 3, 5)).unwrap());
    }

    #[test]
    fn shape_dependent_perturbations_need_a_shape() {
        let ds = LabeledDataset::new(Matrix::filled(2, 4, 0.5), vec![0, 1], None).unwrap();
        assert!(matches!(perturb(&ds, &PerturbationSpec::blur(3.0)), Err(Error::MissingShape(_))));
        assert!(matches!(perturb(&ds, &PerturbationSpec::holes(1, 3, 0)), Err(Error::MissingShape(_))));
        assert!(perturb(&ds, &PerturbationSpec::gaussian_noise(0.0, 0.1, 0)).is_ok());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "x0,label,x1\n0.25,1,0\n1,0,0.5\n0.125,1,0.75\n").unwrap();
        let ds = load_csv(&path, "label").unwrap();
        assert_eq!(ds.labels(), &[1, 0, 1]);
        assert_eq!(ds.samples().as_slice(), &[0.25, 0.0, 1.0, 0.5, 0.125, 0.75]);

        let synth = synth_two_class(10, 9, 0.4, 0.2, 2).unwrap();
        let out = dir.path().join("s.csv");
        write_csv(&synth, &out).unwrap();
        let back = load_csv(&out, "label").unwrap().with_image_shape(synth.image_shape()).unwrap();
        assert_eq!(back, synth);

        fs::write(&path, "x0,label\n0.5,2\n").unwrap();
        assert!(matches!(load_csv(&path, "label"), Err(Error::Validation { row: 0, .. })));
        fs::write(&path, "x0,label\n0.5,1\n1.5,0\n").unwrap();
        match load_csv(&path, "label") {
            Err(e @ Error::Validation { row: 1, .. }) => assert!(e.to_string().contains("row 1")),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "x0,x1,label\n0.5,0.5,1\n0.5,1\n").unwrap();
        assert!(matches!(load_csv(&path, "label"), Err(Error::Format(_))));
        assert!(matches!(load_csv(&dir.path().join("missing.csv"), "label"), Err(Error::Io(_))));
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let pixels: Vec<u8> = vec![0, 255, 128, 64, 255, 0, 1, 2];
        write_idx(&ip, &lp, 2, 2, &pixels, &[3, 7]).unwrap();
        let ds = load_idx(&ip, &lp, Binarize { threshold: 5 }).unwrap();
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.image_shape(), Some((2, 2)));
        assert_eq!(ds.samples().get(0, 0), 0.0);
        assert_eq!(ds.samples().get(0, 1), 1.0);

        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&ip, &lp, Binarize { threshold: 5 }), Err(Error::Format(_))));
        fs::write(&ip, &bytes[..10]).unwrap();
        assert!(matches!(load_idx(&ip, &lp, Binarize { threshold: 5 }), Err(Error::Format(_))));

        let mut bad = bytes.clone();
        bad[3] = 0x01;
        fs::write(&ip, &bad).unwrap();
        assert!(matches!(load_idx(&ip, &lp, Binarize { threshold: 5 }), Err(Error::Format(_))));

        write_idx(&ip, &lp, 2, 2, &pixels, &[3, 7]).unwrap();
        write_idx(&dir.path().join("i3"), &lp, 1, 1, &[1, 2, 3], &[1, 2, 3]).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp, Binarize { threshold: 5 }),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn split_is_an_exact_partition() {
        let mut rng = Rng::new(12);
        for trial in 0..20 {
            let n = 10 + rng.below(200);
            let mut labels: Vec<u8> = (0..n).map(|_| (rng.uniform() < 0.3) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let frac = rng.uniform_in(0.5, 0.95);
            let Ok(idx) = balanced_split_indices(&labels, frac, trial) else {
                continue;
            };
            let train: BTreeSet<usize> = idx.train.iter().copied().collect();
            let test: BTreeSet<usize> = idx.test.iter().copied().collect();
            assert!(train.is_disjoint(&test));
            assert_eq!(train.union(&test).copied().collect::<Vec<_>>(), (0..n).collect::<Vec<_>>());
            let minors = idx.train.iter().filter(|&&i| labels[i] == 0).count();
            assert_eq!(2 * minors, idx.train.len());
        }
    }
}
