//! Binary model container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "CSMA"  u16 version  u32 layer_count
//! layer_count × (u32 input_dim, u32 hidden_dim)
//! layer_count × f64 lambda
//! layer_count × (w_enc row-major, w_dec row-major) as f64
//! optional classifier section:
//!   "CLSF"  u32 layer_count
//!   layer_count × (u32 out_dim, u32 in_dim)
//!   layer_count × (weights row-major, bias) as f64
//!   f64 threshold
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autoencoder::{CsmaModel, LayerWeights};
use crate::classifier::{ClassifierModel, DenseLayer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"CSMA";
pub const CLASSIFIER_TAG: &[u8; 4] = b"CLSF";
pub const FORMAT_VERSION: u16 = 1;

/// A feature extractor plus the classifier head trained on its output.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub csma: CsmaModel,
    pub classifier: Option<ClassifierModel>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::param(format!("dimension {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(model: &SavedModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let layers = model.csma.layers();
    put_u32(&mut out, layers.len())?;
    for l in layers {
        put_u32(&mut out, l.input_dim())?;
        put_u32(&mut out, l.hidden_dim())?;
    }
    put_f64s(&mut out, model.csma.lambdas());
    for l in layers {
        put_f64s(&mut out, l.w_enc().as_slice());
        put_f64s(&mut out, l.w_dec().as_slice());
    }
    if let Some(clf) = &model.classifier {
        out.extend_from_slice(CLASSIFIER_TAG);
        put_u32(&mut out, clf.layers().len())?;
        for l in clf.layers() {
            put_u32(&mut out, l.output_dim())?;
            put_u32(&mut out, l.input_dim())?;
        }
        for l in clf.layers() {
            put_f64s(&mut out, l.weights().as_slice());
            put_f64s(&mut out, l.bias());
        }
        put_f64s(&mut out, &[clf.threshold()]);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("model file truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format("model dimensions overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("model dimensions overflow".into()))?;
        Matrix::new(rows, cols, self.f64s(n)?).map_err(|e| Error::Format(format!("bad weights: {e}")))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SavedModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a CSMA model file (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model format version {version}")));
    }
    let count = r.u32()?;
    let dims: Vec<(usize, usize)> = (0..count).map(|_| Ok((r.u32()?, r.u32()?))).collect::<Result<_>>()?;
    let lambdas = r.f64s(count)?;
    let mut layers = Vec::with_capacity(count);
    for &(input, hidden) in &dims {
        let w_enc = r.matrix(hidden, input)?;
        let w_dec = r.matrix(input, hidden)?;
        layers.push(LayerWeights::new(w_enc, w_dec)?);
    }
    let csma = CsmaModel::new(layers, lambdas).map_err(|e| Error::Format(format!("inconsistent model: {e}")))?;

    let classifier = if r.at_end() {
        None
    } else {
        if r.take(4)? != CLASSIFIER_TAG {
            return Err(Error::Format("unknown section after layers".into()));
        }
        let count = r.u32()?;
        let dims: Vec<(usize, usize)> = (0..count).map(|_| Ok((r.u32()?, r.u32()?))).collect::<Result<_>>()?;
        let mut layers = Vec::with_capacity(count);
        for &(out, input) in &dims {
            let weights = r.matrix(out, input)?;
            let bias = r.f64s(out)?;
            layers.push(DenseLayer::new(weights, bias)?);
        }
        let threshold = r.f64s(1)?[0];
        let clf = ClassifierModel::new(layers, threshold)
            .map_err(|e| Error::Format(format!("inconsistent classifier: {e}")))?;
        Some(clf)
    };
    if !r.at_end() {
        return Err(Error::Format(format!(
            "{} trailing bytes in model file",
            bytes.len() - r.pos
        )));
    }
    Ok(SavedModel { csma, classifier })
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path
        .file_name()
        .ok_or_else(|| Error::param(format!("{} is not a file path", path.display())))?
        .to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    let written = fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(bytes)?;
        f.sync_all()
    });
    if let Err(e) = written.and_then(|_| fs::rename(&tmp, path)) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

pub fn save_model(path: &Path, model: &SavedModel) -> Result<()> {
    write_atomic(path, &to_bytes(model)?)
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{train_stacked, TrainConfig};
    use crate::classifier::train_classifier;
    use crate::data::synth_two_class;
    use crate::linalg::{rand_matrix, Rng};
    use proptest::prelude::*;

    fn trained() -> SavedModel {
        let ds = synth_two_class(10, 9, 0.4, 0.1, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let csma = train_stacked(&ds.class_samples(0), &ds.class_samples(1), &[6, 4], &[cfg.clone(), cfg.clone()]).unwrap();
        let feats = csma.extract_features(ds.samples()).unwrap();
        let classifier = Some(train_classifier(&feats, ds.labels(), &cfg).unwrap());
        SavedModel { csma, classifier }
    }

    fn bits(m: &SavedModel) -> Vec<u64> {
        to_bytes(m)
            .unwrap()
            .chunks(8)
            .map(|c| c.iter().fold(0u64, |a, &b| a << 8 | b as u64))
            .collect()
    }

    #[test]
    fn header_layout() {
        let model = trained();
        let bytes = to_bytes(&model).unwrap();
        assert_eq!(&bytes[..4], b"CSMA");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 9);
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 6);
        assert_eq!(f64::from_le_bytes(bytes[26..34].try_into().unwrap()), 0.1);
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let model = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csma");
        save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(bits(&back), bits(&model));
        assert_eq!(back.csma.layers(), model.csma.layers());
        assert_eq!(back.classifier, model.classifier);

        let plain = SavedModel {
            csma: model.csma.clone(),
            classifier: None,
        };
        assert_eq!(from_bytes(&to_bytes(&plain).unwrap()).unwrap().classifier, None);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let bytes = to_bytes(&trained()).unwrap();
        for cut in [0, 3, 5, 9, 40, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut nan = bytes;
        nan[26..34].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(from_bytes(&nan).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn random_layers_round_trip(seed in any::<u64>(), input in 1usize..6, hidden in 1usize..6, lambda in 0.0f64..2.0) {
            let mut rng = Rng::new(seed);
            let w = LayerWeights::new(
                rand_matrix(&mut rng, hidden, input, 1e3).unwrap(),
                rand_matrix(&mut rng, input, hidden, 1e-3).unwrap(),
            ).unwrap();
            let model = SavedModel { csma: CsmaModel::new(vec![w], vec![lambda]).unwrap(), classifier: None };
            let back = from_bytes(&to_bytes(&model).unwrap()).unwrap();
            prop_assert_eq!(back, model);
        }
    }
}
