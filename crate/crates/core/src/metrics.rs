//! Evaluation: mean class-wise accuracy, confusion matrix, ROC, the minor
//! misclassification rate, an exact McNemar test, and feature-space
//! diagnostics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{ClassMeans, CLASS_ADULT, CLASS_MINOR};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Counts indexed as actual × predicted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub minor_as_minor: usize,
    pub minor_as_adult: usize,
    pub adult_as_minor: usize,
    pub adult_as_adult: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (y, p) {
                (CLASS_MINOR, CLASS_MINOR) => c.minor_as_minor += 1,
                (CLASS_MINOR, _) => c.minor_as_adult += 1,
                (_, CLASS_MINOR) => c.adult_as_minor += 1,
                _ => c.adult_as_adult += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.minor_as_minor + self.minor_as_adult + self.adult_as_minor + self.adult_as_adult
    }

    pub fn minors(&self) -> usize {
        self.minor_as_minor + self.minor_as_adult
    }

    pub fn adults(&self) -> usize {
        self.adult_as_minor + self.adult_as_adult
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: Confusion,
    /// Percentages.
    pub acc_minor: f64,
    pub acc_adult: f64,
    pub mean_accuracy: f64,
    pub minor_misclassification_rate: f64,
    pub auc: f64,
    /// Ordered by decreasing threshold, from (0, 0) to (1, 1).
    pub roc: Vec<RocPoint>,
    pub mcnemar: Option<McNemarResult>,
}

/// Average of the two per-class accuracies.
pub fn mean_class_accuracy(acc_minor: f64, acc_adult: f64) -> f64 {
    (acc_minor + acc_adult) / 2.0
}

/// Rounds half away from zero to two decimals. Values within 1e-6 of a
/// half-cent boundary after scaling are treated as on it, so binary
/// representation error does not flip the displayed digit.
pub fn round2(x: f64) -> f64 {
    let scaled = ((x * 100.0) * 1e6).round() / 1e6;
    scaled.round() / 100.0
}

pub fn display2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

fn check_labels(labels: &[u8], what: &'static str) -> Result<()> {
    if let Some(pos) = labels.iter().position(|&y| y > CLASS_ADULT) {
        return Err(Error::Validation {
            row: pos,
            msg: format!("label {} is not 0 or 1", labels[pos]),
        });
    }
    let minors = labels.iter().filter(|&&y| y == CLASS_MINOR).count();
    if minors == 0 || minors == labels.len() {
        return Err(Error::DegenerateLabels(what));
    }
    Ok(())
}

pub fn evaluate(predictions: &[u8], scores: &[f64], labels: &[u8]) -> Result<EvalReport> {
    if predictions.len() != labels.len() || scores.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} predictions, {} scores, {} labels",
            predictions.len(),
            scores.len(),
            labels.len()
        )));
    }
    check_labels(labels, "evaluation")?;
    if let Some(pos) = predictions.iter().position(|&p| p > CLASS_ADULT) {
        return Err(Error::Validation {
            row: pos,
            msg: format!("prediction {} is not 0 or 1", predictions[pos]),
        });
    }
    let confusion = Confusion::from_predictions(predictions, labels);
    let acc_minor = 100.0 * confusion.minor_as_minor as f64 / confusion.minors() as f64;
    let acc_adult = 100.0 * confusion.adult_as_adult as f64 / confusion.adults() as f64;
    let roc = roc_curve(scores, labels)?;
    Ok(EvalReport {
        confusion,
        acc_minor,
        acc_adult,
        mean_accuracy: mean_class_accuracy(acc_minor, acc_adult),
        minor_misclassification_rate: minor_misclassification_rate(predictions, labels)?,
        auc: roc_auc(&roc),
        roc,
        mcnemar: None,
    })
}

/// ROC points for "adult iff score ≥ threshold", sweeping every distinct
/// score plus one sentinel above the maximum and one below the minimum.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_labels(labels, "ROC")?;
    if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Validation {
            row: pos,
            msg: "score is not finite".into(),
        });
    }
    let positives = labels.iter().filter(|&&y| y == CLASS_ADULT).count() as f64;
    let negatives = labels.len() as f64 - positives;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let max = scores[order[0]];
    let min = scores[order[order.len() - 1]];

    let mut points = vec![RocPoint {
        threshold: max + 1.0,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == CLASS_ADULT {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / negatives,
            tpr: tp as f64 / positives,
        });
    }
    points.push(RocPoint {
        threshold: min - 1.0,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(points)
}

/// Trapezoidal area under an ROC curve.
pub fn roc_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Percentage of minors predicted as adults.
pub fn minor_misclassification_rate(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut minors, mut wrong) = (0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        if y == CLASS_MINOR {
            minors += 1;
            if p == CLASS_ADULT {
                wrong += 1;
            }
        }
    }
    if minors == 0 {
        return Err(Error::UndefinedRate("no minor samples"));
    }
    Ok(100.0 * wrong as f64 / minors as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// Model A correct, model B wrong.
    pub b: usize,
    /// Model A wrong, model B correct.
    pub c: usize,
    pub p_value: f64,
    pub significant_at_95: bool,
}

/// Exact two-sided McNemar test on paired correctness flags.
pub fn mcnemar_test(correct_a: &[bool], correct_b: &[bool]) -> Result<McNemarResult> {
    if correct_a.len() != correct_b.len() {
        return Err(Error::Consistency(format!(
            "model A has {} outcomes, model B has {}",
            correct_a.len(),
            correct_b.len()
        )));
    }
    if correct_a.is_empty() {
        return Err(Error::EmptyInput("mcnemar_test"));
    }
    let b = correct_a.iter().zip(correct_b).filter(|(&a, &b)| a && !b).count();
    let c = correct_a.iter().zip(correct_b).filter(|(&a, &b)| !a && b).count();
    let p_value = mcnemar_exact_p(b, c);
    Ok(McNemarResult {
        b,
        c,
        p_value,
        significant_at_95: p_value < 0.05,
    })
}

/// `min(1, 2 · P(X ≤ min(b, c)))` for `X ~ Binomial(b + c, 1/2)`, summed in
/// log space so large discordant counts do not underflow.
pub fn mcnemar_exact_p(b: usize, c: usize) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    let ln2 = std::f64::consts::LN_2;
    let mut log_terms = Vec::with_capacity(k + 1);
    let mut log_choose = 0.0;
    for i in 0..=k {
        if i > 0 {
            log_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        log_terms.push(log_choose - n as f64 * ln2);
    }
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail = max.exp() * log_terms.iter().map(|t| (t - max).exp()).sum::<f64>();
    (2.0 * tail).min(1.0)
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fraction of rows whose feature is strictly closer (ℓ2) to its own
/// class mean than to the other class mean.
pub fn mean_proximity(features: &Matrix, labels: &[u8], means: &ClassMeans) -> Result<f64> {
    if features.rows() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if features.rows() == 0 {
        return Err(Error::EmptyInput("mean_proximity"));
    }
    if means.minor.cols() != features.cols() || means.adult.cols() != features.cols() {
        return Err(Error::Shape {
            op: "mean_proximity",
            left: features.shape(),
            right: means.minor.shape(),
        });
    }
    let closer = features
        .iter_rows()
        .zip(labels)
        .filter(|(f, &y)| {
            let own = dist_sq(f, means.for_class(y).row(0));
            let other = dist_sq(f, means.for_class(1 - y.min(1)).row(0));
            own < other
        })
        .count();
    Ok(closer as f64 / labels.len() as f64)
}

/// Mean squared distance of each feature to its own class mean, divided by
/// the squared distance between the two class means. Means are taken over
/// the given rows.
pub fn compactness_ratio(features: &Matrix, labels: &[u8]) -> Result<f64> {
    if features.rows() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    check_labels(labels, "compactness ratio")?;
    let d = features.cols();
    let mut sums = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for (row, &y) in features.iter_rows().zip(labels) {
        counts[y as usize] += 1;
        for (s, v) in sums[y as usize].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n as f64);
    }
    let within: f64 = features
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| dist_sq(row, &sums[y as usize]))
        .sum::<f64>()
        / labels.len() as f64;
    let between = dist_sq(&sums[0], &sums[1]);
    if between == 0.0 {
        return Err(Error::UndefinedRate("class means coincide"));
    }
    Ok(within / between)
}

impl EvalReport {
    /// Flat `key=value` report, percentages at two decimals.
    pub fn to_report_text(&self) -> String {
        let c = &self.confusion;
        let mut out = String::new();
        let _ = writeln!(out, "samples={}", c.total());
        let _ = writeln!(out, "confusion_minor_as_minor={}", c.minor_as_minor);
        let _ = writeln!(out, "confusion_minor_as_adult={}", c.minor_as_adult);
        let _ = writeln!(out, "confusion_adult_as_minor={}", c.adult_as_minor);
        let _ = writeln!(out, "confusion_adult_as_adult={}", c.adult_as_adult);
        let _ = writeln!(out, "acc_minor={}", display2(self.acc_minor));
        let _ = writeln!(out, "acc_adult={}", display2(self.acc_adult));
        let _ = writeln!(out, "mean_accuracy={}", display2(self.mean_accuracy));
        let _ = writeln!(
            out,
            "minor_misclassification_rate={}",
            display2(self.minor_misclassification_rate)
        );
        let _ = writeln!(out, "auc={:.4}", self.auc);
        if let Some(m) = &self.mcnemar {
            let _ = writeln!(out, "mcnemar_b={}", m.b);
            let _ = writeln!(out, "mcnemar_c={}", m.c);
            let _ = writeln!(out, "mcnemar_p_value={}", m.p_value);
            let _ = writeln!(out, "mcnemar_significant_at_95={}", m.significant_at_95);
        }
        out
    }

    /// ROC points as CSV with a `threshold,fpr,tpr` header.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.roc {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exact two-sided binomial tail with integer arithmetic.
    fn exact_p_oracle(b: usize, c: usize) -> f64 {
        let n = b + c;
        if n == 0 {
            return 1.0;
        }
        let k = b.min(c);
        let mut total: u128 = 0;
        let mut choose: u128 = 1;
        for i in 0..=k {
            if i > 0 {
                choose = choose * (n - i + 1) as u128 / i as u128;
            }
            total += choose;
        }
        (2.0 * total as f64 / 2f64.powi(n as i32)).min(1.0)
    }

    #[test]
    fn mcnemar_closed_forms() {
        assert_eq!(mcnemar_exact_p(5, 5), 1.0);
        assert_eq!(mcnemar_exact_p(0, 0), 1.0);
        assert!((mcnemar_exact_p(10, 0) - 2.0 * 0.5f64.powi(10)).abs() < 1e-12);
        for (b, c) in [(3, 7), (1, 12), (20, 9), (0, 30), (15, 15)] {
            assert!((mcnemar_exact_p(b, c) - exact_p_oracle(b, c)).abs() < 1e-12, "{b},{c}");
        }
        // large counts stay finite and tiny
        let p = mcnemar_exact_p(3000, 2000);
        assert!(p > 0.0 && p < 1e-30, "{p}");
    }

    #[test]
    fn mcnemar_agrees_with_simulation() {
        const DRAWS: usize = 1_000_000;
        let mut rng = crate::linalg::Rng::new(17);
        for _ in 0..4 {
            let n = 1 + rng.below(30);
            let b = rng.below(n + 1);
            let c = n - b;
            let k = b.min(c) as u32;
            let mask = (1u64 << n) - 1;
            let hits = (0..DRAWS)
                .filter(|_| {
                    let x = (rng.next_u64() & mask).count_ones();
                    x.min(n as u32 - x) <= k
                })
                .count();
            let estimate = hits as f64 / DRAWS as f64;
            let exact = mcnemar_exact_p(b, c);
            let se = (exact * (1.0 - exact) / DRAWS as f64).sqrt().max(1e-9);
            assert!((estimate - exact).abs() <= 3.0 * se, "b={b} c={c} exact {exact} simulated {estimate}");
        }
    }

    #[test]
    fn mcnemar_counts_and_errors() {
        let a = [true, true, false, false, true];
        let b = [true, false, true, false, false];
        let r = mcnemar_test(&a, &b).unwrap();
        assert_eq!((r.b, r.c), (2, 1));
        assert!(!r.significant_at_95);
        assert!(matches!(mcnemar_test(&a, &b[..4]), Err(Error::Consistency(_))));

        let same = mcnemar_test(&a, &a).unwrap();
        assert_eq!((same.b, same.c, same.p_value), (0, 0, 1.0));
    }

    #[test]
    fn accuracy_arithmetic() {
        let mean = mean_class_accuracy(93.52, 90.65);
        assert!((mean - 92.085).abs() < 1e-12);
        assert_eq!(display2(mean), "92.09");
        assert_eq!(display2(9.35), "9.35");
        assert_eq!(display2(100.0), "100.00");
    }

    #[test]
    fn evaluate_cases() {
        let labels = [0, 0, 1, 1];
        let r = evaluate(&labels, &[0.1, 0.2, 0.8, 0.9], &labels).unwrap();
        assert_eq!(r.mean_accuracy, 100.0);
        assert_eq!(r.minor_misclassification_rate, 0.0);
        assert_eq!(r.auc, 1.0);

        let r = evaluate(&[1, 1, 1, 1], &[0.5; 4], &labels).unwrap();
        assert_eq!(r.mean_accuracy, 50.0);
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.confusion.total(), 4);

        assert!(matches!(evaluate(&[0, 0], &[0.1, 0.2], &[0, 0]), Err(Error::DegenerateLabels(_))));
        assert!(matches!(evaluate(&[0], &[0.1, 0.2], &[0, 1]), Err(Error::Consistency(_))));
    }

    #[test]
    fn published_confusion_row() {
        // 10,000 minors of which 935 predicted adult
        let mut labels = vec![0u8; 10_000];
        labels.extend(vec![1u8; 10_000]);
        let mut preds = vec![0u8; 10_000];
        preds[..935].iter_mut().for_each(|p| *p = 1);
        let mut adult_preds = vec![1u8; 10_000];
        adult_preds[..648].iter_mut().for_each(|p| *p = 0);
        preds.extend(adult_preds);
        let scores: Vec<f64> = preds.iter().map(|&p| p as f64).collect();
        let r = evaluate(&preds, &scores, &labels).unwrap();
        assert_eq!(display2(r.minor_misclassification_rate), "9.35");
        assert_eq!(display2(r.acc_minor), "90.65");
        assert_eq!(display2(r.acc_adult), "93.52");
        assert_eq!(display2(r.mean_accuracy), "92.09");
    }

    #[test]
    fn misclassification_rate_matches_count() {
        let labels = [0, 0, 0, 1, 0, 1, 0];
        let preds = [1, 0, 1, 1, 0, 0, 0];
        let oracle = 100.0 * 2.0 / 5.0;
        assert_eq!(minor_misclassification_rate(&preds, &labels).unwrap(), oracle);
        assert_eq!(minor_misclassification_rate(&labels, &labels).unwrap(), 0.0);
        assert!(matches!(
            minor_misclassification_rate(&[1, 1], &[1, 1]),
            Err(Error::UndefinedRate(_))
        ));
    }

    #[test]
    fn report_text_and_csv() {
        let labels = [0, 1, 0, 1];
        let r = evaluate(&[0, 1, 1, 1], &[0.2, 0.9, 0.6, 0.7], &labels).unwrap();
        let text = r.to_report_text();
        assert!(text.contains("mean_accuracy=75.00\n"), "{text}");
        assert!(text.contains("confusion_minor_as_adult=1\n"));
        let csv = r.roc_csv();
        assert!(csv.starts_with("threshold,fpr,tpr\n"));
        assert_eq!(csv.lines().count(), 1 + r.roc.len());
    }

    #[test]
    fn proximity_and_compactness() {
        let f = Matrix::from_rows(&[[0.0, 0.0], [0.2, 0.0], [1.0, 1.0], [0.9, 1.0]]).unwrap();
        let labels = [0, 0, 1, 1];
        let means = ClassMeans {
            minor: Matrix::row_vector(&[0.1, 0.0]).unwrap(),
            adult: Matrix::row_vector(&[0.95, 1.0]).unwrap(),
        };
        assert_eq!(mean_proximity(&f, &labels, &means).unwrap(), 1.0);
        let swapped = ClassMeans {
            minor: means.adult.clone(),
            adult: means.minor.clone(),
        };
        assert_eq!(mean_proximity(&f, &labels, &swapped).unwrap(), 0.0);

        // within: every point is 0.1 or 0.05 from its mean
        let within = (0.01 + 0.01 + 0.0025 + 0.0025) / 4.0;
        let between = 0.85f64.powi(2) + 1.0;
        let r = compactness_ratio(&f, &labels).unwrap();
        assert!((r - within / between).abs() < 1e-12);
    }

    fn arb_eval() -> impl Strategy<Value = (Vec<u8>, Vec<f64>, Vec<u8>)> {
        (4usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..2, n),
                proptest::collection::vec(0.0f64..1.0, n),
                proptest::collection::vec(0u8..2, n - 2),
            )
                .prop_map(|(p, s, mut y)| {
                    y.push(0);
                    y.push(1);
                    (p, s, y)
                })
        })
    }

    proptest! {
        #[test]
        fn evaluate_is_permutation_invariant((p, s, y) in arb_eval(), seed in any::<u64>()) {
            let base = evaluate(&p, &s, &y).unwrap();
            let mut idx: Vec<usize> = (0..y.len()).collect();
            crate::linalg::Rng::new(seed).shuffle(&mut idx);
            let pp: Vec<u8> = idx.iter().map(|&i| p[i]).collect();
            let ss: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            let yy: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
            let perm = evaluate(&pp, &ss, &yy).unwrap();
            prop_assert_eq!(base, perm);
        }

        #[test]
        fn roc_is_monotone((_p, s, y) in arb_eval()) {
            let roc = roc_curve(&s, &y).unwrap();
            prop_assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
            let last = roc[roc.len() - 1];
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            for w in roc.windows(2) {
                prop_assert!(w[1].threshold < w[0].threshold);
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            let auc = roc_auc(&roc);
            prop_assert!((0.0..=1.0).contains(&auc));
        }

        #[test]
        fn mean_accuracy_is_exact_average((p, s, y) in arb_eval()) {
            let r = evaluate(&p, &s, &y).unwrap();
            prop_assert_eq!(r.mean_accuracy, (r.acc_minor + r.acc_adult) / 2.0);
            prop_assert_eq!(r.confusion.total(), y.len());
        }

        #[test]
        fn mcnemar_is_symmetric(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
            let a: Vec<bool> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let ab = mcnemar_test(&a, &b).unwrap();
            let ba = mcnemar_test(&b, &a).unwrap();
            prop_assert_eq!(ab.p_value, ba.p_value);
            prop_assert_eq!((ab.b, ab.c), (ba.c, ba.b));
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
            prop_assert_eq!(ab.significant_at_95, ab.p_value < 0.05);
        }
    }
}
