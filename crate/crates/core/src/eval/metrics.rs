use std::time::Instant;

use crate::geometry::{GeometryError, Scene};
use crate::io::VisibilityTestSet;
use crate::odf::{OdfError, VisibilityPredictor};

use super::EvalError;

/// Confusion counts with "visible" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// F1 straight from the counts, `2TP / (2TP + FP + FN)`.
    pub fn f1_from_counts(&self) -> Option<f64> {
        let den = 2 * self.tp + self.fp + self.fn_;
        (self.tp > 0).then(|| 2.0 * self.tp as f64 / den as f64)
    }
}

/// Classification quality of one predictor on one test set. Precision,
/// recall and F1 are `None` where their denominators vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub params: Option<u64>,
    pub time_mean_us: Option<f64>,
    pub time_std_us: Option<f64>,
}

impl MetricsReport {
    pub fn from_confusion(label: impl Into<String>, c: Confusion) -> Result<Self, EvalError> {
        if c.total() == 0 {
            return Err(EvalError::Empty);
        }
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Ok(MetricsReport {
            label: label.into(),
            confusion: c,
            accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
            precision,
            recall,
            f1,
            params: None,
            time_mean_us: None,
            time_std_us: None,
        })
    }
}

pub fn classify_metrics(predictions: &[bool], labels: &[bool]) -> Result<MetricsReport, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut c = Confusion::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        c.add(p, l);
    }
    MetricsReport::from_confusion("", c)
}

/// Runs every test pair through `predictor` one at a time on the calling
/// thread, recording per-query wall time.
pub fn evaluate<P: VisibilityPredictor + ?Sized>(
    label: &str,
    predictor: &P,
    tests: &VisibilityTestSet,
) -> Result<MetricsReport, EvalError> {
    if tests.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = Confusion::default();
    let mut times = Vec::with_capacity(tests.len());
    for pair in &tests.pairs {
        let (s, t) = (pair.source.as_dvec3(), pair.target.as_dvec3());
        let start = Instant::now();
        let pred = std::hint::black_box(predictor.predict_visibility(s, t))?;
        times.push(start.elapsed().as_secs_f64() * 1e6);
        c.add(pred, pair.visible);
    }
    let mut report = MetricsReport::from_confusion(label, c)?;
    let (mean, std) = mean_std(&times);
    report.time_mean_us = Some(mean);
    report.time_std_us = Some(std);
    Ok(report)
}

pub(crate) fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// The raycast ground truth behind the same interface as a trained atlas.
pub struct OraclePredictor<'a> {
    pub scene: &'a Scene,
    pub clamp: f64,
}

impl VisibilityPredictor for OraclePredictor<'_> {
    fn predict_visibility(&self, s: crate::DVec3, t: crate::DVec3) -> Result<bool, OdfError> {
        if s.distance(t) > self.clamp {
            return Ok(false);
        }
        self.scene.oracle_visibility(s, t).map_err(|e| match e {
            GeometryError::DegeneratePair => OdfError::DegeneratePair,
            other => OdfError::DataIntegrity(other.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn confusion(tp: u64, fp: u64, fn_: u64, tn: u64) -> Confusion {
        Confusion { tp, fp, fn_, tn }
    }

    #[test]
    fn worked_example() {
        let m = MetricsReport::from_confusion("x", confusion(2, 1, 1, 6)).unwrap();
        assert!((m.accuracy - 0.8).abs() < 1e-15);
        assert!((m.precision.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_correct_and_undefined() {
        let m = classify_metrics(&[true, false, true], &[true, false, true]).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, Some(1.0), Some(1.0), Some(1.0))
        );
        let m = classify_metrics(&[false, false], &[false, false]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!((m.precision, m.recall, m.f1), (None, None, None));
        assert!(matches!(classify_metrics(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(
            classify_metrics(&[true], &[]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn f1_two_ways() {
        for (tp, fp, fn_, tn) in [(5, 3, 2, 9), (1, 0, 7, 0), (40, 11, 13, 2), (3, 3, 3, 3)] {
            let c = confusion(tp, fp, fn_, tn);
            let m = MetricsReport::from_confusion("", c).unwrap();
            assert!((m.f1.unwrap() - c.f1_from_counts().unwrap()).abs() < 1e-12);
        }
    }
}
