use serde::{Deserialize, Serialize};

use super::{FusionModel, Mode};
use crate::connectivity::WindowTensor;
use crate::error::{Error, Result};
use crate::signal_io::Label;

/// Confusion counts with the positive class = seizure. A ratio whose
/// denominator is zero is reported as 0 and named in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub undefined: Vec<String>,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Metrics {
        let mut undefined = Vec::new();
        let mut ratio = |name: &str, num: usize, den: usize| {
            if den == 0 {
                undefined.push(name.to_string());
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let sensitivity = ratio("sensitivity", tp, tp + fn_);
        let specificity = ratio("specificity", tn, tn + fp);
        let precision = ratio("precision", tp, tp + fp);
        let accuracy = ratio("accuracy", tp + tn, tp + tn + fp + fn_);
        Metrics {
            tp,
            fp,
            fn_,
            tn,
            sensitivity,
            specificity,
            precision,
            accuracy,
            undefined,
        }
    }

    pub fn is_undefined(&self, name: &str) -> bool {
        self.undefined.iter().any(|n| n == name)
    }
}

/// Eval-mode seizure probabilities, in dataset order.
pub fn predict(model: &FusionModel, ds: &[WindowTensor]) -> Result<Vec<f64>> {
    ds.iter().map(|t| model.forward(t, Mode::Eval)).collect()
}

/// Predicts seizure when the probability is at least `threshold`.
pub fn evaluate(model: &FusionModel, ds: &[WindowTensor], threshold: f64) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probs = predict(model, ds)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (t, p) in ds.iter().zip(probs) {
        match (p >= threshold, t.label) {
            (true, Label::Seizure) => tp += 1,
            (true, Label::NonSeizure) => fp += 1,
            (false, Label::Seizure) => fn_ += 1,
            (false, Label::NonSeizure) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_, tn))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_confusion_matrices() {
        let m = Metrics::from_counts(5, 0, 0, 5);
        assert_eq!([m.sensitivity, m.specificity, m.precision, m.accuracy], [1.0; 4]);
        assert!(m.undefined.is_empty());

        let m = Metrics::from_counts(3, 2, 1, 4);
        assert_eq!(m.sensitivity, 0.75);
        assert!((m.specificity - 0.6667).abs() < 5e-5);
        assert_eq!(m.precision, 0.6);
        assert_eq!(m.accuracy, 0.7);

        let m = Metrics::from_counts(0, 0, 4, 6);
        assert_eq!(m.precision, 0.0);
        assert!(m.is_undefined("precision"));
        assert!(!m.is_undefined("sensitivity"));
    }

    #[test]
    fn empty_dataset_rejected() {
        let model = FusionModel::build(&crate::model::tests::tiny(2)).unwrap();
        assert!(matches!(evaluate(&model, &[], 0.5), Err(Error::EmptyDataset)));
    }
}
