//! Categorical verification scores. Any score whose denominator is zero is
//! `None` ("undefined") rather than a silently substituted number.

use crate::aqi::AqiClass;
use crate::error::{Error, Result};

pub const N_CLASSES: usize = 4;

/// Event (positive = Bad or VeryBad) contingency table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionBinary {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionBinary {
    pub fn add(&mut self, truth: bool, pred: bool) {
        match (truth, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&mut self, o: &Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Four-class table, `counts[truth][pred]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMulti {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMulti {
    pub fn add(&mut self, truth: AqiClass, pred: AqiClass) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn merge(&mut self, o: &Self) {
        for i in 0..N_CLASSES {
            for j in 0..N_CLASSES {
                self.counts[i][j] += o.counts[i][j];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Collapses to the event table (classes Bad and VeryBad are events).
    pub fn binary(&self) -> ConfusionBinary {
        let mut b = ConfusionBinary::default();
        for (i, row) in self.counts.iter().enumerate() {
            for (j, n) in row.iter().enumerate() {
                let t = i >= AqiClass::Bad.index();
                let p = j >= AqiClass::Bad.index();
                match (t, p) {
                    (true, true) => b.tp += n,
                    (false, true) => b.fp += n,
                    (true, false) => b.fn_ += n,
                    (false, false) => b.tn += n,
                }
            }
        }
        b
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub acc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub far: Option<f64>,
    pub csi: Option<f64>,
    pub bias: Option<f64>,
}

impl BinaryMetrics {
    pub const NAMES: [&'static str; 7] = ["acc", "precision", "recall", "f1", "far", "csi", "bias"];

    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.acc,
            self.precision,
            self.recall,
            self.f1,
            self.far,
            self.csi,
            self.bias,
        ]
    }
}

/// FAR here is the false-alarm rate FP / (FP + TN).
pub fn binary_metrics(c: &ConfusionBinary) -> Result<BinaryMetrics> {
    if c.total() == 0 {
        return Err(Error::InvalidInput("no scored pairs in confusion matrix".into()));
    }
    Ok(BinaryMetrics {
        acc: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        far: ratio(c.fp, c.fp + c.tn),
        csi: ratio(c.tp, c.tp + c.fp + c.fn_),
        bias: ratio(c.tp + c.fp, c.tp + c.fn_),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiMetrics {
    pub acc: Option<f64>,
    pub f1_macro: Option<f64>,
    pub f1_weighted: Option<f64>,
    pub f1_micro: Option<f64>,
    pub per_class_f1: [Option<f64>; N_CLASSES],
    pub per_class_csi: [Option<f64>; N_CLASSES],
    pub macro_csi: Option<f64>,
}

impl MultiMetrics {
    pub fn names() -> Vec<String> {
        let mut v: Vec<String> = ["aqi_acc", "f1_macro", "f1_weighted", "f1_micro", "macro_csi"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for c in AqiClass::ALL {
            v.push(format!("f1_{}", c.name()));
        }
        for c in AqiClass::ALL {
            v.push(format!("csi_{}", c.name()));
        }
        v
    }

    /// Values in the order of [`names`](Self::names).
    pub fn values(&self) -> Vec<Option<f64>> {
        let mut v = vec![self.acc, self.f1_macro, self.f1_weighted, self.f1_micro, self.macro_csi];
        v.extend(self.per_class_f1);
        v.extend(self.per_class_csi);
        v
    }
}

/// One-vs-rest scores per class; classes with undefined F1 or CSI count as
/// zero in the macro averages.
pub fn multiclass_metrics(c: &ConfusionMulti) -> Result<MultiMetrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::InvalidInput("no scored pairs in confusion matrix".into()));
    }
    let diag: u64 = (0..N_CLASSES).map(|i| c.counts[i][i]).sum();
    let mut per_class_f1 = [None; N_CLASSES];
    let mut per_class_csi = [None; N_CLASSES];
    let mut weighted = 0.0;
    for k in 0..N_CLASSES {
        let tp = c.counts[k][k];
        let support: u64 = c.counts[k].iter().sum();
        let predicted: u64 = (0..N_CLASSES).map(|i| c.counts[i][k]).sum();
        let fp = predicted - tp;
        let fn_ = support - tp;
        per_class_f1[k] = ratio(2 * tp, 2 * tp + fp + fn_);
        per_class_csi[k] = ratio(tp, tp + fp + fn_);
        weighted += support as f64 * per_class_f1[k].unwrap_or(0.0);
    }
    let mean = |v: &[Option<f64>; N_CLASSES]| {
        Some(v.iter().map(|x| x.unwrap_or(0.0)).sum::<f64>() / N_CLASSES as f64)
    };
    Ok(MultiMetrics {
        acc: ratio(diag, total),
        f1_macro: mean(&per_class_f1),
        f1_weighted: Some(weighted / total as f64),
        f1_micro: ratio(diag, total),
        per_class_f1,
        per_class_csi,
        macro_csi: mean(&per_class_csi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_binary_example() {
        let c = ConfusionBinary { tp: 10, fp: 5, fn_: 5, tn: 80 };
        let m = binary_metrics(&c).unwrap();
        assert!((m.far.unwrap() - 5.0 / 85.0).abs() < 1e-12);
        assert!((m.csi.unwrap() - 0.5).abs() < 1e-12);
        assert!((m.bias.unwrap() - 1.0).abs() < 1e-12);
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.acc.unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn undefined_scores() {
        let m = binary_metrics(&ConfusionBinary { tp: 0, fp: 0, fn_: 0, tn: 7 }).unwrap();
        assert_eq!(m.bias, None);
        assert_eq!(m.csi, None);
        assert_eq!(m.far, Some(0.0));
        assert!(binary_metrics(&ConfusionBinary::default()).is_err());
        assert!(multiclass_metrics(&ConfusionMulti::default()).is_err());
    }

    #[test]
    fn single_class_world() {
        let mut c = ConfusionMulti::default();
        for _ in 0..5 {
            c.add(AqiClass::Moderate, AqiClass::Moderate);
        }
        let m = multiclass_metrics(&c).unwrap();
        assert_eq!(m.acc, Some(1.0));
        assert_eq!(m.per_class_f1[1], Some(1.0));
        assert_eq!(m.per_class_f1[0], None);
        assert_eq!(m.f1_macro, Some(0.25));
        assert_eq!(m.f1_weighted, Some(1.0));
    }

    fn class_strategy() -> impl Strategy<Value = AqiClass> {
        (0usize..4).prop_map(|i| AqiClass::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn binary_collapse_matches_direct_count(
            pairs in proptest::collection::vec((class_strategy(), class_strategy()), 0..200)
        ) {
            let mut m = ConfusionMulti::default();
            let mut b = ConfusionBinary::default();
            for (t, p) in &pairs {
                m.add(*t, *p);
                b.add(crate::aqi::binarize(*t), crate::aqi::binarize(*p));
            }
            prop_assert_eq!(m.binary(), b);
            prop_assert_eq!(m.total(), pairs.len() as u64);
        }

        #[test]
        fn micro_f1_equals_accuracy(
            pairs in proptest::collection::vec((class_strategy(), class_strategy()), 1..200)
        ) {
            let mut m = ConfusionMulti::default();
            for (t, p) in &pairs {
                m.add(*t, *p);
            }
            let s = multiclass_metrics(&m).unwrap();
            prop_assert_eq!(s.f1_micro, s.acc);
            for v in s.values().into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
