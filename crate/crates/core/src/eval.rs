//! Detection metrics. The positive class is "anomaly" (label 1) everywhere.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::detector::nearest_rank_index;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, prediction: u8, truth: u8) {
        match (prediction == 1, truth == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

pub fn confusion(predictions: &[u8], truths: &[u8]) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() {
        return Err(Error::dim(truths.len(), predictions.len(), "predictions vs truths"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        c.record(p, t);
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// (precision, recall, F1), each 0 when its denominator vanishes.
pub fn prf1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// (accuracy, false positive rate); FPR is 0 when there are no negatives.
pub fn accuracy_fpr(c: &ConfusionCounts) -> (f64, f64) {
    (ratio(c.tp + c.tn, c.total()), ratio(c.fp, c.fp + c.tn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (FPR, TPR), from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve from a sweep over every distinct score, highest first. Items with
/// equal scores enter together, so ties contribute a diagonal segment.
pub fn roc_auc(scores: &[f64], truths: &[u8]) -> Result<RocCurve> {
    if scores.len() != truths.len() {
        return Err(Error::dim(truths.len(), scores.len(), "scores vs truths"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let pos = truths.iter().filter(|&&t| t == 1).count();
    let neg = truths.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(format!(
            "AUC needs both classes ({pos} positives, {neg} negatives)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if truths[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // trapezoid in count space, normalized once at the end
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 * 0.5;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve {
        points,
        auc: auc / (pos as f64 * neg as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub mean: f64,
}

/// Nearest-rank percentiles of per-window processing times.
pub fn latency_stats(samples: &[f64]) -> Result<LatencyStats> {
    if samples.is_empty() {
        return Err(Error::Parameter("latency statistics need at least one sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pick = |q: f64| sorted[nearest_rank_index(sorted.len(), q)];
    Ok(LatencyStats {
        count: sorted.len(),
        p50: pick(0.50),
        p95: pick(0.95),
        p99: pick(0.99),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let c = confusion(&[1; 5], &[1; 5]).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (5, 0, 0, 0));
        let c = confusion(&[0; 4], &[1; 4]).unwrap();
        assert_eq!(c.fn_, 4);
        let c = confusion(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1]).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 1, 1));
        assert!(confusion(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn prf1_examples() {
        let c = ConfusionCounts { tp: 3, fp: 1, tn: 0, fn_: 1 };
        assert_eq!(prf1(&c), (0.75, 0.75, 0.75));
        let c = ConfusionCounts { tp: 4, fp: 0, tn: 9, fn_: 0 };
        assert_eq!(prf1(&c), (1.0, 1.0, 1.0));
        assert_eq!(prf1(&ConfusionCounts::default()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn accuracy_examples() {
        let perfect = ConfusionCounts { tp: 3, fp: 0, tn: 5, fn_: 0 };
        assert_eq!(accuracy_fpr(&perfect), (1.0, 0.0));
        let half = ConfusionCounts { tp: 0, fp: 2, tn: 2, fn_: 0 };
        assert_eq!(accuracy_fpr(&half).1, 0.5);
        let c = ConfusionCounts { tp: 2, fp: 1, tn: 1, fn_: 1 };
        assert_eq!(accuracy_fpr(&c), (0.6, 0.5));
    }

    #[test]
    fn auc_examples() {
        let r = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r.auc, 1.0);
        let r = roc_auc(&[0.5; 6], &[1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        let r = roc_auc(&[0.9, 0.4, 0.5, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r.auc, 0.75);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::Undefined(_))));
    }

    #[test]
    fn latency_examples() {
        let s = latency_stats(&[7.0]).unwrap();
        assert_eq!((s.p50, s.p95, s.p99, s.mean), (7.0, 7.0, 7.0, 7.0));
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = latency_stats(&xs).unwrap();
        assert_eq!((s.p50, s.p95, s.p99), (50.0, 95.0, 99.0));
        let s = latency_stats(&[3.0; 9]).unwrap();
        assert_eq!((s.p50, s.p99, s.mean), (3.0, 3.0, 3.0));
        assert!(latency_stats(&[]).is_err());
    }

    #[test]
    fn counts_merge() {
        let a = ConfusionCounts { tp: 1, fp: 2, tn: 3, fn_: 4 };
        let b = ConfusionCounts { tp: 10, fp: 20, tn: 30, fn_: 40 };
        assert_eq!(a + b, ConfusionCounts { tp: 11, fp: 22, tn: 33, fn_: 44 });
    }
}
