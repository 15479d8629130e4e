use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::domain::Direction;
use crate::Metric;

/// Binary confusion matrix with `up` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    /// Adds one scored day. An abstention counts as wrong: a missed `up` is
    /// a false negative, a missed `down` a false positive.
    pub fn record(&mut self, predicted: Option<Direction>, truth: Direction) {
        match (predicted, truth) {
            (Some(Direction::Up), Direction::Up) => self.tp += 1,
            (Some(Direction::Down), Direction::Down) => self.tn += 1,
            (Some(Direction::Up), Direction::Down) | (None, Direction::Down) => self.fp += 1,
            (Some(Direction::Down), Direction::Up) | (None, Direction::Up) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix::new(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

/// `(TP+TN) / total`; 0 for an empty matrix.
pub fn accuracy(cm: &ConfusionMatrix) -> Metric {
    if cm.total() == 0 {
        return 0.0;
    }
    (cm.tp + cm.tn) as f64 / cm.total() as f64
}

/// Matthews correlation coefficient; 0 when any marginal is zero.
/// The result is the `f64` nearest to the exact value: numerator and
/// denominator product are exact integers, and the float estimate is
/// corrected by exact comparison against the neighbouring midpoints.
pub fn compute_mcc(cm: &ConfusionMatrix) -> Metric {
    let (tp, tn, fp, fn_) = (cm.tp as i128, cm.tn as i128, cm.fp as i128, cm.fn_ as i128);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0 {
        return 0.0;
    }
    let num = tp * tn - fp * fn_;
    let estimate = num as f64 / (den as f64).sqrt();
    nearest_to_sqrt_ratio(num, den, estimate)
}

/// Nearest `f64` to `num / sqrt(den)`, starting from an estimate within a
/// few ulps. `den > 0`.
fn nearest_to_sqrt_ratio(num: i128, den: i128, estimate: f64) -> f64 {
    if num == 0 {
        return 0.0;
    }
    // |v|^2 = num^2 / den; a midpoint m lies above |v| iff m^2 > |v|^2
    let target = BigRational::new(BigInt::from(num) * BigInt::from(num), BigInt::from(den));
    let exact = |q: f64| BigRational::from_float(q).expect("finite");
    let mid_above = |a: f64, b: f64| {
        let m = (exact(a) + exact(b)) / BigInt::from(2);
        &m * &m > target
    };
    let mut x = estimate.abs();
    loop {
        if x > 0.0 && mid_above(x.next_down(), x) {
            x = x.next_down();
        } else if !mid_above(x, x.next_up()) {
            x = x.next_up();
        } else {
            break;
        }
    }
    if num < 0 { -x } else { x }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanyMetrics {
    pub acc: Metric,
    pub mcc: Metric,
    pub confusion: ConfusionMatrix,
    pub abstentions: u64,
    /// Test days skipped for scoring because the realized move was flat.
    pub flat_days: u64,
}

impl CompanyMetrics {
    pub fn from_counts(confusion: ConfusionMatrix, abstentions: u64, flat_days: u64) -> Self {
        CompanyMetrics { acc: accuracy(&confusion), mcc: compute_mcc(&confusion), confusion, abstentions, flat_days }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_company: BTreeMap<String, CompanyMetrics>,
    /// Mean of the per-company values.
    pub average_acc: Metric,
    pub average_mcc: Metric,
    /// Pooled over companies.
    pub confusion: ConfusionMatrix,
    pub abstentions: u64,
}

impl MetricsReport {
    pub fn from_companies(per_company: BTreeMap<String, CompanyMetrics>) -> Self {
        let n = per_company.len().max(1) as f64;
        let average_acc = per_company.values().map(|m| m.acc).sum::<f64>() / n;
        let average_mcc = per_company.values().map(|m| m.mcc).sum::<f64>() / n;
        let confusion = per_company.values().fold(ConfusionMatrix::default(), |acc, m| acc.merge(&m.confusion));
        let abstentions = per_company.values().map(|m| m.abstentions).sum();
        MetricsReport { per_company, average_acc, average_mcc, confusion, abstentions }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table for terminals.
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<12} {:>7} {:>8} {:>5} {:>5} {:>5} {:>5} {:>6}\n", "company", "ACC", "MCC", "TP", "TN", "FP", "FN", "abst");
        let row = |name: &str, acc: f64, mcc: f64, cm: &ConfusionMatrix, ab: u64| {
            format!("{:<12} {:>7.4} {:>8.4} {:>5} {:>5} {:>5} {:>5} {:>6}\n", name, acc, mcc, cm.tp, cm.tn, cm.fp, cm.fn_, ab)
        };
        for (c, m) in &self.per_company {
            out.push_str(&row(c, m.acc, m.mcc, &m.confusion, m.abstentions));
        }
        out.push_str(&row("average", self.average_acc, self.average_mcc, &self.confusion, self.abstentions));
        out
    }
}
