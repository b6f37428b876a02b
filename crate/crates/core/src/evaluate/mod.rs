//! Classification metrics and the savings-versus-accuracy sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod savings;

pub use savings::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    TruePositive,
    FalsePositive,
    FalseNegative,
    TrueNegative,
}

impl Category {
    pub fn of(actual: f64, forecast: f64) -> Category {
        match (actual > 0.0, forecast > 0.0) {
            (true, true) => Category::TruePositive,
            (false, true) => Category::FalsePositive,
            (true, false) => Category::FalseNegative,
            (false, false) => Category::TrueNegative,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionBreakdown {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub categories: Vec<Category>,
}

impl ConfusionBreakdown {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Table 3 categories from actual demand `f` and forecast demand `f_hat`.
pub fn confusion(actual: &[f64], predicted: &[f64]) -> Result<ConfusionBreakdown> {
    if actual.len() != predicted.len() {
        return Err(Error::Argument(format!(
            "actual has {} entries, forecast {}",
            actual.len(),
            predicted.len()
        )));
    }
    let mut c = ConfusionBreakdown::default();
    for (&a, &p) in actual.iter().zip(predicted) {
        let cat = Category::of(a, p);
        match cat {
            Category::TruePositive => c.tp += 1,
            Category::FalsePositive => c.fp += 1,
            Category::FalseNegative => c.fn_ += 1,
            Category::TrueNegative => c.tn += 1,
        }
        c.categories.push(cat);
    }
    Ok(c)
}

/// Confusion of binarized scores (`score >= threshold`) against 0/1 labels.
pub fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionBreakdown> {
    let actual: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    let predicted: Vec<f64> = scores.iter().map(|&s| if s >= threshold { 1.0 } else { 0.0 }).collect();
    confusion(&actual, &predicted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Row {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::DegenerateData("no positive labels".into()));
    }
    Ok(positives)
}

/// Precision/recall at every distinct score, thresholds descending.
pub fn sweep(scores: &[f64], labels: &[u8]) -> Result<Vec<PrPoint>> {
    let positives = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Area under achievable PR points: the first point's rectangle down to
/// recall 0, then trapezoids between consecutive points.
pub fn pr_auc_of(points: &[PrPoint]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let mut auc = first.recall * first.precision;
    for w in points.windows(2) {
        auc += (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0;
    }
    auc.clamp(0.0, 1.0)
}

pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<PrCurve> {
    let points = sweep(scores, labels)?;
    let auc = pr_auc_of(&points);
    Ok(PrCurve { points, auc })
}

pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(pr_curve(scores, labels)?.auc)
}

pub fn f1_sweep(scores: &[f64], labels: &[u8]) -> Result<Vec<F1Row>> {
    Ok(sweep(scores, labels)?
        .into_iter()
        .map(|p| F1Row {
            threshold: p.threshold,
            precision: p.precision,
            recall: p.recall,
            f1: f1(p.precision, p.recall),
        })
        .collect())
}
