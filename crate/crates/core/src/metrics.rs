//! Sample-based precision, recall and F1.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sorted, de-duplicated label indices of one sample.
pub type LabelSet = Vec<usize>;

/// Labels whose probability strictly exceeds `theta`, per sample.
pub fn binarize(probs: &Tensor, theta: f64) -> Vec<LabelSet> {
    let cols = probs.cols();
    if cols == 0 {
        return vec![Vec::new(); probs.rows()];
    }
    probs
        .data()
        .chunks(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &p)| p > theta)
                .map(|(l, _)| l)
                .collect()
        })
        .collect()
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Precision, recall and F1 of a single sample from set sizes.
///
/// An empty prediction has precision 0; F1 is 0 when precision and recall
/// are both 0.
pub fn sample_prf(hits: usize, n_pred: usize, n_gold: usize) -> (f64, f64, f64) {
    let precision = if n_pred == 0 { 0.0 } else { hits as f64 / n_pred as f64 };
    let recall = if n_gold == 0 { 0.0 } else { hits as f64 / n_gold as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Mean per-sample precision, recall and F1 over sorted label sets.
pub fn sample_scores(pred: &[LabelSet], gold: &[LabelSet]) -> Result<SampleScores> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted sets vs {} gold sets",
            pred.len(),
            gold.len()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Ok(SampleScores {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        });
    }
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gold) {
        let (precision, recall, f1) = sample_prf(intersection_size(p, g), p.len(), g.len());
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }
    let n = n as f64;
    Ok(SampleScores {
        precision: p_sum / n,
        recall: r_sum / n,
        f1: f_sum / n,
    })
}

pub fn sample_f1(pred: &[LabelSet], gold: &[LabelSet]) -> Result<f64> {
    sample_scores(pred, gold).map(|s| s.f1)
}

/// Sample F1 of `probs` binarised at `theta`, without materialising the
/// predicted sets.
pub fn sample_f1_at(probs: &Tensor, gold: &[LabelSet], theta: f64) -> Result<f64> {
    let cols = probs.cols();
    if probs.rows() != gold.len() && !(probs.is_empty() && gold.is_empty()) {
        return Err(Error::Shape(format!(
            "{} prediction rows vs {} gold sets",
            probs.rows(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (r, g) in gold.iter().enumerate() {
        let row = &probs.data()[r * cols..(r + 1) * cols];
        let n_pred = row.iter().filter(|&&p| p > theta).count();
        let hits = g.iter().filter(|&&l| l < cols && row[l] > theta).count();
        total += sample_prf(hits, n_pred, g.len()).2;
    }
    Ok(total / gold.len() as f64)
}

/// Evaluation summary for one test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub sample_f1: f64,
    pub sample_precision: f64,
    pub sample_recall: f64,
    pub n: usize,
    pub theta: f64,
}

impl Report {
    pub fn from_predictions(probs: &Tensor, gold: &[LabelSet], theta: f64) -> Result<Self> {
        let pred = binarize(probs, theta);
        let scores = sample_scores(&pred, gold)?;
        Ok(Report {
            sample_f1: scores.f1,
            sample_precision: scores.precision,
            sample_recall: scores.recall,
            n: gold.len(),
            theta,
        })
    }

    /// Flat `key = value` block.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "theta = {:.6}", self.theta);
        let _ = writeln!(s, "sample_f1 = {:.6}", self.sample_f1);
        let _ = writeln!(s, "sample_precision = {:.6}", self.sample_precision);
        let _ = writeln!(s, "sample_recall = {:.6}", self.sample_recall);
        s
    }

    /// `n_test,theta,sample_f1,precision,recall`
    pub fn csv_fields(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.n, self.theta, self.sample_f1, self.sample_precision, self.sample_recall
        )
    }
}

/// Evaluates a trained model on encoded test inputs.
pub fn evaluate(
    trained: &crate::training::TrainedModel,
    inputs: &crate::models::Inputs,
    gold: &[LabelSet],
) -> Result<Report> {
    let probs = trained.model.predict_proba(inputs)?;
    Report::from_predictions(&probs, gold, trained.theta)
}
