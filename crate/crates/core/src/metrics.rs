// SPDX-License-Identifier: MIT OR Apache-2.0

//! Agreement between a predicted and an annotated segmentation.
//!
//! Counts (`k`, annotation error) include the artificial final change point
//! at `n`. Meantime, precision and recall are taken over the intermediate
//! points only, so that an always-correct endpoint does not inflate them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::ChangePointSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("prediction is for n={pred} but truth is for n={truth}")]
    MismatchedLength { pred: usize, truth: usize },
}

fn same_length(pred: &ChangePointSet, truth: &ChangePointSet) -> Result<(), MetricsError> {
    if pred.n() == truth.n() {
        Ok(())
    } else {
        Err(MetricsError::MismatchedLength {
            pred: pred.n(),
            truth: truth.n(),
        })
    }
}

/// `|K_pred - K_true|`.
pub fn annotation_error(
    pred: &ChangePointSet,
    truth: &ChangePointSet,
) -> Result<usize, MetricsError> {
    same_length(pred, truth)?;
    Ok(pred.k().abs_diff(truth.k()))
}

/// Mean distance from each predicted point to its nearest true point.
/// Zero when `pred` is empty.
pub fn meantime_points(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() || truth.is_empty() {
        return 0.0;
    }
    let total: usize = pred
        .iter()
        .map(|&p| truth.iter().map(|&t| p.abs_diff(t)).min().unwrap_or(0))
        .sum();
    total as f64 / pred.len() as f64
}

/// Meantime in time steps over the intermediate predictions; the nearest
/// true point may be the final one at `n`.
pub fn meantime(pred: &ChangePointSet, truth: &ChangePointSet) -> f64 {
    let mut reference = truth.intermediate().to_vec();
    reference.push(truth.n());
    meantime_points(pred.intermediate(), &reference)
}

/// True positives: true points with a prediction strictly closer than
/// `margin`.
pub fn true_positives(pred: &[usize], truth: &[usize], margin: usize) -> usize {
    truth
        .iter()
        .filter(|&&t| pred.iter().any(|&p| p.abs_diff(t) < margin))
        .count()
}

/// `(precision, recall)` on raw point sets. An empty prediction has
/// precision 0; two empty sets agree perfectly.
pub fn precision_recall_points(pred: &[usize], truth: &[usize], margin: usize) -> (f64, f64) {
    if pred.is_empty() && truth.is_empty() {
        return (1.0, 1.0);
    }
    let tp = true_positives(pred, truth, margin) as f64;
    let precision = if pred.is_empty() {
        0.0
    } else {
        tp / pred.len() as f64
    };
    let recall = if truth.is_empty() {
        0.0
    } else {
        tp / truth.len() as f64
    };
    (precision.min(1.0), recall)
}

pub fn precision_recall(
    pred: &ChangePointSet,
    truth: &ChangePointSet,
    margin: usize,
) -> (f64, f64) {
    precision_recall_points(pred.intermediate(), truth.intermediate(), margin)
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn pairs(len: usize) -> u128 {
    let l = len as u128;
    l * l.saturating_sub(1) / 2
}

/// Rand index: the fraction of sample pairs on which both segmentations
/// agree (same segment in both, or different segments in both). Linear in
/// the number of change points.
pub fn rand_index(pred: &ChangePointSet, truth: &ChangePointSet) -> Result<f64, MetricsError> {
    same_length(pred, truth)?;
    let n = pred.n();
    let total = pairs(n);
    if total == 0 {
        return Ok(1.0);
    }
    let same_pred: u128 = pred.segments().map(|(a, b)| pairs(b - a)).sum();
    let same_truth: u128 = truth.segments().map(|(a, b)| pairs(b - a)).sum();

    // segments of the common refinement
    let mut same_both = 0u128;
    let (pb, tb) = (pred.boundaries(), truth.boundaries());
    let (mut i, mut j) = (1, 1);
    let mut start = 0;
    while i < pb.len() && j < tb.len() {
        let end = pb[i].min(tb[j]);
        same_both += pairs(end - start);
        start = end;
        if pb[i] == end {
            i += 1;
        }
        if tb[j] == end {
            j += 1;
        }
    }
    let agree = total + 2 * same_both - same_pred - same_truth;
    Ok(agree as f64 / total as f64)
}

/// How the precision/recall acceptance radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginRule {
    /// Fixed radius in samples.
    Samples(usize),
    /// Percentage of the series length, rounded to the nearest sample.
    Percent(f64),
}

impl MarginRule {
    pub fn margin(&self, n: usize) -> usize {
        match *self {
            MarginRule::Samples(m) => m,
            MarginRule::Percent(p) => ((n as f64 * p / 100.0).round() as usize).max(1),
        }
    }
}

impl Default for MarginRule {
    fn default() -> Self {
        MarginRule::Percent(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Predicted change points including the final one.
    pub k: usize,
    pub ae: usize,
    /// Meantime in time units (`dt` times samples).
    pub mt: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ri: f64,
    pub margin: usize,
}

pub fn evaluate(
    pred: &ChangePointSet,
    truth: &ChangePointSet,
    margin: usize,
    dt: f64,
) -> Result<MetricsReport, MetricsError> {
    let ae = annotation_error(pred, truth)?;
    let (precision, recall) = precision_recall(pred, truth, margin);
    Ok(MetricsReport {
        k: pred.k(),
        ae,
        mt: meantime(pred, truth) * dt,
        precision,
        recall,
        f1: f1(precision, recall),
        ri: rand_index(pred, truth)?,
        margin,
    })
}
