//! Accuracy, confusion matrices, summary statistics and per-class log Fisher
//! discriminant ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added to the within-class scatter of the Fisher ratio.
pub const FDR_EPS: f64 = 1e-12;

/// Percentage of positions where `preds` equals `labels`.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions, {} labels", preds.len(), labels.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::Empty("accuracy input"));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / preds.len() as f64)
}

/// Counts with rows indexed by the true class and columns by the prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Each non-empty row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape(
                "ConfusionMatrix::merge",
                format!("{} vs {} classes", self.classes, other.classes),
            ));
        }
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::shape(
            "confusion",
            format!("{} predictions, {} labels", preds.len(), labels.len()),
        ));
    }
    let mut m = ConfusionMatrix::new(classes);
    for (&p, &l) in preds.iter().zip(labels) {
        if l >= classes || p >= classes {
            return Err(Error::LabelOutOfRange {
                label: l.max(p),
                classes,
            });
        }
        m.counts[l][p] += 1;
    }
    Ok(m)
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn mean_and_scatter(rows: &[&[f64]], d: usize) -> (Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    // trace of the (n-1)-normalized covariance
    let ss: f64 = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum();
    (mean, ss / (n - 1.0))
}

/// One-vs-rest log Fisher discriminant ratio per class of `features`
/// (`(n, d)` as rows of the flattened tensor):
/// `ln(|mean_c - mean_rest|^2 / (tr cov_c + tr cov_rest + FDR_EPS))`.
pub fn fdr_per_class(features: &Tensor, labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    let n = features.batch();
    if labels.len() != n {
        return Err(Error::shape(
            "fdr_per_class",
            format!("{n} feature rows, {} labels", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(Error::SingletonClass { class, count });
    }
    if classes < 2 {
        return Err(Error::InvalidArgument(
            "one-vs-rest ratio needs at least two classes".into(),
        ));
    }
    let d = features.features();
    let rows: Vec<&[f64]> = (0..n).map(|i| features.row(i)).collect();
    (0..classes)
        .map(|c| {
            let (inside, outside): (Vec<_>, Vec<_>) =
                rows.iter().zip(labels).partition(|(_, &l)| l == c);
            let inside: Vec<&[f64]> = inside.into_iter().map(|(r, _)| *r).collect();
            let outside: Vec<&[f64]> = outside.into_iter().map(|(r, _)| *r).collect();
            let (mean_c, scatter_c) = mean_and_scatter(&inside, d);
            let (mean_r, scatter_r) = mean_and_scatter(&outside, d);
            let between: f64 = mean_c.iter().zip(&mean_r).map(|(a, b)| (a - b).powi(2)).sum();
            Ok((between / (scatter_c + scatter_r + FDR_EPS)).ln())
        })
        .collect()
}
