//! Central finite-difference check of a model's analytic parameter gradients.

use serde::Serialize;

use crate::error::Result;
use crate::model::Model;
use crate::tensor::Tensor;

/// Lower bound on the denominator of [`relative_error`], so entries whose true
/// gradient is (numerically) zero are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub name: &'static str,
    pub len: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// Compares every parameter's analytic gradient of the mean cross-entropy on
/// `(images, labels)` with `(L(p + h) - L(p - h)) / 2h`.
pub fn finite_diff_check(
    model: &Model,
    images: &Tensor,
    labels: &[usize],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_grads(images, labels)?;
    let mut probe = model.clone();
    let mut groups = Vec::with_capacity(analytic.groups.len());
    for (gi, (name, grad)) in analytic.groups.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (i, &a) in grad.iter().enumerate() {
            let original = model.param_groups()[gi].1[i];
            probe.param_groups_mut()[gi].1[i] = original + step;
            let plus = probe.loss(images, labels)?;
            probe.param_groups_mut()[gi].1[i] = original - step;
            let minus = probe.loss(images, labels)?;
            probe.param_groups_mut()[gi].1[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(a, numeric));
        }
        groups.push(GroupReport {
            name,
            len: grad.len(),
            max_relative_error: worst,
        });
    }
    let passed = groups.iter().all(|g| g.max_relative_error <= tolerance);
    Ok(GradCheckReport {
        step,
        tolerance,
        groups,
        passed,
    })
}
