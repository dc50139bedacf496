//! Pass/fail checks on experiment outputs, shared by `--check` and the tests.

use std::fmt;

use opcov_core::stats;

use crate::records::SummaryRow;
use crate::runner::{EnkfSummaryRow, ScalingRow};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn by_kernel<T>(rows: &[T], kernel: impl Fn(&T) -> &str) -> Vec<(String, Vec<&T>)> {
    let mut out: Vec<(String, Vec<&T>)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(k, _)| k == kernel(r)) {
            Some((_, v)) => v.push(r),
            None => out.push((kernel(r).to_string(), vec![r])),
        }
    }
    out
}

/// Thresholded error stays within a factor `flat_factor` between the three
/// smallest and three largest lengthscales while the sample error grows by
/// at least `growth`.
pub fn flat_and_divergent(rows: &[SummaryRow], flat_factor: f64, growth: f64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for (kernel, mut group) in by_kernel(rows, |r| &r.kernel) {
        group.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
        let k = group.len().min(3);
        let large: Vec<f64> = group[..k].iter().map(|r| r.mean_eps_thresh).collect();
        let small: Vec<f64> = group[group.len() - k..].iter().map(|r| r.mean_eps_thresh).collect();
        let (a, b) = (stats::mean(&small), stats::mean(&large));
        let ratio = a.max(b) / a.min(b);
        out.push(CheckOutcome::new(
            format!("{kernel} thresholded error flat"),
            ratio <= flat_factor,
            format!("small-lambda mean {a:.4}, large-lambda mean {b:.4}, ratio {ratio:.3} (limit {flat_factor})"),
        ));
        let first = group[0].mean_eps_sample;
        let last = group[group.len() - 1].mean_eps_sample;
        out.push(CheckOutcome::new(
            format!("{kernel} sample error diverges"),
            last >= growth * first,
            format!("mean eps at smallest lambda {last:.4}, at largest {first:.4}, ratio {:.3} (need {growth})", last / first),
        ));
    }
    out
}

/// At the largest lengthscale thresholding does not help: mean and majority.
pub fn crossover(rows: &[SummaryRow]) -> Vec<CheckOutcome> {
    by_kernel(rows, |r| &r.kernel)
        .into_iter()
        .map(|(kernel, group)| {
            let top = group.iter().max_by(|a, b| a.lambda.total_cmp(&b.lambda)).unwrap();
            let passed = top.mean_eps_thresh >= top.mean_eps_sample && top.frac_thresh_not_better > 0.5;
            CheckOutcome::new(
                format!("{kernel} crossover at lambda {}", top.lambda),
                passed,
                format!(
                    "mean eps_thresh {:.4} vs eps {:.4}; thresholded no better in {:.0}% of trials",
                    top.mean_eps_thresh,
                    top.mean_eps_sample,
                    100.0 * top.frac_thresh_not_better
                ),
            )
        })
        .collect()
}

/// Localized update wins in at least `share` of trials at the smallest
/// lengthscale; the continuity inequality never fails where it was evaluated.
pub fn enkf_ordering(rows: &[EnkfSummaryRow], share: f64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for (kernel, group) in by_kernel(rows, |r| &r.kernel) {
        let low = group.iter().min_by(|a, b| a.lambda.total_cmp(&b.lambda)).unwrap();
        out.push(CheckOutcome::new(
            format!("{kernel} localized beats vanilla at lambda {}", low.lambda),
            low.frac_localized_better >= share,
            format!(
                "{:.0}% of trials (need {:.0}%), means {:.4e} vs {:.4e}",
                100.0 * low.frac_localized_better,
                100.0 * share,
                low.mean_localized,
                low.mean_vanilla
            ),
        ));
        let violations: usize = group.iter().filter_map(|r| r.continuity_violations).sum();
        if group.iter().any(|r| r.continuity_violations.is_some()) {
            out.push(CheckOutcome::new(
                format!("{kernel} gain continuity"),
                violations == 0,
                format!("{violations} violations"),
            ));
        }
    }
    out
}

/// Monte Carlo expected supremum over its prediction stays in a band of
/// width `band` (max ratio over min ratio).
pub fn supremum_band(rows: &[ScalingRow], band: f64) -> Vec<CheckOutcome> {
    by_kernel(rows, |r| &r.kernel)
        .into_iter()
        .map(|(kernel, group)| {
            let ratios: Vec<f64> = group
                .iter()
                .filter_map(|r| r.esup_prediction.map(|p| r.esup_mc / p))
                .collect();
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().copied().fold(0.0, f64::max);
            CheckOutcome::new(
                format!("{kernel} supremum scaling"),
                ratios.len() >= 2 && hi / lo <= band,
                format!("{} ratios in [{lo:.3}, {hi:.3}], spread {:.3} (limit {band})", ratios.len(), hi / lo),
            )
        })
        .collect()
}
