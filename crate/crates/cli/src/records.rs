//! Output rows, aggregation and CSV writing.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use opcov_core::stats;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One `(kernel, lambda, trial)` cell of an estimator experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub d: usize,
    pub m: usize,
    pub lambda: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub c0: f64,
    pub form: String,
    pub rho_hat: Option<f64>,
    pub eps_sample: Option<f64>,
    pub eps_thresh: Option<f64>,
    pub nnz_fraction: Option<f64>,
    pub psd_min_eig: Option<f64>,
    pub kernel: String,
    pub trial: usize,
    /// Empty on success.
    pub error: String,
}

impl TrialRecord {
    pub fn ok(&self) -> bool {
        self.error.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub kernel: String,
    pub lambda: f64,
    pub trial: usize,
    pub wall_seconds: f64,
}

/// Per `(kernel, lambda)` means and 95% confidence half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kernel: String,
    pub lambda: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub trials: usize,
    pub failed: usize,
    pub mean_eps_sample: f64,
    pub ci95_eps_sample: f64,
    pub mean_eps_thresh: f64,
    pub ci95_eps_thresh: f64,
    pub mean_rho_hat: f64,
    pub mean_nnz_fraction: f64,
    /// Share of trials with `eps_thresh >= eps_sample`.
    pub frac_thresh_not_better: f64,
}

/// Groups consecutive rows by `(kernel, lambda)`; the runner emits them grouped.
pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let key = (&records[start].kernel, records[start].lambda);
        let end = start
            + records[start..]
                .iter()
                .take_while(|r| (&r.kernel, r.lambda) == key)
                .count();
        let group = &records[start..end];
        let ok: Vec<&TrialRecord> = group.iter().filter(|r| r.ok()).collect();
        let col = |f: fn(&TrialRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
        let eps_s = col(|r| r.eps_sample);
        let eps_t = col(|r| r.eps_thresh);
        let worse = eps_s.iter().zip(&eps_t).filter(|(s, t)| t >= s).count();
        out.push(SummaryRow {
            kernel: key.0.clone(),
            lambda: key.1,
            n: group[0].n,
            trials: group.len(),
            failed: group.len() - ok.len(),
            mean_eps_sample: stats::mean(&eps_s),
            ci95_eps_sample: stats::ci95_half_width(&eps_s),
            mean_eps_thresh: stats::mean(&eps_t),
            ci95_eps_thresh: stats::ci95_half_width(&eps_t),
            mean_rho_hat: stats::mean(&col(|r| r.rho_hat)),
            mean_nnz_fraction: stats::mean(&col(|r| r.nnz_fraction)),
            frac_thresh_not_better: worse as f64 / ok.len().max(1) as f64,
        });
        start = end;
    }
    out
}

/// Writes rows with a header, `\n` terminators and round-trip floats.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}
