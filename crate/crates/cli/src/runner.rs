//! Experiment drivers. Cells run on the rayon pool; results are collected
//! in `(kernel, lambda, trial)` order so outputs do not depend on scheduling.

use std::time::Instant;

use opcov_core::enkf::{self, AnalysisOptions, EnkfExperiment, EnkfSummary, ObservationModel};
use opcov_core::sampling::covariance_matrix;
use opcov_core::{rng, theory, GaussianSampler, KernelModel, Mesh, Reference, ScalingReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{family_label, ExperimentConfig, ObservationKind};
use crate::error::{CliError, Result};
use crate::records::{Timing, TrialRecord};

/// Matrices of order `L` held at once: truth, factor and the factorization
/// copy, plus sample and thresholded estimates per worker.
pub fn estimated_peak_bytes(order: usize, threads: usize) -> f64 {
    (3 + 2 * threads) as f64 * 8.0 * (order as f64).powi(2)
}

pub fn memory_guard(cfg: &ExperimentConfig) -> Result<()> {
    let order = cfg.mesh_len();
    let needed = estimated_peak_bytes(order, rayon::current_num_threads());
    let limit = cfg.memory_limit_gb * 1e9;
    if needed > limit {
        return Err(CliError::Memory {
            needed_gb: needed / 1e9,
            limit_gb: cfg.memory_limit_gb,
            order,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRun {
    pub records: Vec<TrialRecord>,
    pub timings: Vec<Timing>,
}

struct Cell<'a> {
    cfg: &'a ExperimentConfig,
    kernel: String,
    lambda: f64,
    n: usize,
}

impl Cell<'_> {
    fn record(&self, trial: usize, outcome: std::result::Result<opcov_core::EstimatorReport, String>) -> TrialRecord {
        let (rep, error) = match outcome {
            Ok(r) => (Some(r), String::new()),
            Err(e) => (None, e),
        };
        TrialRecord {
            seed: self.cfg.seed,
            d: self.cfg.d,
            m: self.cfg.m,
            lambda: self.lambda,
            n: self.n,
            c0: self.cfg.c0,
            form: self.cfg.form.to_string(),
            rho_hat: rep.map(|r| r.rho_hat),
            eps_sample: rep.map(|r| r.eps_sample),
            eps_thresh: rep.map(|r| r.eps_thresh),
            nnz_fraction: rep.map(|r| r.nnz_fraction),
            psd_min_eig: rep.map(|r| r.psd_min_eig),
            kernel: self.kernel.clone(),
            trial,
            error,
        }
    }
}

/// Runs every `(kernel, lambda, trial)` cell. Failed cells become rows with
/// the `error` column set.
pub fn run_estimator_grid(cfg: &ExperimentConfig) -> Result<EstimatorRun> {
    memory_guard(cfg)?;
    let mesh = Mesh::new(cfg.d, cfg.m)?;
    let rule = cfg.rule();
    let mut records = Vec::with_capacity(cfg.kernels.len() * cfg.lambdas.len() * cfg.trials);
    let mut timings = Vec::with_capacity(records.capacity());
    for (ki, &family) in cfg.kernels.iter().enumerate() {
        for (li, &lambda) in cfg.lambdas.iter().enumerate() {
            let cell = Cell {
                cfg,
                kernel: family_label(family),
                lambda,
                n: cfg.n_for(lambda),
            };
            let setup = KernelModel::new(family, lambda)
                .and_then(|k| covariance_matrix(&k, &mesh))
                .and_then(|cov| Ok((GaussianSampler::new(&cov)?, Reference::new(cov)?)));
            let (sampler, reference) = match setup {
                Ok(s) => s,
                Err(e) => {
                    for t in 0..cfg.trials {
                        records.push(cell.record(t, Err(e.to_string())));
                        timings.push(Timing {
                            kernel: cell.kernel.clone(),
                            lambda,
                            trial: t,
                            wall_seconds: 0.0,
                        });
                    }
                    continue;
                }
            };
            let rows: Vec<(TrialRecord, f64)> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let start = Instant::now();
                    let mut r = rng::substream(cfg.seed, &[ki as u64, li as u64, t as u64]);
                    let outcome = sampler
                        .sample_with(&mesh, cell.n, &mut r, cfg.seed)
                        .and_then(|ens| reference.report(&ens, &rule))
                        .map_err(|e| e.to_string());
                    (cell.record(t, outcome), start.elapsed().as_secs_f64())
                })
                .collect();
            for (rec, secs) in rows {
                timings.push(Timing {
                    kernel: rec.kernel.clone(),
                    lambda,
                    trial: rec.trial,
                    wall_seconds: secs,
                });
                records.push(rec);
            }
        }
    }
    Ok(EstimatorRun { records, timings })
}

pub fn observation_model(cfg: &ExperimentConfig, mesh: &Mesh) -> Result<ObservationModel> {
    Ok(match cfg.observation {
        ObservationKind::Pointwise => ObservationModel::pointwise(mesh, cfg.dy, cfg.noise_std)?,
        ObservationKind::LocalAverage => ObservationModel::local_average(mesh, cfg.dy, cfg.obs_radius, cfg.noise_std)?,
    })
}

/// Per-particle row of the analysis comparison.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EnkfRow {
    pub seed: u64,
    pub trial: usize,
    pub n: usize,
    pub disc_vanilla: f64,
    pub disc_localized: f64,
    pub innovation_norm: f64,
    pub c_const: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EnkfSummaryRow {
    pub kernel: String,
    pub lambda: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub trials: usize,
    pub mean_vanilla: f64,
    pub mean_localized: f64,
    pub frac_localized_better: f64,
    pub q50_vanilla: f64,
    pub q90_vanilla: f64,
    pub q99_vanilla: f64,
    pub q50_localized: f64,
    pub q90_localized: f64,
    pub q99_localized: f64,
    /// `None` unless the continuity inequality was evaluated.
    pub continuity_violations: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct EnkfCell {
    pub kernel: String,
    pub lambda: f64,
    pub n: usize,
    pub summary: EnkfSummary,
}

impl EnkfCell {
    pub fn rows(&self, seed: u64) -> Vec<EnkfRow> {
        self.summary
            .trials
            .iter()
            .enumerate()
            .flat_map(|(t, cmp)| {
                cmp.particles.iter().map(move |p| EnkfRow {
                    seed,
                    trial: t,
                    n: p.particle,
                    disc_vanilla: p.disc_vanilla,
                    disc_localized: p.disc_localized,
                    innovation_norm: p.innovation_norm,
                    c_const: p.c_const,
                })
            })
            .collect()
    }

    pub fn summary_row(&self, check_continuity: bool) -> EnkfSummaryRow {
        let s = &self.summary;
        let v = s.vanilla_quantiles();
        let l = s.localized_quantiles();
        EnkfSummaryRow {
            kernel: self.kernel.clone(),
            lambda: self.lambda,
            n: self.n,
            trials: s.trials.len(),
            mean_vanilla: s.mean_vanilla(),
            mean_localized: s.mean_localized(),
            frac_localized_better: s.fraction_localized_better(),
            q50_vanilla: v[0],
            q90_vanilla: v[1],
            q99_vanilla: v[2],
            q50_localized: l[0],
            q90_localized: l[1],
            q99_localized: l[2],
            continuity_violations: check_continuity.then(|| s.continuity_violations()),
        }
    }
}

/// The three-filter comparison over the kernel and lengthscale grid.
pub fn run_enkf(cfg: &ExperimentConfig) -> Result<Vec<EnkfCell>> {
    let mesh = Mesh::new(cfg.d, cfg.m)?;
    let obs = observation_model(cfg, &mesh)?;
    let mut cells = Vec::new();
    for (ki, &family) in cfg.kernels.iter().enumerate() {
        for (li, &lambda) in cfg.lambdas.iter().enumerate() {
            let kernel = KernelModel::new(family, lambda)?;
            let n = cfg.n_for(lambda);
            let exp = EnkfExperiment {
                n,
                rule: cfg.rule(),
                trials: cfg.trials,
                seed: rng::derive_seed(cfg.seed, &[ki as u64, li as u64]),
                options: AnalysisOptions {
                    project_psd: cfg.project_psd,
                    check_continuity: cfg.check_continuity,
                },
            };
            let summary = enkf::analysis_step_experiment(&kernel, &mesh, &obs, &exp)?;
            cells.push(EnkfCell {
                kernel: family_label(family),
                lambda,
                n,
                summary,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ScalingRow {
    pub kernel: String,
    pub d: usize,
    pub m: usize,
    pub lambda: f64,
    pub q: f64,
    pub rq_q: f64,
    pub rq_q_asymptotic: f64,
    pub op_norm: f64,
    pub op_norm_asymptotic: f64,
    pub eff_rank: f64,
    pub esup_mc: f64,
    pub esup_prediction: Option<f64>,
}

pub fn run_theory(cfg: &ExperimentConfig) -> Result<Vec<ScalingRow>> {
    memory_guard(cfg)?;
    let mesh = Mesh::new(cfg.d, cfg.m)?;
    let mut rows = Vec::new();
    for (ki, &family) in cfg.kernels.iter().enumerate() {
        for (li, &lambda) in cfg.lambdas.iter().enumerate() {
            let kernel = KernelModel::new(family, lambda)?;
            let seed = rng::derive_seed(cfg.seed, &[ki as u64, li as u64]);
            let r: ScalingReport = theory::scaling_report(&kernel, &mesh, cfg.q, cfg.esup_samples, seed)?;
            rows.push(ScalingRow {
                kernel: family_label(family),
                d: cfg.d,
                m: cfg.m,
                lambda,
                q: cfg.q,
                rq_q: r.rq_q,
                rq_q_asymptotic: r.rq_q_asymptotic,
                op_norm: r.op_norm,
                op_norm_asymptotic: r.op_norm_asymptotic,
                eff_rank: r.eff_rank,
                esup_mc: r.esup_mc,
                esup_prediction: r.esup_prediction,
            });
        }
    }
    Ok(rows)
}
