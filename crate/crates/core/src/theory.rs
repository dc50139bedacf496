//! Theoretical quantities of the small-lengthscale analysis and Monte Carlo
//! checks of the concentration statements.
//!
//! Universal constants are never fixed here. They enter as parameters with
//! documented defaults, and `≍`-type statements are checked as ratio bands
//! by the callers.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::estimation::{spectral_norm, ThresholdForm, ThresholdRule};
use crate::kernels::{KernelFamily, KernelModel};
use crate::quadrature::{integrate_breaks, QuadOptions};
use crate::rng;
use crate::sampling::{covariance_matrix, CovMatrix, GaussianSampler, Mesh};
use crate::stats;

/// Surface area of the unit sphere in `R^d`: 2, 2π, 4π.
pub fn unit_sphere_area(d: usize) -> Result<f64> {
    match d {
        1 => Ok(2.0),
        2 => Ok(2.0 * PI),
        3 => Ok(4.0 * PI),
        _ => Err(invalid("d", format!("must be 1, 2 or 3, got {d}"))),
    }
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(invalid("q", format!("must lie in (0, 1], got {q}")))
    }
}

/// Discretized `R_q^q = max_x ∫ |k(x, x')|^q dx'` on the mesh.
///
/// `q = 1` is accepted and gives the `l1` operator bound of the kernel matrix.
pub fn sparsity_level(kernel: &KernelModel, mesh: &Mesh, q: f64) -> Result<f64> {
    check_q(q)?;
    kernel.validate()?;
    let n = mesh.len();
    let inv_lambda = 1.0 / kernel.lambda();
    let row = |i: usize| -> f64 {
        (0..n)
            .map(|j| kernel.profile(mesh.distance(i, j) * inv_lambda).abs().powf(q))
            .sum::<f64>()
    };
    let max_row = (0..n).into_par_iter().map(row).reduce(|| 0.0, f64::max);
    Ok(mesh.weight() * max_row)
}

/// `∫_0^∞ k_1(r)^q r^(d-1) dr` for the unit-lengthscale profile.
///
/// The range is cut at the first `r_max = 2^j s` (with `s` the half-width)
/// where `k_1(r_max)^q r_max^d <= 1e-16`; the neglected tail is below that
/// level for every monotone kernel with at least exponential decay.
pub fn radial_moment(kernel: &KernelModel, q: f64, d: usize) -> Result<f64> {
    check_q(q)?;
    unit_sphere_area(d)?;
    let s = kernel.half_width()?;
    let integrand = |r: f64| kernel.profile(r).powf(q) * r.powi(d as i32 - 1);
    let mut breaks = vec![0.0, 0.5 * s, s];
    let mut r = s;
    loop {
        r *= 2.0;
        breaks.push(r);
        if kernel.profile(r).powf(q) * r.powi(d as i32) <= 1e-16 || r > 1e6 {
            break;
        }
    }
    let opts = QuadOptions {
        rel_tol: 1e-12,
        abs_tol: 1e-300,
        max_segments: 5000,
    };
    integrate_breaks(integrand, &breaks, opts).map(|(v, _)| v)
}

/// Closed form of the squared-exponential radial moment:
/// `(1/2) (2/q)^(d/2) Γ(d/2)`.
pub fn se_radial_moment(q: f64, d: usize) -> f64 {
    0.5 * (2.0 / q).powf(d as f64 / 2.0) * libm::tgamma(d as f64 / 2.0)
}

/// Small-lengthscale asymptote `λ^d A(d) ∫ k_1^q r^(d-1) dr` of `R_q^q`.
pub fn sparsity_asymptotic(kernel: &KernelModel, q: f64, d: usize) -> Result<f64> {
    let moment = radial_moment(kernel, q, d)?;
    if kernel.family() == KernelFamily::SquaredExponential {
        let exact = se_radial_moment(q, d);
        if ((moment - exact) / exact).abs() > 1e-8 {
            return Err(Error::Quadrature {
                estimate: moment,
                error: (moment - exact).abs(),
            });
        }
    }
    Ok(kernel.lambda().powi(d as i32) * unit_sphere_area(d)? * moment)
}

/// Small-lengthscale asymptote of the covariance operator norm (the `q = 1` case).
pub fn operator_norm_asymptotic(kernel: &KernelModel, d: usize) -> Result<f64> {
    sparsity_asymptotic(kernel, 1.0, d)
}

/// `c(q)`: ratio of the `q`-th to the first radial moment.
pub fn cq_constant(kernel: &KernelModel, q: f64, d: usize) -> Result<f64> {
    Ok(radial_moment(kernel, q, d)? / radial_moment(kernel, 1.0, d)?)
}

/// `r(C) = Tr(C) / |C|`; the quadrature weight cancels.
pub fn effective_rank(cov: &CovMatrix) -> Result<f64> {
    let norm = spectral_norm(cov)?;
    if norm == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(cov.trace() / norm)
}

/// Weighted (absolute) operator norm `weight * |C|_2`.
pub fn operator_norm(cov: &CovMatrix) -> Result<f64> {
    Ok(cov.weight() * spectral_norm(cov)?)
}

/// Predicted supremum scale `sqrt(d ln(sqrt(d) / (s λ)))`.
pub fn supremum_scaling_prediction(kernel: &KernelModel, d: usize) -> Result<f64> {
    unit_sphere_area(d)?;
    let s = kernel.half_width()?;
    let limit = (d as f64).sqrt() / s;
    if kernel.lambda() >= limit {
        return Err(Error::LengthscaleTooLarge {
            lambda: kernel.lambda(),
            limit,
        });
    }
    Ok((d as f64 * ((d as f64).sqrt() / (s * kernel.lambda())).ln()).sqrt())
}

/// Mean and standard error of a Monte Carlo sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

const SUP_BATCH: usize = 250;

/// Per-field maxima of `count` draws, in deterministic batches.
pub fn sample_sups(sampler: &GaussianSampler, mesh: &Mesh, count: usize, seed: u64) -> Result<Vec<f64>> {
    let batches: Vec<usize> = (0..count.div_ceil(SUP_BATCH)).collect();
    let parts: Result<Vec<Vec<f64>>> = batches
        .par_iter()
        .map(|&b| {
            let size = SUP_BATCH.min(count - b * SUP_BATCH);
            let mut r = rng::substream(seed, &[b as u64]);
            Ok(sampler.sample_with(mesh, size, &mut r, seed)?.sups().to_vec())
        })
        .collect();
    Ok(parts?.concat())
}

/// Monte Carlo estimate of `E[max over the mesh of u]` from `m` fields.
pub fn expected_supremum_mc(kernel: &KernelModel, mesh: &Mesh, m: usize, seed: u64) -> Result<McEstimate> {
    if m < 2 {
        return Err(invalid("M", format!("must be at least 2, got {m}")));
    }
    let cov = covariance_matrix(kernel, mesh)?;
    let sampler = GaussianSampler::new(&cov)?;
    expected_supremum_with(&sampler, mesh, m, seed)
}

pub fn expected_supremum_with(
    sampler: &GaussianSampler,
    mesh: &Mesh,
    m: usize,
    seed: u64,
) -> Result<McEstimate> {
    if m < 2 {
        return Err(invalid("M", format!("must be at least 2, got {m}")));
    }
    let sups = sample_sups(sampler, mesh, m, seed)?;
    Ok(McEstimate {
        mean: stats::mean(&sups),
        stderr: stats::std_err(&sups),
    })
}

/// Right side of the moment bound,
/// `R_q^q ρ^(1-q) + ρ exp(-(c/p) N min(ρ, ρ²))`, with the universal
/// constant `c` exposed.
pub fn theorem_bound(rq_q: f64, q: f64, rho: f64, n: usize, p: f64, c: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("N", "must be at least 1"));
    }
    if !(p >= 1.0) {
        return Err(invalid("p", format!("must be at least 1, got {p}")));
    }
    if !(c > 0.0) {
        return Err(invalid("c", format!("must be positive, got {c}")));
    }
    if rho < 0.0 || rq_q < 0.0 {
        return Err(invalid("rho", "rho and R_q^q must be nonnegative"));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let tail = rho * (-(c / p) * n as f64 * rho.min(rho * rho)).exp();
    Ok(rq_q * rho.powf(1.0 - q) + tail)
}

/// Everything computed for one lengthscale in a scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingReport {
    pub lambda: f64,
    pub rq_q: f64,
    pub rq_q_asymptotic: f64,
    /// Weighted operator norm of the discretized covariance.
    pub op_norm: f64,
    pub op_norm_asymptotic: f64,
    pub eff_rank: f64,
    pub esup_mc: f64,
    /// `None` when the lengthscale is outside the prediction's validity region.
    pub esup_prediction: Option<f64>,
}

/// Computes a [`ScalingReport`] for one kernel on one mesh.
pub fn scaling_report(kernel: &KernelModel, mesh: &Mesh, q: f64, m: usize, seed: u64) -> Result<ScalingReport> {
    let d = mesh.dim();
    let cov = covariance_matrix(kernel, mesh)?;
    let norm = spectral_norm(&cov)?;
    let sampler = GaussianSampler::new(&cov)?;
    let esup = expected_supremum_with(&sampler, mesh, m, seed)?;
    Ok(ScalingReport {
        lambda: kernel.lambda(),
        rq_q: sparsity_level(kernel, mesh, q)?,
        rq_q_asymptotic: sparsity_asymptotic(kernel, q, d)?,
        op_norm: cov.weight() * norm,
        op_norm_asymptotic: operator_norm_asymptotic(kernel, d)?,
        eff_rank: cov.trace() / norm,
        esup_mc: esup.mean,
        esup_prediction: supremum_scaling_prediction(kernel, d).ok(),
    })
}

/// Population threshold `ρ_N` from a Monte Carlo estimate of the expected supremum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationThreshold {
    pub rho_n: f64,
    pub esup: McEstimate,
}

/// Shared settings of the concentration experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationOptions {
    /// Prefactor and form for `ρ_N` (and `ρ̂_N`). Defaults to `c0 = 1`, full form.
    pub rule: ThresholdRule,
    /// Fields in the high-precision estimate of the expected supremum.
    pub esup_samples: usize,
}

impl Default for ConcentrationOptions {
    fn default() -> Self {
        Self {
            rule: ThresholdRule {
                c0: 1.0,
                form: ThresholdForm::Full,
            },
            esup_samples: 10_000,
        }
    }
}

fn population_threshold(
    sampler: &GaussianSampler,
    mesh: &Mesh,
    n: usize,
    opts: &ConcentrationOptions,
    seed: u64,
) -> Result<PopulationThreshold> {
    // Separate stream family from the trials.
    let esup_seed = rng::derive_seed(seed, &[u64::MAX]);
    let esup = expected_supremum_with(sampler, mesh, opts.esup_samples, esup_seed)?;
    Ok(PopulationThreshold {
        rho_n: opts.rule.level(n, esup.mean)?,
        esup,
    })
}

/// `max_ij |k̂ - k|` and `max_i |k̂(x_i, x_col) - k(x_i, x_col)|` for one ensemble.
pub fn supnorm_errors(
    values: &[f64],
    count: usize,
    truth: &CovMatrix,
    column: usize,
) -> (f64, f64) {
    let len = truth.order();
    let inv = 1.0 / count as f64;
    let fields: Vec<&[f64]> = values.chunks_exact(len).collect();
    let entry = |i: usize, j: usize| -> f64 { inv * fields.iter().map(|f| f[i] * f[j]).sum::<f64>() };
    let mut max_all = 0.0f64;
    let mut max_col = 0.0f64;
    for j in 0..len {
        for i in 0..=j {
            let err = (entry(i, j) - truth.get(i, j)).abs();
            max_all = max_all.max(err);
            if j == column || i == column {
                max_col = max_col.max(err);
            }
        }
    }
    (max_all, max_col)
}

/// Output of [`supnorm_error_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct SupNormSummary {
    pub population: PopulationThreshold,
    /// Reference column (mesh index) for the single-argument statistic.
    pub column: usize,
    /// Per-trial `max_ij |k̂ - k| / ρ_N`.
    pub max_ratio: Vec<f64>,
    /// Per-trial `max_i |k̂(·, x_col) - k(·, x_col)| / ρ_N`.
    pub column_ratio: Vec<f64>,
}

impl SupNormSummary {
    pub fn max_quantiles(&self) -> [f64; 3] {
        stats::quantiles_50_90_99(&self.max_ratio)
    }

    pub fn column_quantiles(&self) -> [f64; 3] {
        stats::quantiles_50_90_99(&self.column_ratio)
    }

    /// The 99% quantile of the column statistic stays below `bound`.
    pub fn column_within(&self, bound: f64) -> bool {
        self.column_quantiles()[2] <= bound
    }
}

/// Sup-norm error of the sample covariance function, normalized by `ρ_N`.
/// The single-argument statistic uses the mesh point nearest the center.
pub fn supnorm_error_experiment(
    kernel: &KernelModel,
    mesh: &Mesh,
    n: usize,
    trials: usize,
    seed: u64,
    opts: &ConcentrationOptions,
) -> Result<SupNormSummary> {
    if trials < 30 {
        return Err(invalid("trials", format!("must be at least 30, got {trials}")));
    }
    let truth = covariance_matrix(kernel, mesh)?;
    let sampler = GaussianSampler::new(&truth)?;
    let population = population_threshold(&sampler, mesh, n, opts, seed)?;
    let column = mesh.len() / 2;
    let per_trial: Result<Vec<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::substream(seed, &[t as u64]);
            let ens = sampler.sample_with(mesh, n, &mut r, seed)?;
            let (a, c) = supnorm_errors(ens.values(), n, &truth, column);
            Ok((a / population.rho_n, c / population.rho_n))
        })
        .collect();
    let (max_ratio, column_ratio) = per_trial?.into_iter().unzip();
    Ok(SupNormSummary {
        population,
        column,
        max_ratio,
        column_ratio,
    })
}

/// Output of [`threshold_concentration_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationSummary {
    pub population: PopulationThreshold,
    pub n: usize,
    /// Per-trial `ρ̂_N / ρ_N`.
    pub ratios: Vec<f64>,
}

impl ConcentrationSummary {
    pub fn mean_ratio(&self) -> f64 {
        stats::mean(&self.ratios)
    }

    /// Empirical `P[ρ̂_N < t ρ_N]`.
    pub fn prob_below(&self, t: f64) -> f64 {
        self.ratios.iter().filter(|&&r| r < t).count() as f64 / self.ratios.len() as f64
    }

    fn rho_min_sq(&self) -> f64 {
        let rho = self.population.rho_n;
        rho.min(rho * rho)
    }

    /// `2 exp(-N min(ρ_N, ρ_N²) / 8)`, the reference bound at `t = 1/2`.
    pub fn half_bound(&self) -> f64 {
        2.0 * (-(self.n as f64) * self.rho_min_sq() / 8.0).exp()
    }

    /// `2 exp(-(1 - sqrt t)² N min(ρ_N, ρ_N²) / 2)`, the bound for general `t`.
    pub fn tail_bound(&self, t: f64) -> f64 {
        2.0 * (-0.5 * (1.0 - t.sqrt()).powi(2) * self.n as f64 * self.rho_min_sq()).exp()
    }

    /// Monte Carlo slack `3 / sqrt(trials)`.
    pub fn slack(&self) -> f64 {
        3.0 / (self.ratios.len() as f64).sqrt()
    }
}

/// Distribution of `ρ̂_N / ρ_N` over independent ensembles.
pub fn threshold_concentration_experiment(
    kernel: &KernelModel,
    mesh: &Mesh,
    n: usize,
    c0: f64,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationSummary> {
    let opts = ConcentrationOptions {
        rule: ThresholdRule::new(c0, ThresholdForm::Full)?,
        ..Default::default()
    };
    threshold_concentration_with(kernel, mesh, n, trials, seed, &opts)
}

pub fn threshold_concentration_with(
    kernel: &KernelModel,
    mesh: &Mesh,
    n: usize,
    trials: usize,
    seed: u64,
    opts: &ConcentrationOptions,
) -> Result<ConcentrationSummary> {
    if trials < 30 {
        return Err(invalid("trials", format!("must be at least 30, got {trials}")));
    }
    let truth = covariance_matrix(kernel, mesh)?;
    let sampler = GaussianSampler::new(&truth)?;
    let population = population_threshold(&sampler, mesh, n, opts, seed)?;
    let ratios: Result<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::substream(seed, &[t as u64]);
            let ens = sampler.sample_with(mesh, n, &mut r, seed)?;
            Ok(opts.rule.from_sups(ens.sups())? / population.rho_n)
        })
        .collect();
    Ok(ConcentrationSummary {
        population,
        n,
        ratios: ratios?,
    })
}
