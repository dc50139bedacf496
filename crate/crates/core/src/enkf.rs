//! One analysis step of the mean-field, perturbed-observation and localized
//! ensemble Kalman filters.
//!
//! Fields live on a mesh with quadrature weight `w`, so the state space is
//! `L^2` approximated by `|u|_w = sqrt(w) |u|`. The observation matrix acts on
//! raw mesh values. Its `L^2` adjoint is `A^T / w` and the covariance operator
//! is `w C`, so the weights cancel in the gain and every gain below is the
//! plain matrix expression `C A^T (A C A^T + Γ)^{-1}`. Norms are weighted:
//!
//! * `|A| = σ_max(A) / sqrt(w)`
//! * `|C_op| = w |C|_2`
//! * `|K| = sqrt(w) σ_max(K)` for a gain `R^{d_y} -> L^2`

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::estimation::{hard_threshold, psd_projection, spectral_norm, spectral_norm_with, ThresholdRule};
use crate::kernels::KernelModel;
use crate::linalg::{dense_eigenvalues, largest_singular_value, EigOptions, SpectralMethod};
use crate::rng;
use crate::sampling::{covariance_matrix, CovMatrix, Ensemble, GaussianSampler, Mesh};
use crate::stats;

/// Default observation noise standard deviation (`Γ = 0.1 I`).
pub const DEFAULT_NOISE_STD: f64 = 0.316;

/// Linear observations `y = A u + η` with `η ~ N(0, Γ)`.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    a: DMatrix<f64>,
    gamma: DMatrix<f64>,
    gamma_chol: DMatrix<f64>,
    gamma_inv_norm: f64,
    a_norm: f64,
    weight: f64,
}

impl ObservationModel {
    /// General model. `weight` is the quadrature weight of the mesh `A` acts on.
    pub fn new(a: DMatrix<f64>, gamma: DMatrix<f64>, weight: f64) -> Result<Self> {
        let dy = a.nrows();
        if dy == 0 {
            return Err(invalid("d_y", "must be at least 1"));
        }
        if gamma.shape() != (dy, dy) {
            return Err(Error::DimensionMismatch(format!(
                "A has {dy} rows but Gamma is {}x{}",
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(invalid("weight", format!("must be positive, got {weight}")));
        }
        if a.iter().chain(gamma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        if gamma != gamma.transpose() {
            return Err(invalid("Gamma", "must be symmetric"));
        }
        let gamma_chol = Cholesky::new(gamma.clone())
            .ok_or(Error::FactorizationFailed { jitter: 0.0 })?
            .unpack();
        let min_eig = dense_eigenvalues(&gamma)?[0];
        if min_eig <= 0.0 {
            return Err(Error::FactorizationFailed { jitter: 0.0 });
        }
        let a_norm = largest_singular_value(&a) / weight.sqrt();
        Ok(Self {
            a,
            gamma,
            gamma_chol,
            gamma_inv_norm: 1.0 / min_eig,
            a_norm,
            weight,
        })
    }

    /// `d_y` point evaluations at equispaced mesh indices, `Γ = γ² I`.
    pub fn pointwise(mesh: &Mesh, dy: usize, noise_std: f64) -> Result<Self> {
        let sites = observation_sites(mesh, dy)?;
        let mut a = DMatrix::zeros(dy, mesh.len());
        for (r, &s) in sites.iter().enumerate() {
            a[(r, s)] = 1.0;
        }
        Self::new(a, isotropic_noise(dy, noise_std)?, mesh.weight())
    }

    /// Averages over all mesh points within `radius` of each observation site.
    pub fn local_average(mesh: &Mesh, dy: usize, radius: f64, noise_std: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(invalid("radius", format!("must be nonnegative, got {radius}")));
        }
        let sites = observation_sites(mesh, dy)?;
        let mut a = DMatrix::zeros(dy, mesh.len());
        for (r, &s) in sites.iter().enumerate() {
            let near: Vec<usize> = (0..mesh.len())
                .filter(|&j| mesh.distance(s, j) <= radius)
                .collect();
            let share = 1.0 / near.len() as f64;
            for j in near {
                a[(r, j)] = share;
            }
        }
        Self::new(a, isotropic_noise(dy, noise_std)?, mesh.weight())
    }

    pub fn dy(&self) -> usize {
        self.a.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn gamma_inv_norm(&self) -> f64 {
        self.gamma_inv_norm
    }

    /// Weighted operator norm `σ_max(A) / sqrt(w)`.
    pub fn operator_norm(&self) -> f64 {
        self.a_norm
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn observe(&self, u: &[f64]) -> DVector<f64> {
        &self.a * DVector::from_column_slice(u)
    }

    /// One draw of `η ~ N(0, Γ)`.
    pub fn draw_noise(&self, rng: &mut rng::Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.dy(), |_, _| StandardNormal.sample(rng));
        &self.gamma_chol * z
    }
}

fn isotropic_noise(dy: usize, noise_std: f64) -> Result<DMatrix<f64>> {
    if !(noise_std > 0.0 && noise_std.is_finite()) {
        return Err(invalid("gamma", format!("noise std must be positive, got {noise_std}")));
    }
    Ok(DMatrix::from_diagonal_element(dy, dy, noise_std * noise_std))
}

/// Mesh indices `floor((r + 1/2) L / d_y)`, `r < d_y`.
pub fn observation_sites(mesh: &Mesh, dy: usize) -> Result<Vec<usize>> {
    let len = mesh.len();
    if dy == 0 || dy > len {
        return Err(invalid("d_y", format!("must lie in 1..={len}, got {dy}")));
    }
    Ok((0..dy)
        .map(|r| (((r as f64 + 0.5) * len as f64 / dy as f64) as usize).min(len - 1))
        .collect())
}

/// Gain from the cross term `C A^T` (`L x d_y`) by a Cholesky solve with
/// `A C A^T + Γ`.
pub fn kalman_gain_from_cross(cross: &DMatrix<f64>, obs: &ObservationModel) -> Result<DMatrix<f64>> {
    if cross.shape() != (obs.state_dim(), obs.dy()) {
        return Err(Error::DimensionMismatch(format!(
            "cross term is {}x{}, expected {}x{}",
            cross.nrows(),
            cross.ncols(),
            obs.state_dim(),
            obs.dy()
        )));
    }
    let mut s = &obs.a * cross + &obs.gamma;
    // Symmetrize rounding before factorizing.
    let st = s.transpose();
    s += st;
    s *= 0.5;
    let chol = Cholesky::new(s).ok_or(Error::FactorizationFailed { jitter: 0.0 })?;
    Ok(chol.solve(&cross.transpose()).transpose())
}

/// `C A^T (A C A^T + Γ)^{-1}`.
pub fn kalman_gain(cov: &CovMatrix, obs: &ObservationModel) -> Result<DMatrix<f64>> {
    if cov.order() != obs.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "covariance has order {}, observation operator acts on {} values",
            cov.order(),
            obs.state_dim()
        )));
    }
    kalman_gain_from_cross(&(cov.entries() * obs.a.transpose()), obs)
}

/// `y - A u - η`.
pub fn innovation(u: &[f64], eta: &DVector<f64>, y: &DVector<f64>, obs: &ObservationModel) -> DVector<f64> {
    y - obs.observe(u) - eta
}

/// `u + K (y - A u - η)`.
pub fn analysis_update(
    u: &[f64],
    eta: &DVector<f64>,
    y: &DVector<f64>,
    obs: &ObservationModel,
    gain: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    if u.len() != obs.state_dim() || eta.len() != obs.dy() || y.len() != obs.dy() {
        return Err(Error::DimensionMismatch("field, noise or observation length".into()));
    }
    if gain.shape() != (obs.state_dim(), obs.dy()) {
        return Err(Error::DimensionMismatch("gain shape".into()));
    }
    let shift = gain * innovation(u, eta, y, obs);
    Ok(u.iter().zip(shift.iter()).map(|(a, b)| a + b).collect())
}

/// `δ |A| |Γ^{-1}| (1 + |C| |A|² |Γ^{-1}|)` with weighted norms.
pub fn gain_continuity_bound(delta_norm: f64, cov_norm: f64, obs: &ObservationModel) -> f64 {
    let a = obs.operator_norm();
    let g = obs.gamma_inv_norm();
    delta_norm * a * g * (1.0 + cov_norm * a * a * g)
}

/// Weighted norm `sqrt(w) σ_max(K)` of a gain.
pub fn gain_norm(gain: &DMatrix<f64>, weight: f64) -> f64 {
    weight.sqrt() * largest_singular_value(gain)
}

/// Leave-one-out estimates for one particle.
#[derive(Debug, Clone)]
pub struct LooPair {
    pub sample: CovMatrix,
    pub thresholded: CovMatrix,
    /// Threshold recomputed from the other `N - 1` suprema.
    pub rho_hat: f64,
}

/// Lazily produces leave-one-out covariances by rank-one downdates of the
/// full sum `S = sum_m u_m u_m^T`.
#[derive(Debug, Clone)]
pub struct LooCovariances<'a> {
    ens: &'a Ensemble,
    sum: DMatrix<f64>,
    rule: ThresholdRule,
}

impl<'a> LooCovariances<'a> {
    pub fn new(ens: &'a Ensemble, rule: ThresholdRule) -> Result<Self> {
        if ens.count() < 2 {
            return Err(invalid("N", format!("leave-one-out needs at least 2 fields, got {}", ens.count())));
        }
        let len = ens.mesh().len();
        let u = DMatrix::from_column_slice(len, ens.count(), ens.values());
        let sum = &u * u.transpose();
        Ok(Self { ens, sum, rule })
    }

    pub fn count(&self) -> usize {
        self.ens.count()
    }

    pub fn rho_hat(&self, n: usize) -> Result<f64> {
        let others: Vec<f64> = self
            .ens
            .sups()
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != n)
            .map(|(_, s)| *s)
            .collect();
        self.rule.from_sups(&others)
    }

    /// `(S - u_n u_n^T) / (N - 1)`.
    pub fn sample(&self, n: usize) -> CovMatrix {
        let u = self.ens.field(n);
        let inv = 1.0 / (self.count() - 1) as f64;
        let sum = &self.sum;
        CovMatrix::from_upper_fn(u.len(), self.ens.mesh().weight(), |i, j| {
            (sum[(i, j)] - u[i] * u[j]) * inv
        })
    }

    pub fn get(&self, n: usize) -> Result<LooPair> {
        if n >= self.count() {
            return Err(invalid("n", format!("particle index {n} out of range")));
        }
        let sample = self.sample(n);
        let rho_hat = self.rho_hat(n)?;
        let thresholded = hard_threshold(&sample, rho_hat);
        Ok(LooPair {
            sample,
            thresholded,
            rho_hat,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<LooPair>> + '_ {
        (0..self.count()).map(move |n| self.get(n))
    }
}

/// Leave-one-out covariances of every particle.
pub fn loo_covariances(ens: &Ensemble, rule: ThresholdRule) -> Result<LooCovariances<'_>> {
    LooCovariances::new(ens, rule)
}

/// Discrepancies of one particle's updates from the mean-field update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleDiscrepancy {
    pub particle: usize,
    /// `|v_n - v_n*|_w`, perturbed-observation update.
    pub disc_vanilla: f64,
    /// `|v_n^ρ - v_n*|_w`, localized update.
    pub disc_localized: f64,
    pub innovation_norm: f64,
    /// `|A| |Γ^{-1}| |C_op| |y - A u_n - η_n|`.
    pub c_const: f64,
}

/// Gain-continuity check for one estimate: the observed gain difference
/// against the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityCheck {
    pub gain_diff: f64,
    pub bound: f64,
}

impl ContinuityCheck {
    pub fn holds(&self) -> bool {
        self.gain_diff <= self.bound * (1.0 + 1e-10) + 1e-14
    }
}

/// One analysis step compared across the three filters.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisComparison {
    pub particles: Vec<ParticleDiscrepancy>,
    /// Both checks (sample, thresholded) per particle when requested.
    pub continuity: Vec<ContinuityCheck>,
}

impl AnalysisComparison {
    pub fn mean_vanilla(&self) -> f64 {
        stats::mean(&self.particles.iter().map(|p| p.disc_vanilla).collect::<Vec<_>>())
    }

    pub fn mean_localized(&self) -> f64 {
        stats::mean(&self.particles.iter().map(|p| p.disc_localized).collect::<Vec<_>>())
    }

    pub fn localized_better(&self) -> bool {
        self.mean_localized() < self.mean_vanilla()
    }

    pub fn continuity_holds(&self) -> bool {
        self.continuity.iter().all(ContinuityCheck::holds)
    }
}

/// Switches for [`compare_analysis`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalysisOptions {
    /// Project the thresholded leave-one-out estimate onto the PSD cone.
    pub project_psd: bool,
    /// Evaluate the gain-continuity inequality (costs a spectral norm per particle).
    pub check_continuity: bool,
}

/// Population covariance with its gain and weighted norm, computed once.
#[derive(Debug, Clone)]
pub struct MeanField {
    pub cov: CovMatrix,
    pub gain: DMatrix<f64>,
    pub op_norm: f64,
}

impl MeanField {
    pub fn new(cov: CovMatrix, obs: &ObservationModel) -> Result<Self> {
        let gain = kalman_gain(&cov, obs)?;
        let op_norm = cov.weight() * spectral_norm(&cov)?;
        Ok(Self { cov, gain, op_norm })
    }
}

fn continuity_check(
    est: &CovMatrix,
    gain: &DMatrix<f64>,
    truth: &MeanField,
    obs: &ObservationModel,
) -> Result<ContinuityCheck> {
    let delta = if est.entries().iter().all(|x| *x == 0.0) {
        truth.op_norm
    } else {
        let diff = CovMatrix::new(est.entries() - truth.cov.entries(), est.weight())?;
        // Ritz values never exceed the true norm, so a looser tolerance only
        // shrinks the bound and keeps the check conservative.
        let opts = EigOptions {
            rel_tol: 1e-6,
            ..Default::default()
        };
        est.weight() * spectral_norm_with(&diff, SpectralMethod::Lanczos, &opts)?
    };
    Ok(ContinuityCheck {
        gain_diff: gain_norm(&(gain - &truth.gain), obs.weight()),
        bound: gain_continuity_bound(delta, truth.op_norm, obs),
    })
}

/// Updates every particle with the mean-field, leave-one-out sample and
/// leave-one-out thresholded gains, sharing `y` and the noises `η_n`.
pub fn compare_analysis(
    ens: &Ensemble,
    truth: &MeanField,
    obs: &ObservationModel,
    rule: ThresholdRule,
    y: &DVector<f64>,
    etas: &[DVector<f64>],
    opts: AnalysisOptions,
) -> Result<AnalysisComparison> {
    if etas.len() != ens.count() {
        return Err(Error::DimensionMismatch(format!(
            "{} noise draws for {} particles",
            etas.len(),
            ens.count()
        )));
    }
    let loo = LooCovariances::new(ens, rule)?;
    let sw = obs.weight().sqrt();
    let scale = obs.operator_norm() * obs.gamma_inv_norm() * truth.op_norm;
    let mut particles = Vec::with_capacity(ens.count());
    let mut continuity = Vec::new();
    for n in 0..ens.count() {
        let u = ens.field(n);
        let pair = loo.get(n)?;
        let localized = if opts.project_psd {
            psd_projection(&pair.thresholded)?
        } else {
            pair.thresholded
        };
        let k_sample = kalman_gain(&pair.sample, obs)?;
        let k_local = kalman_gain(&localized, obs)?;
        let innov = innovation(u, &etas[n], y, obs);
        let innovation_norm = innov.norm();
        particles.push(ParticleDiscrepancy {
            particle: n,
            disc_vanilla: sw * ((&k_sample - &truth.gain) * &innov).norm(),
            disc_localized: sw * ((&k_local - &truth.gain) * &innov).norm(),
            innovation_norm,
            c_const: scale * innovation_norm,
        });
        if opts.check_continuity {
            continuity.push(continuity_check(&pair.sample, &k_sample, truth, obs)?);
            continuity.push(continuity_check(&localized, &k_local, truth, obs)?);
        }
    }
    Ok(AnalysisComparison {
        particles,
        continuity,
    })
}

/// Settings of [`analysis_step_experiment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnkfExperiment {
    pub n: usize,
    pub rule: ThresholdRule,
    pub trials: usize,
    pub seed: u64,
    pub options: AnalysisOptions,
}

/// Per-trial comparisons plus summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EnkfSummary {
    pub trials: Vec<AnalysisComparison>,
}

impl EnkfSummary {
    pub fn trial_means(&self) -> (Vec<f64>, Vec<f64>) {
        self.trials
            .iter()
            .map(|t| (t.mean_vanilla(), t.mean_localized()))
            .unzip()
    }

    pub fn mean_vanilla(&self) -> f64 {
        stats::mean(&self.trial_means().0)
    }

    pub fn mean_localized(&self) -> f64 {
        stats::mean(&self.trial_means().1)
    }

    /// Fraction of trials whose localized mean discrepancy is the smaller one.
    pub fn fraction_localized_better(&self) -> f64 {
        let wins = self.trials.iter().filter(|t| t.localized_better()).count();
        wins as f64 / self.trials.len() as f64
    }

    pub fn continuity_violations(&self) -> usize {
        self.trials
            .iter()
            .flat_map(|t| &t.continuity)
            .filter(|c| !c.holds())
            .count()
    }

    fn all(&self, f: impl Fn(&ParticleDiscrepancy) -> f64) -> Vec<f64> {
        self.trials.iter().flat_map(|t| t.particles.iter().map(&f)).collect()
    }

    /// 50/90/99% quantiles of the per-particle vanilla discrepancies.
    pub fn vanilla_quantiles(&self) -> [f64; 3] {
        stats::quantiles_50_90_99(&self.all(|p| p.disc_vanilla))
    }

    pub fn localized_quantiles(&self) -> [f64; 3] {
        stats::quantiles_50_90_99(&self.all(|p| p.disc_localized))
    }
}

/// Draws one trial: ensemble, truth observation and per-particle noises.
pub fn run_trial(
    sampler: &GaussianSampler,
    mesh: &Mesh,
    truth: &MeanField,
    obs: &ObservationModel,
    cfg: &EnkfExperiment,
    trial: usize,
) -> Result<AnalysisComparison> {
    let t = trial as u64;
    let mut ens_rng = rng::substream(cfg.seed, &[t, 0]);
    let ens = sampler.sample_with(mesh, cfg.n, &mut ens_rng, cfg.seed)?;
    let mut truth_rng = rng::substream(cfg.seed, &[t, 1]);
    let u_true = sampler.sample_with(mesh, 1, &mut truth_rng, cfg.seed)?;
    let mut noise_rng = rng::substream(cfg.seed, &[t, 2]);
    let y = obs.observe(u_true.field(0)) + obs.draw_noise(&mut noise_rng);
    let etas: Vec<DVector<f64>> = (0..cfg.n).map(|_| obs.draw_noise(&mut noise_rng)).collect();
    compare_analysis(&ens, truth, obs, cfg.rule, &y, &etas, cfg.options)
}

/// Repeats the three-filter comparison over independent trials.
pub fn analysis_step_experiment(
    kernel: &KernelModel,
    mesh: &Mesh,
    obs: &ObservationModel,
    cfg: &EnkfExperiment,
) -> Result<EnkfSummary> {
    if cfg.n < 2 {
        return Err(invalid("N", format!("must be at least 2, got {}", cfg.n)));
    }
    if cfg.trials < 10 {
        return Err(invalid("trials", format!("must be at least 10, got {}", cfg.trials)));
    }
    let cov = covariance_matrix(kernel, mesh)?;
    let sampler = GaussianSampler::new(&cov)?;
    let truth = MeanField::new(cov, obs)?;
    let trials: Result<Vec<AnalysisComparison>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(&sampler, mesh, &truth, obs, cfg, t))
        .collect();
    Ok(EnkfSummary { trials: trials? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::ThresholdForm;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn scalar_obs() -> ObservationModel {
        ObservationModel::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0), 1.0).unwrap()
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::from_seed(seed);
        let b = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(n, n) * 0.1
    }

    fn ensemble(len: usize, n: usize, seed: u64) -> Ensemble {
        let mut r = rng::from_seed(seed);
        let mesh = Mesh::new(1, len).unwrap();
        let values = (0..len * n).map(|_| StandardNormal.sample(&mut r)).collect();
        Ensemble::from_fields(mesh, values, seed, 0.0).unwrap()
    }

    #[test]
    fn scalar_examples() {
        let obs = scalar_obs();
        let c = CovMatrix::new(DMatrix::from_element(1, 1, 1.0), 1.0).unwrap();
        let k = kalman_gain(&c, &obs).unwrap();
        assert!((k[(0, 0)] - 0.5).abs() < 1e-15);
        let y = DVector::from_element(1, 2.0);
        let eta = DVector::zeros(1);
        assert!((analysis_update(&[0.0], &eta, &y, &obs, &k).unwrap()[0] - 1.0).abs() < 1e-15);
        let zero = CovMatrix::new(DMatrix::zeros(1, 1), 1.0).unwrap();
        assert_eq!(kalman_gain(&zero, &obs).unwrap()[(0, 0)], 0.0);
        assert_eq!(gain_continuity_bound(0.0, 1.0, &obs), 0.0);
        assert!((gain_continuity_bound(0.1, 1.0, &obs) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn gain_residual() {
        let c = random_spd(8, 1);
        let mut r = rng::from_seed(2);
        let a = DMatrix::from_fn(3, 8, |_, _| r.random_range(-1.0..1.0));
        let obs = ObservationModel::new(a.clone(), DMatrix::identity(3, 3), 0.125).unwrap();
        let cov = CovMatrix::new(c.clone(), 0.125).unwrap();
        let k = kalman_gain(&cov, &obs).unwrap();
        let lhs = &k * (&a * &c * a.transpose() + DMatrix::identity(3, 3));
        let rhs = &c * a.transpose();
        assert!((lhs - &rhs).norm() <= 1e-10 * rhs.norm());
    }

    #[test]
    fn fixed_point_and_zero_gain() {
        let mesh = Mesh::new(1, 10).unwrap();
        let obs = ObservationModel::pointwise(&mesh, 3, DEFAULT_NOISE_STD).unwrap();
        let u: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let eta = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let y = obs.observe(&u) + &eta;
        let k = kalman_gain(&CovMatrix::new(random_spd(10, 4), 0.1).unwrap(), &obs).unwrap();
        let v = analysis_update(&u, &eta, &y, &obs, &k).unwrap();
        assert!(v.iter().zip(&u).all(|(a, b)| (a - b).abs() < 1e-14));
        let y2 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(analysis_update(&u, &eta, &y2, &obs, &DMatrix::zeros(10, 3)).unwrap(), u);
    }

    #[test]
    fn observation_operators() {
        let mesh = Mesh::new(1, 100).unwrap();
        assert_eq!(observation_sites(&mesh, 4).unwrap(), vec![12, 37, 62, 87]);
        let p = ObservationModel::pointwise(&mesh, 4, 0.5).unwrap();
        assert!((p.operator_norm() - 10.0).abs() < 1e-12);
        assert!((p.gamma_inv_norm() - 4.0).abs() < 1e-12);
        let l = ObservationModel::local_average(&mesh, 4, 0.025, 0.5).unwrap();
        for r in 0..4 {
            assert!((l.matrix().row(r).sum() - 1.0).abs() < 1e-12);
        }
        assert!(l.operator_norm() < p.operator_norm());
        assert!(ObservationModel::pointwise(&mesh, 0, 0.5).is_err());
        assert!(ObservationModel::pointwise(&mesh, 4, 0.0).is_err());
        let bad = DMatrix::from_diagonal_element(2, 2, -1.0);
        assert!(ObservationModel::new(DMatrix::zeros(2, 3), bad, 1.0).is_err());
    }

    #[test]
    fn downdate_matches_direct() {
        let ens = ensemble(6, 5, 11);
        let loo = loo_covariances(&ens, ThresholdRule::standard()).unwrap();
        for n in 0..5 {
            let got = loo.sample(n);
            for i in 0..6 {
                for j in 0..6 {
                    let direct: f64 = (0..5)
                        .filter(|&m| m != n)
                        .map(|m| ens.field(m)[i] * ens.field(m)[j])
                        .sum::<f64>()
                        / 4.0;
                    assert!((got.get(i, j) - direct).abs() < 1e-12);
                }
            }
        }
        let two = ensemble(3, 2, 5);
        let loo = loo_covariances(&two, ThresholdRule::standard()).unwrap();
        let c = loo.sample(0);
        let u = two.field(1);
        for i in 0..3 {
            for j in 0..3 {
                assert!((c.get(i, j) - u[i] * u[j]).abs() < 1e-14);
            }
        }
        assert!(loo_covariances(&ensemble(3, 1, 5), ThresholdRule::standard()).is_err());
    }

    #[test]
    fn loo_threshold_is_close_to_full() {
        let k = KernelModel::squared_exponential(0.05).unwrap();
        let mesh = Mesh::new(1, 100).unwrap();
        let cov = covariance_matrix(&k, &mesh).unwrap();
        let ens = GaussianSampler::new(&cov).unwrap().sample(&mesh, 100, 3).unwrap();
        for rule in [
            ThresholdRule::standard(),
            ThresholdRule::new(5.0, ThresholdForm::Full).unwrap(),
        ] {
            let full = rule.from_sups(ens.sups()).unwrap();
            let loo = loo_covariances(&ens, rule).unwrap();
            for n in 0..100 {
                let rel = (loo.rho_hat(n).unwrap() - full).abs() / full;
                assert!(rel * 100.0 < 5.0, "n={n} rel={rel}");
            }
        }
    }

    #[test]
    fn shared_noise_identity() {
        let mesh = Mesh::new(1, 12).unwrap();
        let k = KernelModel::squared_exponential(0.1).unwrap();
        let cov = covariance_matrix(&k, &mesh).unwrap();
        let obs = ObservationModel::pointwise(&mesh, 3, DEFAULT_NOISE_STD).unwrap();
        let truth = MeanField::new(cov.clone(), &obs).unwrap();
        let ens = GaussianSampler::new(&cov).unwrap().sample(&mesh, 6, 8).unwrap();
        let loo = loo_covariances(&ens, ThresholdRule::standard()).unwrap();
        let mut r = rng::from_seed(9);
        let y = obs.draw_noise(&mut r);
        for n in 0..6 {
            let eta = obs.draw_noise(&mut r);
            let u = ens.field(n);
            let kn = kalman_gain(&loo.sample(n), &obs).unwrap();
            let v = analysis_update(u, &eta, &y, &obs, &kn).unwrap();
            let vs = analysis_update(u, &eta, &y, &obs, &truth.gain).unwrap();
            let diff = (&kn - &truth.gain) * innovation(u, &eta, &y, &obs);
            for i in 0..12 {
                assert!((v[i] - vs[i] - diff[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_equal_fields() {
        let mesh = Mesh::new(1, 8).unwrap();
        let k = KernelModel::squared_exponential(0.2).unwrap();
        let obs = ObservationModel::pointwise(&mesh, 2, DEFAULT_NOISE_STD).unwrap();
        let truth = MeanField::new(covariance_matrix(&k, &mesh).unwrap(), &obs).unwrap();
        let field: Vec<f64> = (0..8).map(|i| 0.3 * i as f64 - 1.0).collect();
        let ens = Ensemble::from_fields(mesh, field.repeat(4), 0, 0.0).unwrap();
        let y = DVector::from_vec(vec![0.5, -0.5]);
        let etas = vec![DVector::zeros(2); 4];
        let opts = AnalysisOptions {
            check_continuity: true,
            ..Default::default()
        };
        let cmp = compare_analysis(&ens, &truth, &obs, ThresholdRule::standard(), &y, &etas, opts).unwrap();
        assert!(cmp.particles.iter().all(|p| p.disc_vanilla.is_finite() && p.disc_localized.is_finite()));
        assert!(cmp.continuity_holds());
    }

    #[test]
    fn experiment_validates_inputs() {
        let mesh = Mesh::new(1, 8).unwrap();
        let k = KernelModel::squared_exponential(0.2).unwrap();
        let obs = ObservationModel::pointwise(&mesh, 2, DEFAULT_NOISE_STD).unwrap();
        let mut cfg = EnkfExperiment {
            n: 1,
            rule: ThresholdRule::standard(),
            trials: 10,
            seed: 0,
            options: AnalysisOptions::default(),
        };
        assert!(analysis_step_experiment(&k, &mesh, &obs, &cfg).is_err());
        cfg.n = 4;
        cfg.trials = 9;
        assert!(analysis_step_experiment(&k, &mesh, &obs, &cfg).is_err());
        cfg.trials = 10;
        let a = analysis_step_experiment(&k, &mesh, &obs, &cfg).unwrap();
        let b = analysis_step_experiment(&k, &mesh, &obs, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 10);
        assert!(a.trials.iter().all(|t| t.particles.len() == 4));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn continuity_inequality_holds(seed in any::<u64>(), eps in 0.001f64..1.0) {
            let w = 1.0 / 16.0;
            let c = random_spd(16, seed);
            let mut r = rng::from_seed(seed ^ 0xabc);
            let p = random_spd(16, seed.wrapping_add(1)) * eps;
            let chat = &c + p - DMatrix::identity(16, 16) * (0.05 * eps * r.random::<f64>());
            let chat = (&chat + chat.transpose()) * 0.5;
            prop_assume!(dense_eigenvalues(&chat).unwrap()[0] >= 0.0);
            let a = DMatrix::from_fn(4, 16, |_, _| r.random_range(-1.0..1.0));
            let obs = ObservationModel::new(a, DMatrix::identity(4, 4) * 0.5, w).unwrap();
            let truth = MeanField::new(CovMatrix::new(c, w).unwrap(), &obs).unwrap();
            let est = CovMatrix::new(chat, w).unwrap();
            let k = kalman_gain(&est, &obs).unwrap();
            let check = continuity_check(&est, &k, &truth, &obs).unwrap();
            prop_assert!(check.holds(), "{:?}", check);
        }
    }
}
