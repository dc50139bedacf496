//! Sample and hard-thresholded covariance estimators, the data-driven
//! threshold, PSD projection and the norms used for error reporting.
//!
//! Relative errors are weight-free: the discretized operator is
//! `weight * matrix`, so the weight cancels in `|est - truth| / |truth|`.
//! Absolute operator norms elsewhere always include the weight.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Difference, EigOptions, Gram, SpectralMethod, SymOperator};
use crate::sampling::{mirror_upper, CovMatrix, Ensemble};

/// Which closed form of the threshold is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdForm {
    /// `c0 * max(1/N, S/sqrt(N), S^2/N)`, valid for `1 <= c0 <= sqrt(N)`.
    Full,
    /// `c0 * S / sqrt(N)`, the small-lengthscale form.
    Simplified,
}

impl fmt::Display for ThresholdForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdForm::Full => "full",
            ThresholdForm::Simplified => "simplified",
        })
    }
}

impl FromStr for ThresholdForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "simplified" => Ok(Self::Simplified),
            other => Err(invalid("form", format!("expected `full` or `simplified`, got `{other}`"))),
        }
    }
}

/// Prefactor and form of the data-driven threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRule {
    pub c0: f64,
    pub form: ThresholdForm,
}

impl ThresholdRule {
    pub fn new(c0: f64, form: ThresholdForm) -> Result<Self> {
        if !(c0.is_finite() && c0 >= 1.0) {
            return Err(invalid("c0", format!("must be at least 1, got {c0}")));
        }
        Ok(Self { c0, form })
    }

    /// `c0 = 5`, simplified form.
    pub fn standard() -> Self {
        Self {
            c0: 5.0,
            form: ThresholdForm::Simplified,
        }
    }

    /// Threshold from a sample size and a (possibly population) mean supremum.
    ///
    /// The simplified form is clamped at zero: a negative mean supremum
    /// keeps every entry, exactly as a zero threshold would.
    pub fn level(&self, n: usize, mean_sup: f64) -> Result<f64> {
        if n == 0 {
            return Err(invalid("N", "must be at least 1"));
        }
        let nf = n as f64;
        let sqrt_n = nf.sqrt();
        match self.form {
            ThresholdForm::Full => {
                if self.c0 > sqrt_n {
                    return Err(Error::PrefactorTooLarge {
                        c0: self.c0,
                        sqrt_n,
                    });
                }
                let terms = [1.0 / nf, mean_sup / sqrt_n, mean_sup * mean_sup / nf];
                Ok(self.c0 * terms.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
            ThresholdForm::Simplified => Ok((self.c0 * mean_sup / sqrt_n).max(0.0)),
        }
    }

    /// Threshold from a set of per-field suprema.
    pub fn from_sups(&self, sups: &[f64]) -> Result<f64> {
        if sups.is_empty() {
            return Err(invalid("N", "must be at least 1"));
        }
        let mean = sups.iter().sum::<f64>() / sups.len() as f64;
        self.level(sups.len(), mean)
    }
}

/// Data-driven threshold computed from the ensemble's mean supremum.
pub fn threshold_parameter(ens: &Ensemble, rule: &ThresholdRule) -> Result<f64> {
    rule.level(ens.count(), ens.sup_mean())
}

/// `(1/N) sum_n u_n u_n^T`, no mean subtraction.
pub fn sample_covariance(ens: &Ensemble) -> CovMatrix {
    sample_covariance_with(ens, false)
}

/// Sample covariance with optional centering by the ensemble mean
/// (divisor stays `N`).
pub fn sample_covariance_with(ens: &Ensemble, center: bool) -> CovMatrix {
    let len = ens.mesh().len();
    let count = ens.count();
    let mut f = DMatrix::from_column_slice(len, count, ens.values());
    if center && count > 0 {
        let mean = f.column_mean();
        for mut col in f.column_iter_mut() {
            col -= &mean;
        }
    }
    let mut c = &f * f.transpose();
    c /= count.max(1) as f64;
    mirror_upper(&mut c);
    CovMatrix::new(c, ens.mesh().weight()).expect("mirrored matrix is symmetric")
}

/// Zeroes every entry with `|entry| < rho`; ties are kept.
pub fn hard_threshold(cov: &CovMatrix, rho: f64) -> CovMatrix {
    cov.map(|x| if x.abs() >= rho { x } else { 0.0 })
}

/// Fraction of nonzero entries.
pub fn nnz_fraction(cov: &CovMatrix) -> f64 {
    let n = cov.order();
    if n == 0 {
        return 0.0;
    }
    cov.entries().iter().filter(|x| **x != 0.0).count() as f64 / (n * n) as f64
}

/// Clips negative eigenvalues to zero and reconstructs the matrix.
pub fn psd_projection(cov: &CovMatrix) -> Result<CovMatrix> {
    let eig = linalg::dense_eigen(cov.entries())?;
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * clipped[j]);
    let mut out = scaled * v.transpose();
    mirror_upper(&mut out);
    Ok(CovMatrix::new(out, cov.weight()).expect("mirrored matrix is symmetric"))
}

/// Largest absolute eigenvalue by Lanczos with the default options.
pub fn spectral_norm(cov: &CovMatrix) -> Result<f64> {
    spectral_norm_with(cov, SpectralMethod::Lanczos, &EigOptions::default())
}

pub fn spectral_norm_with<A: SymOperator + ?Sized>(
    op: &A,
    method: SpectralMethod,
    opts: &EigOptions,
) -> Result<f64> {
    linalg::spectral_norm_of(op, method, opts)
}

/// `|est - truth| / |truth|` in the spectral norm.
pub fn relative_error(est: &CovMatrix, truth: &CovMatrix) -> Result<f64> {
    let truth_norm = spectral_norm(truth)?;
    relative_error_op(est, truth, truth_norm, &EigOptions::default())
}

/// Relative error for any symmetric operator estimate, with the truth norm
/// supplied by the caller. The difference is applied matrix-free.
pub fn relative_error_op<A: SymOperator + ?Sized>(
    est: &A,
    truth: &CovMatrix,
    truth_norm: f64,
    opts: &EigOptions,
) -> Result<f64> {
    if est.order() != truth.order() {
        return Err(Error::DimensionMismatch(format!(
            "estimate order {} vs truth order {}",
            est.order(),
            truth.order()
        )));
    }
    if truth_norm == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let diff = Difference {
        lhs: est,
        rhs: truth,
    };
    Ok(linalg::lanczos_abs_max(&diff, opts)?.abs_max() / truth_norm)
}

/// `weight * max_i sum_j |C_ij|`, an upper bound on the weighted spectral
/// norm of a symmetric matrix.
pub fn l1_operator_bound(cov: &CovMatrix) -> f64 {
    let n = cov.order();
    let a = cov.entries().as_slice();
    let max_col = (0..n)
        .map(|j| a[j * n..(j + 1) * n].iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    cov.weight() * max_col
}

/// One trial's estimator diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorReport {
    pub rho_hat: f64,
    pub eps_sample: f64,
    pub eps_thresh: f64,
    pub nnz_fraction: f64,
    /// Most negative eigenvalue of the thresholded matrix, 0 if it is PSD.
    pub psd_min_eig: f64,
}

/// The truth matrix with its spectral norm computed once, for repeated trials.
#[derive(Debug, Clone)]
pub struct Reference {
    pub truth: CovMatrix,
    pub norm: f64,
    pub opts: EigOptions,
}

impl Reference {
    pub fn new(truth: CovMatrix) -> Result<Self> {
        let opts = EigOptions::default();
        let norm = spectral_norm_with(&truth, SpectralMethod::Lanczos, &opts)?;
        if norm == 0.0 {
            return Err(Error::ZeroMatrix);
        }
        Ok(Self { truth, norm, opts })
    }

    /// Sample and thresholded estimates with relative errors and diagnostics.
    pub fn report(&self, ens: &Ensemble, rule: &ThresholdRule) -> Result<EstimatorReport> {
        let len = self.truth.order();
        if ens.mesh().len() != len {
            return Err(Error::DimensionMismatch(format!(
                "ensemble has {} points, truth has order {len}",
                ens.mesh().len()
            )));
        }
        let rho_hat = threshold_parameter(ens, rule)?;
        let gram = Gram {
            rows: ens.values(),
            count: ens.count(),
            len,
        };
        let eps_sample = relative_error_op(&gram, &self.truth, self.norm, &self.opts)?;
        let thresholded = hard_threshold(&sample_covariance(ens), rho_hat);
        let nnz = nnz_fraction(&thresholded);
        if nnz == 0.0 {
            return Ok(EstimatorReport {
                rho_hat,
                eps_sample,
                eps_thresh: 1.0,
                nnz_fraction: 0.0,
                psd_min_eig: 0.0,
            });
        }
        let eps_thresh = relative_error_op(&thresholded, &self.truth, self.norm, &self.opts)?;
        // Diagnostic only; both extremes to a looser tolerance.
        let diag_opts = EigOptions {
            rel_tol: 1e-6,
            ..self.opts
        };
        let extremes = linalg::lanczos_extremes(&thresholded, &diag_opts)?;
        Ok(EstimatorReport {
            rho_hat,
            eps_sample,
            eps_thresh,
            nnz_fraction: nnz,
            psd_min_eig: extremes.min.min(0.0),
        })
    }
}

/// Convenience wrapper computing the truth norm on every call.
pub fn estimate_and_report(
    ens: &Ensemble,
    truth: &CovMatrix,
    rule: &ThresholdRule,
) -> Result<EstimatorReport> {
    Reference::new(truth.clone())?.report(ens, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelModel;
    use crate::rng;
    use crate::sampling::{covariance_matrix, sample_ensemble, Mesh};
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn cov(rows: usize, data: &[f64], weight: f64) -> CovMatrix {
        CovMatrix::new(DMatrix::from_row_slice(rows, rows, data), weight).unwrap()
    }

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::from_seed(seed);
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut r));
        let mut s = (&g + g.transpose()) * 0.5;
        mirror_upper(&mut s);
        s
    }

    #[test]
    fn sample_covariance_examples() {
        let mesh = Mesh::new(1, 2).unwrap();
        let ens = Ensemble::from_fields(mesh.clone(), vec![1.0, -1.0], 0, 0.0).unwrap();
        assert_eq!(sample_covariance(&ens), cov(2, &[1.0, -1.0, -1.0, 1.0], 0.5));
        let zeros = Ensemble::from_fields(mesh, vec![0.0; 6], 0, 0.0).unwrap();
        assert_eq!(sample_covariance(&zeros).entries(), &DMatrix::zeros(2, 2));
    }

    #[test]
    fn centering_removes_the_mean() {
        let mesh = Mesh::new(1, 2).unwrap();
        let ens = Ensemble::from_fields(mesh, vec![1.0, 1.0, 3.0, 3.0], 0, 0.0).unwrap();
        let c = sample_covariance_with(&ens, true);
        assert_eq!(c.entries(), &DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn threshold_examples() {
        let full = ThresholdRule::new(1.0, ThresholdForm::Full).unwrap();
        assert_eq!(full.level(4, 0.0).unwrap(), 0.25);
        assert_eq!(full.level(4, 2.0).unwrap(), 1.0);
        let simplified = ThresholdRule::new(5.0, ThresholdForm::Simplified).unwrap();
        assert_eq!(simplified.level(4, 2.0).unwrap(), 5.0);
        assert_eq!(simplified.level(4, -1.0).unwrap(), 0.0);
        let strict = ThresholdRule::new(5.0, ThresholdForm::Full).unwrap();
        assert!(matches!(strict.level(16, 1.0), Err(Error::PrefactorTooLarge { .. })));
        assert!(strict.level(25, 1.0).is_ok());
        assert!(ThresholdRule::new(0.5, ThresholdForm::Full).is_err());
        assert_eq!("Simplified".parse::<ThresholdForm>().unwrap(), ThresholdForm::Simplified);
        assert!("soft".parse::<ThresholdForm>().is_err());
    }

    #[test]
    fn hard_threshold_examples() {
        let a = cov(2, &[1.0, 0.3, 0.3, 1.0], 0.5);
        assert_eq!(hard_threshold(&a, 0.0), a);
        assert_eq!(hard_threshold(&a, 0.3), a);
        assert_eq!(hard_threshold(&a, 0.5), cov(2, &[1.0, 0.0, 0.0, 1.0], 0.5));
        assert_eq!(nnz_fraction(&hard_threshold(&a, 0.5)), 0.5);
    }

    #[test]
    fn psd_projection_examples() {
        let d = cov(2, &[1.0, 0.0, 0.0, -0.5], 1.0);
        let p = psd_projection(&d).unwrap();
        assert!((p.entries() - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-15);

        let se = KernelModel::squared_exponential(0.2).unwrap();
        let c = covariance_matrix(&se, &Mesh::new(1, 10).unwrap()).unwrap();
        let p = psd_projection(&c).unwrap();
        let scale = spectral_norm(&c).unwrap();
        assert!((p.entries() - c.entries()).amax() <= 1e-10 * scale);
    }

    #[test]
    fn psd_projection_moves_by_the_negative_eigenvalue() {
        // Random symmetric 6x6 with exactly one negative eigenvalue.
        let q = random_symmetric(6, 4).symmetric_eigen().eigenvectors;
        let lambdas = DVector::from_vec(vec![3.0, 2.0, 1.5, 1.0, 0.4, -0.7]);
        let a = &q * DMatrix::from_diagonal(&lambdas) * q.transpose();
        let mut a = (&a + a.transpose()) * 0.5;
        mirror_upper(&mut a);
        let a = CovMatrix::new(a, 1.0).unwrap();
        let p = psd_projection(&a).unwrap();
        let mut diff = p.entries() - a.entries();
        mirror_upper(&mut diff);
        let moved = linalg::dense_spectral_norm(&diff).unwrap();
        let most_negative = linalg::dense_eigenvalues(a.entries()).unwrap()[0];
        assert!((moved - most_negative.abs()).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_examples() {
        let d = CovMatrix::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -5.0, 1.0])),
            1.0,
        )
        .unwrap();
        assert!((spectral_norm(&d).unwrap() - 5.0).abs() < 1e-12);
        let id = CovMatrix::new(DMatrix::identity(30, 30), 1.0).unwrap();
        assert!((spectral_norm(&id).unwrap() - 1.0).abs() < 1e-12);
        let r = CovMatrix::new(random_symmetric(100, 8), 1.0).unwrap();
        let dense = linalg::dense_spectral_norm(r.entries()).unwrap();
        assert!((spectral_norm(&r).unwrap() - dense).abs() <= 1e-8 * dense);
    }

    #[test]
    fn relative_error_examples() {
        let se = KernelModel::squared_exponential(0.1).unwrap();
        let c = covariance_matrix(&se, &Mesh::new(1, 30).unwrap()).unwrap();
        assert_eq!(relative_error(&c, &c).unwrap(), 0.0);
        let doubled = c.map(|x| 2.0 * x);
        assert!((relative_error(&doubled, &c).unwrap() - 1.0).abs() < 1e-9);
        let id = CovMatrix::new(DMatrix::identity(5, 5), 0.2).unwrap();
        let shifted = CovMatrix::new(DMatrix::identity(5, 5) * 1.1, 0.2).unwrap();
        assert!((relative_error(&shifted, &id).unwrap() - 0.1).abs() < 1e-12);
        let zero = CovMatrix::new(DMatrix::zeros(5, 5), 0.2).unwrap();
        assert_eq!(relative_error(&id, &zero), Err(Error::ZeroMatrix));
    }

    #[test]
    fn l1_bound_examples() {
        let id = CovMatrix::new(DMatrix::identity(4, 4), 0.25).unwrap();
        assert_eq!(l1_operator_bound(&id), 0.25);
        let ones = cov(2, &[1.0, 1.0, 1.0, 1.0], 0.5);
        assert_eq!(l1_operator_bound(&ones), 1.0);
        assert!((0.5 * spectral_norm(&ones).unwrap() - 1.0).abs() < 1e-12);

        let se = KernelModel::squared_exponential(0.05).unwrap();
        let c = covariance_matrix(&se, &Mesh::new(1, 1250).unwrap()).unwrap();
        let weighted = c.weight() * linalg::dense_spectral_norm(c.entries()).unwrap();
        assert!(l1_operator_bound(&c) >= weighted);
    }

    #[test]
    fn zero_field_report() {
        let mesh = Mesh::new(1, 4).unwrap();
        let se = KernelModel::squared_exponential(0.3).unwrap();
        let truth = covariance_matrix(&se, &mesh).unwrap();
        let ens = Ensemble::from_fields(mesh, vec![0.0; 4], 0, 0.0).unwrap();
        let rule = ThresholdRule::new(1.0, ThresholdForm::Full).unwrap();
        let r = estimate_and_report(&ens, &truth, &rule).unwrap();
        assert!((r.eps_sample - 1.0).abs() < 1e-12);
        assert_eq!(r.rho_hat, 1.0);
        assert_eq!(r.nnz_fraction, 0.0);
        assert_eq!(r.psd_min_eig, 0.0);
    }

    #[test]
    fn matrix_free_sample_error_matches_dense() {
        let mesh = Mesh::new(1, 40).unwrap();
        let se = KernelModel::squared_exponential(0.05).unwrap();
        let truth = covariance_matrix(&se, &mesh).unwrap();
        let ens = sample_ensemble(&truth, &mesh, 7, 3).unwrap();
        let rule = ThresholdRule::standard();
        let r = estimate_and_report(&ens, &truth, &rule).unwrap();
        let sample = sample_covariance(&ens);
        let mut diff = sample.entries() - truth.entries();
        mirror_upper(&mut diff);
        let dense = linalg::dense_spectral_norm(&diff).unwrap()
            / linalg::dense_spectral_norm(truth.entries()).unwrap();
        assert!((r.eps_sample - dense).abs() < 1e-8 * dense);
    }

    proptest! {
        #[test]
        fn thresholding_is_idempotent_and_monotone(seed in 0u64..500, r1 in 0.0f64..2.0, dr in 0.0f64..1.0) {
            let a = CovMatrix::new(random_symmetric(8, seed), 1.0).unwrap();
            let once = hard_threshold(&a, r1);
            prop_assert_eq!(hard_threshold(&once, r1), once.clone());
            let higher = hard_threshold(&a, r1 + dr);
            for (lo, hi) in once.entries().iter().zip(higher.entries().iter()) {
                prop_assert!(*hi == 0.0 || *lo != 0.0);
            }
        }

        #[test]
        fn sample_covariance_is_psd(seed in 0u64..200, n in 1usize..12) {
            let mesh = Mesh::new(1, 9).unwrap();
            let mut r = rng::from_seed(seed);
            let values: Vec<f64> = (0..n * 9).map(|_| StandardNormal.sample(&mut r)).collect();
            let ens = Ensemble::from_fields(mesh, values, seed, 0.0).unwrap();
            let c = sample_covariance(&ens);
            let ev = linalg::dense_eigenvalues(c.entries()).unwrap();
            let scale = ev.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!(ev[0] >= -1e-10 * scale.max(1e-300));
        }

        #[test]
        fn relative_error_is_scale_invariant(seed in 0u64..200, s in 0.01f64..100.0) {
            let a = CovMatrix::new(random_symmetric(10, seed), 1.0).unwrap();
            let b = CovMatrix::new(random_symmetric(10, seed + 1000), 1.0).unwrap();
            let e1 = relative_error(&a, &b).unwrap();
            let e2 = relative_error(&a.map(|x| x * s), &b.map(|x| x * s)).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-8 * e1);
        }
    }
}
