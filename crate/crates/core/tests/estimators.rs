use nalgebra::DMatrix;
use opcov_core::enkf::LooCovariances;
use opcov_core::estimation::{hard_threshold, relative_error, sample_covariance};
use opcov_core::sampling::{covariance_matrix, sample_ensemble};
use opcov_core::{CovMatrix, Ensemble, KernelModel, Mesh, Reference, ThresholdForm, ThresholdRule};

fn ensemble(lambda: f64, m: usize, n: usize, seed: u64) -> (CovMatrix, Ensemble) {
    let mesh = Mesh::new(1, m).unwrap();
    let cov = covariance_matrix(&KernelModel::squared_exponential(lambda).unwrap(), &mesh).unwrap();
    let ens = sample_ensemble(&cov, &mesh, n, seed).unwrap();
    (cov, ens)
}

#[test]
fn leave_one_out_matches_direct_recomputation() {
    let (_, ens) = ensemble(0.1, 24, 9, 11);
    let rule = ThresholdRule::new(1.5, ThresholdForm::Full).unwrap();
    let loo = LooCovariances::new(&ens, rule).unwrap();
    for n in [0, 4, 8] {
        let kept: Vec<f64> = (0..9).filter(|&m| m != n).flat_map(|m| ens.field(m).to_vec()).collect();
        let direct = Ensemble::from_fields(ens.mesh().clone(), kept, 0, 0.0).unwrap();
        let pair = loo.get(n).unwrap();
        let s = sample_covariance(&direct);
        let diff = (pair.sample.entries() - s.entries()).abs().max();
        assert!(diff < 1e-12, "particle {n}: {diff}");
        let rho = rule.from_sups(direct.sups()).unwrap();
        assert!((pair.rho_hat - rho).abs() < 1e-14);
        assert_eq!(pair.thresholded.entries(), hard_threshold(&pair.sample, pair.rho_hat).entries());
    }
}

#[test]
fn zero_estimate_reports_unit_error() {
    let (cov, ens) = ensemble(0.01, 200, 23, 5);
    let rep = Reference::new(cov.clone()).unwrap().report(&ens, &ThresholdRule::standard()).unwrap();
    assert_eq!(rep.nnz_fraction, 0.0);
    assert_eq!(rep.eps_thresh, 1.0);
    let zero = CovMatrix::new(DMatrix::zeros(200, 200), cov.weight()).unwrap();
    assert!((relative_error(&zero, &cov).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn report_matches_explicit_errors() {
    let (cov, ens) = ensemble(0.3, 64, 40, 2);
    let rule = ThresholdRule::new(1.0, ThresholdForm::Simplified).unwrap();
    let rep = Reference::new(cov.clone()).unwrap().report(&ens, &rule).unwrap();
    let s = sample_covariance(&ens);
    let t = hard_threshold(&s, rep.rho_hat);
    assert!(rep.nnz_fraction > 0.0);
    assert!((rep.eps_sample - relative_error(&s, &cov).unwrap()).abs() < 1e-8 * rep.eps_sample);
    assert!((rep.eps_thresh - relative_error(&t, &cov).unwrap()).abs() < 1e-8 * rep.eps_thresh);
}
