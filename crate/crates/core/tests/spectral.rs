use opcov_core::linalg::{dense_spectral_norm, lanczos_abs_max, spectral_norm_of, EigOptions, SpectralMethod};
use opcov_core::sampling::covariance_matrix;
use opcov_core::{KernelModel, Mesh};

// Smooth kernels have eigenvalues decaying continuously to rounding level;
// only the dominant end has to converge.
#[test]
fn smooth_kernel_norm_matches_dense() {
    let mesh = Mesh::new(1, 1250).unwrap();
    for kernel in [
        KernelModel::squared_exponential(0.1).unwrap(),
        KernelModel::squared_exponential(0.8).unwrap(),
        KernelModel::matern(0.3, 2.5).unwrap(),
    ] {
        let cov = covariance_matrix(&kernel, &mesh).unwrap();
        let dense = dense_spectral_norm(cov.entries()).unwrap();
        let lanczos = lanczos_abs_max(&cov, &EigOptions::default()).unwrap();
        assert!((lanczos.abs_max() - dense).abs() <= 1e-9 * dense, "{kernel}");
        let power = spectral_norm_of(&cov, SpectralMethod::Power, &EigOptions::default()).unwrap();
        assert!((power - dense).abs() <= 1e-8 * dense, "{kernel}");
    }
}

#[test]
fn two_dimensional_mesh_norm() {
    let mesh = Mesh::new(2, 30).unwrap();
    let cov = covariance_matrix(&KernelModel::matern(0.05, 1.5).unwrap(), &mesh).unwrap();
    let dense = dense_spectral_norm(cov.entries()).unwrap();
    let lanczos = spectral_norm_of(&cov, SpectralMethod::Lanczos, &EigOptions::default()).unwrap();
    assert!((lanczos - dense).abs() <= 1e-9 * dense);
}
