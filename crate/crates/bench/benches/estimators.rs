use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use opcov_core::estimation::{hard_threshold, sample_covariance};
use opcov_core::linalg::{lanczos_abs_max, power_iteration, Difference, EigOptions};
use opcov_core::sampling::covariance_matrix;
use opcov_core::{GaussianSampler, KernelModel, Mesh, Reference, ThresholdRule};

fn setup(m: usize, lambda: f64) -> (Mesh, opcov_core::CovMatrix) {
    let mesh = Mesh::new(1, m).unwrap();
    let cov = covariance_matrix(&KernelModel::squared_exponential(lambda).unwrap(), &mesh).unwrap();
    (mesh, cov)
}

fn build(c: &mut Criterion) {
    let mut g = c.benchmark_group("build");
    for m in [312, 1250] {
        let mesh = Mesh::new(1, m).unwrap();
        let se = KernelModel::squared_exponential(0.01).unwrap();
        let matern = KernelModel::matern(0.01, 1.5).unwrap();
        g.bench_with_input(BenchmarkId::new("covariance_se", m), &m, |b, _| {
            b.iter(|| covariance_matrix(&se, &mesh).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("covariance_matern", m), &m, |b, _| {
            b.iter(|| covariance_matrix(&matern, &mesh).unwrap())
        });
    }
    g.sample_size(10);
    for m in [312, 1250] {
        let (_, cov) = setup(m, 0.01);
        g.bench_with_input(BenchmarkId::new("cholesky", m), &m, |b, _| {
            b.iter(|| GaussianSampler::new(&cov).unwrap())
        });
    }
    g.finish();
}

fn trial(c: &mut Criterion) {
    let mut g = c.benchmark_group("trial");
    g.sample_size(20);
    for (m, lambda) in [(312, 0.1), (312, 0.01), (1250, 0.01)] {
        let (mesh, cov) = setup(m, lambda);
        let sampler = GaussianSampler::new(&cov).unwrap();
        let ens = sampler.sample(&mesh, 29, 1).unwrap();
        let reference = Reference::new(cov.clone()).unwrap();
        let id = format!("m{m}_l{lambda}");
        g.bench_function(BenchmarkId::new("sample_n29", &id), |b| {
            b.iter(|| sampler.sample(&mesh, 29, 1).unwrap())
        });
        g.bench_function(BenchmarkId::new("report", &id), |b| {
            b.iter(|| reference.report(&ens, &ThresholdRule::standard()).unwrap())
        });
        let thresholded = hard_threshold(&sample_covariance(&ens), 0.2);
        let diff = Difference {
            lhs: &thresholded,
            rhs: &cov,
        };
        g.bench_function(BenchmarkId::new("lanczos_norm", &id), |b| {
            b.iter(|| lanczos_abs_max(&diff, &EigOptions::default()).unwrap())
        });
        g.bench_function(BenchmarkId::new("power_norm", &id), |b| {
            b.iter(|| power_iteration(&diff, &EigOptions::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, build, trial);
criterion_main!(benches);
