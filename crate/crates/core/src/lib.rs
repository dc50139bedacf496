//! Covariance operator estimation for Gaussian random fields by hard
//! thresholding, with the supporting numerics (kernels, exact sampling,
//! spectral norms, quadrature) and an ensemble Kalman analysis step.

pub mod enkf;
pub mod error;
pub mod estimation;
pub mod kernels;
pub mod linalg;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod special;
pub mod stats;
pub mod theory;

pub use enkf::{AnalysisComparison, AnalysisOptions, EnkfExperiment, EnkfSummary, ObservationModel};
pub use error::{Error, Result};
pub use estimation::{EstimatorReport, Reference, ThresholdForm, ThresholdRule};
pub use kernels::{KernelFamily, KernelModel};
pub use linalg::{EigOptions, SpectralMethod, SymOperator};
pub use sampling::{CovMatrix, Ensemble, GaussianSampler, Mesh};
pub use theory::ScalingReport;
