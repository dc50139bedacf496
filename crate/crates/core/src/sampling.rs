//! Meshes of the unit cube, discretized covariance matrices and exact
//! Gaussian ensembles.

use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernels::KernelModel;
use crate::rng;

/// Largest matrix order `covariance_matrix` builds by default.
pub const DEFAULT_MAX_ORDER: usize = 12_500;

/// Diagonal jitter values tried in order when factorizing for sampling.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Cell-centered uniform grid on `[0,1]^d` with `m` points per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    d: usize,
    m: usize,
    coords: Vec<f64>,
}

impl Mesh {
    /// Builds the grid with axis coordinates `(i + 1/2) / m`, points in
    /// lexicographic order (first axis varies slowest).
    pub fn new(d: usize, m: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(invalid("d", format!("must be 1, 2 or 3, got {d}")));
        }
        if m < 2 {
            return Err(invalid("m", format!("must be at least 2, got {m}")));
        }
        let len = m.pow(d as u32);
        let mut coords = Vec::with_capacity(len * d);
        for idx in 0..len {
            let mut rest = idx;
            let mut point = [0.0; 3];
            for axis in (0..d).rev() {
                point[axis] = ((rest % m) as f64 + 0.5) / m as f64;
                rest /= m;
            }
            coords.extend_from_slice(&point[..d]);
        }
        Ok(Self { d, m, coords })
    }

    /// A single-point "mesh" at the center of the unit interval. Only useful
    /// as a degenerate case in tests and experiments.
    pub fn single_point() -> Self {
        Self {
            d: 1,
            m: 1,
            coords: vec![0.5],
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn per_axis(&self) -> usize {
        self.m
    }

    /// Total number of points `L = m^d`.
    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Quadrature weight `1/L` (volume per cell).
    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn build_mesh(d: usize, m: usize) -> Result<Mesh> {
    Mesh::new(d, m)
}

/// Symmetric matrix representing a covariance function sampled on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    entries: DMatrix<f64>,
    weight: f64,
}

impl CovMatrix {
    /// Wraps a square matrix; rejects anything not exactly symmetric.
    pub fn new(entries: DMatrix<f64>, weight: f64) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "covariance must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let n = entries.nrows();
        for j in 0..n {
            for i in 0..j {
                if entries[(i, j)].to_bits() != entries[(j, i)].to_bits() {
                    return Err(invalid(
                        "entries",
                        format!("not symmetric at ({i}, {j})"),
                    ));
                }
            }
        }
        Ok(Self { entries, weight })
    }

    /// Builds a symmetric matrix from the upper triangle `f(i, j)`, `i <= j`.
    pub fn from_upper_fn(n: usize, weight: f64, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut entries = DMatrix::<f64>::zeros(n, n);
        entries
            .as_mut_slice()
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(j, col)| {
                for (i, v) in col.iter_mut().enumerate().take(j + 1) {
                    *v = f(i, j);
                }
            });
        mirror_upper(&mut entries);
        Self { entries, weight }
    }

    pub fn order(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Quadrature weight carried for operator-norm conversions.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Applies `f` to every entry; symmetry is preserved because `f` sees
    /// mirrored entries with identical values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            entries: self.entries.map(f),
            weight: self.weight,
        }
    }
}

impl crate::linalg::SymOperator for CovMatrix {
    fn order(&self) -> usize {
        self.order()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        crate::linalg::sym_matvec(&self.entries, x, y);
    }
}

/// Copies the upper triangle onto the lower one.
pub(crate) fn mirror_upper(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            a[(j, i)] = a[(i, j)];
        }
    }
}

/// `C_ij = k(|x_i - x_j|)` with the default size limit.
pub fn covariance_matrix(kernel: &KernelModel, mesh: &Mesh) -> Result<CovMatrix> {
    covariance_matrix_limited(kernel, mesh, DEFAULT_MAX_ORDER)
}

/// `C_ij = k(|x_i - x_j|)`; refuses orders above `max_order` before allocating.
pub fn covariance_matrix_limited(
    kernel: &KernelModel,
    mesh: &Mesh,
    max_order: usize,
) -> Result<CovMatrix> {
    kernel.validate()?;
    let n = mesh.len();
    if n > max_order {
        return Err(Error::TooLarge {
            order: n,
            max: max_order,
        });
    }
    let inv_lambda = 1.0 / kernel.lambda();
    Ok(CovMatrix::from_upper_fn(n, mesh.weight(), |i, j| {
        if i == j {
            1.0
        } else {
            kernel.profile(mesh.distance(i, j) * inv_lambda)
        }
    }))
}

/// `N` field realizations on a mesh, stored field-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    mesh: Mesh,
    fields: Vec<f64>,
    count: usize,
    sups: Vec<f64>,
    seed: u64,
    jitter: f64,
}

impl Ensemble {
    /// Builds an ensemble from explicit field values (`count` fields of
    /// length `mesh.len()`, concatenated).
    pub fn from_fields(mesh: Mesh, fields: Vec<f64>, seed: u64, jitter: f64) -> Result<Self> {
        let len = mesh.len();
        if len == 0 || !fields.len().is_multiple_of(len) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not split into fields of length {len}",
                fields.len()
            )));
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let count = fields.len() / len;
        let sups = fields.chunks_exact(len).map(field_max).collect();
        Ok(Self {
            mesh,
            fields,
            count,
            sups,
            seed,
            jitter,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// Number of fields `N`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn field(&self, n: usize) -> &[f64] {
        let len = self.mesh.len();
        &self.fields[n * len..(n + 1) * len]
    }

    pub fn fields(&self) -> impl Iterator<Item = &[f64]> {
        self.fields.chunks_exact(self.mesh.len())
    }

    /// All values, field-major.
    pub fn values(&self) -> &[f64] {
        &self.fields
    }

    /// Per-field maxima over the mesh.
    pub fn sups(&self) -> &[f64] {
        &self.sups
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Diagonal jitter used by the factorization that produced the ensemble.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Mean of the per-field maxima.
    pub fn sup_mean(&self) -> f64 {
        ensemble_sup_mean(self)
    }
}

fn field_max(field: &[f64]) -> f64 {
    field.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Arithmetic mean of the per-field suprema.
pub fn ensemble_sup_mean(ens: &Ensemble) -> f64 {
    if ens.sups.is_empty() {
        return 0.0;
    }
    ens.sups.iter().sum::<f64>() / ens.sups.len() as f64
}

/// Exact sampler for `N(0, C)`: a Cholesky factor computed once and reused.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
    jitter: f64,
}

impl GaussianSampler {
    /// Factorizes `cov + eps I`, escalating `eps` along [`JITTER_LADDER`].
    pub fn new(cov: &CovMatrix) -> Result<Self> {
        let n = cov.order();
        for &eps in &JITTER_LADDER {
            let mut a = cov.entries().clone();
            for i in 0..n {
                a[(i, i)] += eps;
            }
            if let Some(chol) = Cholesky::new(a) {
                return Ok(Self {
                    factor: chol.unpack(),
                    jitter: eps,
                });
            }
        }
        Err(Error::FactorizationFailed {
            jitter: *JITTER_LADDER.last().unwrap(),
        })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn order(&self) -> usize {
        self.factor.nrows()
    }

    /// Draws `count` fields using the generator `rng`.
    pub fn sample_with(&self, mesh: &Mesh, count: usize, rng: &mut rng::Rng, seed: u64) -> Result<Ensemble> {
        let n = self.order();
        if mesh.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "mesh has {} points, covariance has order {n}",
                mesh.len()
            )));
        }
        if count == 0 {
            return Err(invalid("N", "must be at least 1"));
        }
        let z = DMatrix::<f64>::from_fn(n, count, |_, _| StandardNormal.sample(rng));
        let fields = &self.factor * z;
        Ensemble::from_fields(mesh.clone(), fields.as_slice().to_vec(), seed, self.jitter)
    }

    /// Draws `count` fields from the stream seeded by `seed`.
    pub fn sample(&self, mesh: &Mesh, count: usize, seed: u64) -> Result<Ensemble> {
        let mut r = rng::from_seed(seed);
        self.sample_with(mesh, count, &mut r, seed)
    }
}

/// Draws `count` i.i.d. `N(0, cov)` fields on `mesh`; deterministic in `seed`.
pub fn sample_ensemble(cov: &CovMatrix, mesh: &Mesh, count: usize, seed: u64) -> Result<Ensemble> {
    GaussianSampler::new(cov)?.sample(mesh, count, seed)
}

const MAGIC: &[u8; 5] = b"OPCV1";

/// Writes the binary ensemble format: `OPCV1`, `d: u32`, `m: u32`, `N: u32`,
/// `seed: u64`, `jitter: f64`, then `N * L` values, all little-endian.
pub fn write_ensemble<W: Write>(ens: &Ensemble, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(ens.mesh.dim() as u32).to_le_bytes())?;
    w.write_all(&(ens.mesh.per_axis() as u32).to_le_bytes())?;
    w.write_all(&(ens.count as u32).to_le_bytes())?;
    w.write_all(&ens.seed.to_le_bytes())?;
    w.write_all(&ens.jitter.to_le_bytes())?;
    for v in &ens.fields {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads the binary ensemble format written by [`write_ensemble`].
pub fn read_ensemble<R: Read>(mut r: R) -> Result<Ensemble> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    let mut next_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4))
    };
    let d = next_u32(&mut r)? as usize;
    let m = next_u32(&mut r)? as usize;
    let count = next_u32(&mut r)? as usize;
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let jitter = f64::from_le_bytes(b8);
    let mesh = if m == 1 && d == 1 {
        Mesh::single_point()
    } else {
        Mesh::new(d, m).map_err(|e| Error::Format(e.to_string()))?
    };
    let total = count
        .checked_mul(mesh.len())
        .ok_or_else(|| Error::Format("size overflow".into()))?;
    let mut bytes = vec![0u8; total * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated field data".into()))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format("trailing bytes".into()));
    }
    let fields = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ensemble::from_fields(mesh, fields, seed, jitter)
}

/// CSV export: one row per field, values separated by commas.
pub fn write_ensemble_csv<W: Write>(ens: &Ensemble, mut w: W) -> Result<()> {
    for field in ens.fields() {
        let row: Vec<String> = field.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn meshes() {
        let m = Mesh::new(1, 2).unwrap();
        assert_eq!((m.point(0), m.point(1), m.weight()), (&[0.25][..], &[0.75][..], 0.5));
        let m2 = Mesh::new(2, 2).unwrap();
        let pts: Vec<&[f64]> = (0..4).map(|i| m2.point(i)).collect();
        assert_eq!(
            pts,
            vec![&[0.25, 0.25][..], &[0.25, 0.75], &[0.75, 0.25], &[0.75, 0.75]]
        );
        let big = Mesh::new(1, 1250).unwrap();
        assert_eq!(big.len(), 1250);
        assert_eq!(big.weight(), 8e-4);
        assert_eq!(big.weight() * big.len() as f64, 1.0);
        assert!(Mesh::new(4, 3).is_err());
        assert!(Mesh::new(1, 1).is_err());
        assert!(Mesh::new(0, 5).is_err());
    }

    #[test]
    fn covariance_examples() {
        let se = KernelModel::squared_exponential(1.0).unwrap();
        let c = covariance_matrix(&se, &Mesh::new(1, 2).unwrap()).unwrap();
        let off = (-0.125f64).exp();
        assert_eq!(c.entries(), &DMatrix::from_row_slice(2, 2, &[1.0, off, off, 1.0]));

        let m = KernelModel::matern(0.1, 1.5).unwrap();
        let mesh = Mesh::new(1, 4).unwrap();
        let c = covariance_matrix(&m, &mesh).unwrap();
        let z = 7.5 * 3f64.sqrt();
        assert!((c.get(0, 3) - (1.0 + z) * (-z).exp()).abs() < 1e-15);
        assert_eq!(c.get(0, 3), m.eval(0.75).unwrap());

        let mesh2 = Mesh::new(2, 5).unwrap();
        let c2 = covariance_matrix(&m, &mesh2).unwrap();
        assert!((0..mesh2.len()).all(|i| c2.get(i, i) == 1.0));
        assert!(CovMatrix::new(c2.entries().clone(), c2.weight()).is_ok());
    }

    #[test]
    fn covariance_size_guard() {
        let se = KernelModel::squared_exponential(0.1).unwrap();
        let mesh = Mesh::new(2, 20).unwrap();
        assert_eq!(
            covariance_matrix_limited(&se, &mesh, 100),
            Err(Error::TooLarge { order: 400, max: 100 })
        );
    }

    #[test]
    fn asymmetric_input_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(CovMatrix::new(a, 0.5).is_err());
    }

    #[test]
    fn scalar_ensemble() {
        let cov = CovMatrix::new(DMatrix::from_element(1, 1, 1.0), 1.0).unwrap();
        let ens = sample_ensemble(&cov, &Mesh::single_point(), 3, 11).unwrap();
        assert_eq!(ens.count(), 3);
        for n in 0..3 {
            assert_eq!(ens.sups()[n], ens.field(n)[0]);
        }
    }

    #[test]
    fn sup_mean_examples() {
        let mesh = Mesh::new(1, 2).unwrap();
        let ens = Ensemble::from_fields(mesh.clone(), vec![2.0, 1.0, -3.0, 4.0], 0, 0.0).unwrap();
        assert_eq!(ensemble_sup_mean(&ens), 3.0);
        let zero = Ensemble::from_fields(mesh, vec![0.0, 0.0], 0, 0.0).unwrap();
        assert_eq!(ensemble_sup_mean(&zero), 0.0);
    }

    #[test]
    fn sampling_is_deterministic_and_jitter_escalates() {
        let se = KernelModel::squared_exponential(0.5).unwrap();
        let mesh = Mesh::new(1, 60).unwrap();
        let cov = covariance_matrix(&se, &mesh).unwrap();
        let a = sample_ensemble(&cov, &mesh, 4, 99).unwrap();
        let b = sample_ensemble(&cov, &mesh, 4, 99).unwrap();
        assert_eq!(a, b);
        // Smooth kernel on a fine grid is numerically singular.
        assert!(a.jitter() > 0.0);
        let c = sample_ensemble(&cov, &mesh, 4, 100).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn indefinite_matrix_fails_factorization() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let cov = CovMatrix::new(a, 0.5).unwrap();
        assert_eq!(
            GaussianSampler::new(&cov).unwrap_err(),
            Error::FactorizationFailed { jitter: 1e-8 }
        );
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let se = KernelModel::squared_exponential(0.2).unwrap();
        let mesh = Mesh::new(2, 3).unwrap();
        let cov = covariance_matrix(&se, &mesh).unwrap();
        let ens = sample_ensemble(&cov, &mesh, 5, 3).unwrap();
        let mut buf = Vec::new();
        write_ensemble(&ens, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"OPCV1");
        assert_eq!(buf.len(), 5 + 12 + 16 + 5 * 9 * 8);
        assert_eq!(read_ensemble(&buf[..]).unwrap(), ens);
        assert!(read_ensemble(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_ensemble(&bad[..]).is_err());

        let mut csv = Vec::new();
        write_ensemble_csv(&ens, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 5);
        let parsed: Vec<f64> = rows[2].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(parsed, ens.field(2));
    }

    proptest! {
        #[test]
        fn sups_cache_is_coherent(seed in 0u64..1000, n in 1usize..6) {
            let se = KernelModel::squared_exponential(0.1).unwrap();
            let mesh = Mesh::new(1, 17).unwrap();
            let cov = covariance_matrix(&se, &mesh).unwrap();
            let ens = sample_ensemble(&cov, &mesh, n, seed).unwrap();
            for (i, f) in ens.fields().enumerate() {
                prop_assert_eq!(ens.sups()[i], f.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
}
