//! Symmetric eigenvalue machinery: Lanczos and power iteration on matrix-free
//! operators, plus dense helpers used as oracles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

const PAR_THRESHOLD: usize = 512;

/// A symmetric linear operator on `R^n`.
pub trait SymOperator: Sync {
    fn order(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Symmetric matrix-vector product using column dot products (`A = A^T`).
pub fn sym_matvec(a: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let n = a.nrows();
    let dot = |i: usize| -> f64 {
        let col = &a.as_slice()[i * n..(i + 1) * n];
        col.iter().zip(x).map(|(c, v)| c * v).sum()
    };
    if n >= PAR_THRESHOLD {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = dot(i));
    } else {
        y.iter_mut().enumerate().for_each(|(i, yi)| *yi = dot(i));
    }
}

impl SymOperator for DMatrix<f64> {
    fn order(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        sym_matvec(self, x, y);
    }
}

/// `A - B` applied without forming the difference.
pub struct Difference<'a, A: ?Sized, B: ?Sized> {
    pub lhs: &'a A,
    pub rhs: &'a B,
}

impl<A: SymOperator + ?Sized, B: SymOperator + ?Sized> SymOperator for Difference<'_, A, B> {
    fn order(&self) -> usize {
        self.lhs.order()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut tmp = vec![0.0; y.len()];
        self.lhs.apply(x, y);
        self.rhs.apply(x, &mut tmp);
        y.iter_mut().zip(&tmp).for_each(|(a, b)| *a -= b);
    }
}

/// The Gram operator `(1/N) U^T U` of `N` row vectors of length `L`,
/// stored row-major in `rows` (`rows[n * L + i]`).
pub struct Gram<'a> {
    pub rows: &'a [f64],
    pub count: usize,
    pub len: usize,
}

impl SymOperator for Gram<'_> {
    fn order(&self) -> usize {
        self.len
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        if self.count == 0 {
            return;
        }
        let inv = 1.0 / self.count as f64;
        for row in self.rows.chunks_exact(self.len) {
            let c = inv * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            y.iter_mut().zip(row).for_each(|(yi, ri)| *yi += c * ri);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn random_unit(n: usize, rng: &mut rng::Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nv = norm(&v);
        if nv > 0.0 {
            v.iter_mut().for_each(|x| *x /= nv);
            return v;
        }
    }
}

/// Options shared by the iterative eigensolvers.
#[derive(Debug, Clone, Copy)]
pub struct EigOptions {
    /// Relative tolerance on the eigenvalue residual.
    pub rel_tol: f64,
    /// Iteration cap: operator applications for Lanczos, block sweeps for power iteration.
    pub max_iter: usize,
    /// Maximum Krylov dimension before an explicit restart (Lanczos only).
    pub krylov_dim: usize,
    /// Seed of the random start vector.
    pub seed: u64,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            max_iter: 10_000,
            krylov_dim: 320,
            seed: 0x5eed,
        }
    }
}

/// Smallest and largest eigenvalues of a symmetric operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremes {
    pub min: f64,
    pub max: f64,
    /// Operator applications used.
    pub iterations: usize,
    /// Largest final Ritz residual of the two extreme pairs.
    pub residual: f64,
}

impl Extremes {
    pub fn abs_max(&self) -> f64 {
        self.min.abs().max(self.max.abs())
    }
}

/// Extreme eigenvalues by Lanczos with full reorthogonalization and explicit
/// restarts. Converged when both extreme Ritz residuals fall below
/// `rel_tol * max(|min|, |max|)`.
pub fn lanczos_extremes<A: SymOperator + ?Sized>(op: &A, opts: &EigOptions) -> Result<Extremes> {
    lanczos(op, opts, false)
}

/// Like [`lanczos_extremes`] but only the extreme of largest magnitude must
/// converge; the other one just has to be smaller by more than its residual.
/// Spectra that decay continuously towards zero converge far faster this way.
pub fn lanczos_abs_max<A: SymOperator + ?Sized>(op: &A, opts: &EigOptions) -> Result<Extremes> {
    lanczos(op, opts, true)
}

fn lanczos<A: SymOperator + ?Sized>(op: &A, opts: &EigOptions, dominant_only: bool) -> Result<Extremes> {
    let n = op.order();
    if n == 0 {
        return Ok(Extremes {
            min: 0.0,
            max: 0.0,
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut rng = rng::from_seed(opts.seed);
    let mut start = random_unit(n, &mut rng);
    let dim_cap = opts.krylov_dim.clamp(2, n.max(2)).min(n);
    let mut used = 0usize;

    loop {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = vec![0.0; n];
        // Ritz checks on a geometric schedule keep the k x k eigensolves cheap.
        let mut next_check = 4;
        loop {
            let j = alpha.len();
            op.apply(&basis[j], &mut w);
            used += 1;
            let a = dot(&basis[j], &w);
            alpha.push(a);
            // Two passes of classical Gram-Schmidt against the whole basis.
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
                }
            }
            let b = norm(&w);
            let k = alpha.len();
            let invariant = b <= 1e-14 * alpha.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
            let at_cap = k >= dim_cap || used >= opts.max_iter;
            if k >= next_check || invariant || at_cap || k == n {
                next_check = (k + 4).max(k + k / 4);
                let ritz = tridiagonal_extremes(&alpha, &beta);
                let rmin = (b * ritz.min_last).abs();
                let rmax = (b * ritz.max_last).abs();
                let scale = ritz.min.abs().max(ritz.max.abs());
                let mut last = Extremes {
                    min: ritz.min,
                    max: ritz.max,
                    iterations: used,
                    residual: rmin.max(rmax),
                };
                let tol = opts.rel_tol * scale;
                let converged = if dominant_only {
                    let (dom, r_dom, other, r_other) = if ritz.max.abs() >= ritz.min.abs() {
                        (ritz.max, rmax, ritz.min, rmin)
                    } else {
                        (ritz.min, rmin, ritz.max, rmax)
                    };
                    r_dom <= tol && other.abs() + r_other < dom.abs() - r_dom
                } else {
                    last.residual <= tol
                };
                if invariant || k == n || converged {
                    if scale == 0.0 {
                        last.residual = 0.0;
                    }
                    return Ok(last);
                }
                if at_cap {
                    if used >= opts.max_iter {
                        return Err(Error::NoConvergence {
                            iterations: used,
                            estimate: last.abs_max(),
                            residual: last.residual,
                        });
                    }
                    // Restart from the sum of the two extreme Ritz vectors.
                    let (evals, evecs) = tridiagonal_eigen(&alpha, &beta);
                    let (imin, imax) = argminmax(&evals);
                    let mut next = vec![0.0; n];
                    for (i, q) in basis.iter().enumerate() {
                        let c = evecs[(i, imin)] + evecs[(i, imax)];
                        next.iter_mut().zip(q).for_each(|(x, qi)| *x += c * qi);
                    }
                    let nn = norm(&next);
                    if nn > 0.0 {
                        next.iter_mut().for_each(|x| *x /= nn);
                        start = next;
                    } else {
                        start = random_unit(n, &mut rng);
                    }
                    break;
                }
            }
            beta.push(b);
            let q: Vec<f64> = w.iter().map(|x| x / b).collect();
            basis.push(q);
        }
    }
}

fn argminmax(v: &DVector<f64>) -> (usize, usize) {
    let mut imin = 0;
    let mut imax = 0;
    for i in 1..v.len() {
        if v[i] < v[imin] {
            imin = i;
        }
        if v[i] > v[imax] {
            imax = i;
        }
    }
    (imin, imax)
}

/// Extreme eigenvalues of a symmetric tridiagonal matrix with the last
/// components of their unit eigenvectors.
#[derive(Debug, Clone, Copy)]
struct TridiagExtremes {
    min: f64,
    max: f64,
    min_last: f64,
    max_last: f64,
}

/// Number of eigenvalues below `x` (Sturm sequence).
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..alpha.len() {
        let off = if i == 0 { 0.0 } else { beta[i - 1] * beta[i - 1] / d };
        d = alpha[i] - x - off;
        if d == 0.0 {
            d = -f64::EPSILON * (x.abs() + f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `idx`-th smallest eigenvalue by bisection inside Gershgorin bounds.
fn bisect_eigenvalue(alpha: &[f64], beta: &[f64], idx: usize) -> f64 {
    let k = alpha.len();
    let radius = |i: usize| {
        (if i > 0 { beta[i - 1].abs() } else { 0.0 }) + (if i + 1 < k { beta[i].abs() } else { 0.0 })
    };
    let mut lo = (0..k).map(|i| alpha[i] - radius(i)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..k).map(|i| alpha[i] + radius(i)).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
        if sturm_count(alpha, beta, mid) > idx {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves `(T - shift I) x = rhs` by Gaussian elimination with partial pivoting.
fn tridiagonal_solve(alpha: &[f64], beta: &[f64], shift: f64, rhs: &mut [f64]) {
    let k = alpha.len();
    // Rows after elimination hold up to two superdiagonals.
    let mut diag: Vec<f64> = alpha.iter().map(|a| a - shift).collect();
    let mut sup1: Vec<f64> = (0..k).map(|i| if i + 1 < k { beta[i] } else { 0.0 }).collect();
    let mut sup2 = vec![0.0; k];
    let mut sub: Vec<f64> = beta.to_vec();
    let tiny = f64::EPSILON * diag.iter().chain(beta).fold(f64::MIN_POSITIVE, |m, x| m.max(x.abs()));
    for i in 0..k.saturating_sub(1) {
        if sub[i].abs() > diag[i].abs() {
            // Swap rows i and i + 1.
            std::mem::swap(&mut diag[i], &mut sub[i]);
            let (a, b) = (sup1[i], diag[i + 1]);
            sup1[i] = b;
            diag[i + 1] = a;
            let (c, d) = (sup2[i], if i + 1 < k - 1 { sup1[i + 1] } else { 0.0 });
            sup2[i] = d;
            if i + 1 < k - 1 {
                sup1[i + 1] = c;
            }
            rhs.swap(i, i + 1);
        }
        if diag[i] == 0.0 {
            diag[i] = tiny;
        }
        let f = sub[i] / diag[i];
        diag[i + 1] -= f * sup1[i];
        if i + 1 < k - 1 {
            sup1[i + 1] -= f * sup2[i];
        }
        rhs[i + 1] -= f * rhs[i];
    }
    if diag[k - 1] == 0.0 {
        diag[k - 1] = tiny;
    }
    for i in (0..k).rev() {
        let mut v = rhs[i];
        if i + 1 < k {
            v -= sup1[i] * rhs[i + 1];
        }
        if i + 2 < k {
            v -= sup2[i] * rhs[i + 2];
        }
        rhs[i] = v / diag[i];
    }
}

/// Unit eigenvector for `lambda` by inverse iteration; returns its last entry.
fn eigenvector_last(alpha: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let k = alpha.len();
    if k == 1 {
        return 1.0;
    }
    let mut x: Vec<f64> = (0..k).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    for _ in 0..3 {
        tridiagonal_solve(alpha, beta, lambda, &mut x);
        let nx = norm(&x);
        if !(nx.is_finite() && nx > 0.0) {
            break;
        }
        x.iter_mut().for_each(|v| *v /= nx);
    }
    x[k - 1]
}

fn tridiagonal_extremes(alpha: &[f64], beta: &[f64]) -> TridiagExtremes {
    let k = alpha.len();
    let min = bisect_eigenvalue(alpha, beta, 0);
    let max = bisect_eigenvalue(alpha, beta, k - 1);
    TridiagExtremes {
        min,
        max,
        min_last: eigenvector_last(alpha, beta, min),
        max_last: eigenvector_last(alpha, beta, max),
    }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let k = alpha.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    (eig.eigenvalues, eig.eigenvectors)
}

/// Width of the block used by [`power_iteration`].
pub const POWER_BLOCK: usize = 8;

/// Largest absolute eigenvalue by block power (simultaneous) iteration with
/// Rayleigh-Ritz extraction. Converges at rate `|lambda_{p+1} / lambda_1|`
/// per sweep, so `+-` pairs and clustered edges cost little. `max_iter` caps
/// sweeps. A stalled block is perturbed and reorthonormalized.
pub fn power_iteration<A: SymOperator + ?Sized>(op: &A, opts: &EigOptions) -> Result<f64> {
    let n = op.order();
    if n == 0 {
        return Ok(0.0);
    }
    let p = POWER_BLOCK.min(n);
    let mut rng = rng::from_seed(opts.seed);
    let random_block = |rng: &mut rng::Rng| {
        DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(rng))
            .qr()
            .q()
    };
    let mut q = random_block(&mut rng);
    let mut w = DMatrix::<f64>::zeros(n, p);
    let mut estimate = 0.0;
    let mut residual = f64::INFINITY;
    let mut best_residual = f64::INFINITY;
    let mut restarts = 0;
    let mut stalled = 0;
    for _ in 0..opts.max_iter {
        for j in 0..p {
            op.apply(q.column(j).as_slice(), w.column_mut(j).as_mut_slice());
        }
        let h = q.transpose() * &w;
        let eig = SymmetricEigen::new((&h + h.transpose()) * 0.5);
        let (j, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("non-empty block");
        if theta == 0.0 {
            if restarts >= 3 {
                return Ok(0.0);
            }
            restarts += 1;
            q = random_block(&mut rng);
            continue;
        }
        let s = eig.eigenvectors.column(j);
        let r = &w * s - (&q * s) * theta;
        estimate = theta.abs();
        residual = r.norm() / estimate;
        if residual <= opts.rel_tol {
            return Ok(estimate);
        }
        if residual < 0.99 * best_residual {
            best_residual = residual;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if stalled >= 50 && restarts < 3 {
            restarts += 1;
            stalled = 0;
            best_residual = f64::INFINITY;
            w += random_block(&mut rng) * (1e-3 * w.norm() / (p as f64).sqrt());
        }
        q = w.clone().qr().q();
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        estimate,
        residual,
    })
}

/// Which algorithm evaluates spectral norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectralMethod {
    #[default]
    Lanczos,
    Power,
}

/// Largest absolute eigenvalue of a symmetric operator.
pub fn spectral_norm_of<A: SymOperator + ?Sized>(
    op: &A,
    method: SpectralMethod,
    opts: &EigOptions,
) -> Result<f64> {
    match method {
        SpectralMethod::Lanczos => lanczos_abs_max(op, opts).map(|e| e.abs_max()),
        SpectralMethod::Power => power_iteration(op, opts),
    }
}

fn check_finite(a: &DMatrix<f64>) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// All eigenvalues of a dense symmetric matrix, ascending.
pub fn dense_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(a)?;
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Full dense eigendecomposition.
pub fn dense_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_finite(a)?;
    Ok(SymmetricEigen::new(a.clone()))
}

/// Dense-eigensolver spectral norm; the oracle for the iterative paths.
pub fn dense_spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    Ok(dense_eigenvalues(a)?
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs())))
}

/// Largest singular value of a (small) rectangular matrix.
pub fn largest_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    gram.symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |m, x| m.max(*x))
        .max(0.0)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::from_seed(seed);
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut r));
        (&g + g.transpose()) * 0.5
    }

    #[test]
    fn diagonal_examples() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -5.0, 1.0]));
        let opts = EigOptions::default();
        let e = lanczos_extremes(&a, &opts).unwrap();
        assert!((e.min + 5.0).abs() < 1e-12 && (e.max - 3.0).abs() < 1e-12);
        assert!((power_iteration(&a, &opts).unwrap() - 5.0).abs() < 1e-8);
        let id = DMatrix::<f64>::identity(40, 40);
        assert!((spectral_norm_of(&id, SpectralMethod::Lanczos, &opts).unwrap() - 1.0).abs() < 1e-12);
        assert!((spectral_norm_of(&id, SpectralMethod::Power, &opts).unwrap() - 1.0).abs() < 1e-12);
        let zero = DMatrix::<f64>::zeros(5, 5);
        assert_eq!(lanczos_extremes(&zero, &opts).unwrap().abs_max(), 0.0);
        assert_eq!(power_iteration(&zero, &opts).unwrap(), 0.0);
    }

    #[test]
    fn lanczos_matches_dense_on_random_matrices() {
        for (i, n) in [1usize, 2, 7, 50, 100, 333].into_iter().enumerate() {
            let a = random_symmetric(n, i as u64);
            let dense = dense_eigenvalues(&a).unwrap();
            let e = lanczos_extremes(&a, &EigOptions::default()).unwrap();
            let scale = dense_spectral_norm(&a).unwrap();
            assert!((e.min - dense[0]).abs() <= 1e-9 * scale, "n={n}");
            assert!((e.max - dense[n - 1]).abs() <= 1e-9 * scale, "n={n}");
        }
    }

    #[test]
    fn restarts_still_converge() {
        let a = random_symmetric(200, 9);
        let opts = EigOptions {
            krylov_dim: 12,
            ..Default::default()
        };
        let e = lanczos_extremes(&a, &opts).unwrap();
        let dense = dense_spectral_norm(&a).unwrap();
        assert!((e.abs_max() - dense).abs() <= 1e-8 * dense);
    }

    #[test]
    fn tridiagonal_extremes_match_dense() {
        let mut r = rng::from_seed(17);
        for k in [1usize, 2, 3, 7, 40, 150] {
            let alpha: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut r)).collect();
            let mut beta: Vec<f64> = (0..k.saturating_sub(1)).map(|_| StandardNormal.sample(&mut r)).collect();
            if k > 3 {
                beta[1] = 1e-9;
            }
            let got = tridiagonal_extremes(&alpha, &beta);
            let (evals, evecs) = tridiagonal_eigen(&alpha, &beta);
            let (imin, imax) = argminmax(&evals);
            let scale = evals[imin].abs().max(evals[imax].abs());
            assert!((got.min - evals[imin]).abs() <= 1e-13 * scale, "k={k}");
            assert!((got.max - evals[imax]).abs() <= 1e-13 * scale, "k={k}");
            assert!((got.min_last.abs() - evecs[(k - 1, imin)].abs()).abs() < 1e-8, "k={k}");
            assert!((got.max_last.abs() - evecs[(k - 1, imax)].abs()).abs() < 1e-8, "k={k}");
        }
    }

    #[test]
    fn power_iteration_handles_plus_minus_pairs() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -2.0, 0.5, 0.1]));
        assert!((power_iteration(&a, &EigOptions::default()).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn non_convergence_is_reported() {
        let a = random_symmetric(300, 3);
        let opts = EigOptions {
            max_iter: 5,
            krylov_dim: 3,
            ..Default::default()
        };
        assert!(matches!(
            lanczos_extremes(&a, &opts),
            Err(Error::NoConvergence { .. })
        ));
        assert!(matches!(
            power_iteration(&a, &opts),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn difference_and_gram_operators() {
        let rows = vec![1.0, -1.0, 2.0, 0.5];
        let g = Gram {
            rows: &rows,
            count: 2,
            len: 2,
        };
        let mut y = vec![0.0; 2];
        g.apply(&[1.0, 0.0], &mut y);
        // (1/2)[[1+4, -1+1],[..]] first column = [2.5, 0]
        assert_eq!(y, vec![2.5, 0.0]);
        let id = DMatrix::<f64>::identity(2, 2);
        let d = Difference { lhs: &g, rhs: &id };
        d.apply(&[1.0, 0.0], &mut y);
        assert_eq!(y, vec![1.5, 0.0]);
    }

    #[test]
    fn singular_value_of_rectangular() {
        let a = DMatrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, 4.0, 0.0]);
        assert!((largest_singular_value(&a) - 4.0).abs() < 1e-12);
    }
}
