//! Dense real-matrix kernel.
//!
//! Everything in this crate is expressed on [`Mat`] (a dynamically sized
//! `f64` matrix). Decompositions come from `nalgebra`; the equation solvers
//! (Sylvester, Lyapunov, filter Riccati) and the rank / stability tests are
//! built on top of them here.

use nalgebra::{DMatrix, DVector, SymmetricEigen, LU, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

const MAX_ITER: usize = 10_000;

/// Numerical thresholds shared by every rank, residual and definiteness test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    /// Singular values at or below `rank_tol * sigma_max` count as zero.
    pub rank_tol: f64,
    /// Absolute residual threshold for solver postconditions.
    pub eq_tol: f64,
    /// Eigenvalue slack for semidefiniteness tests.
    pub psd_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rank_tol: 1e-9, eq_tol: 1e-8, psd_tol: 1e-8 }
    }
}

impl Tolerance {
    pub fn new(rank_tol: f64, eq_tol: f64, psd_tol: f64) -> Result<Self> {
        let tol = Tolerance { rank_tol, eq_tol, psd_tol };
        tol.validate()?;
        Ok(tol)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rank_tol", self.rank_tol), ("eq_tol", self.eq_tol), ("psd_tol", self.psd_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be strictly positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Defaults overridden by `GAMMASTAB_RANK_TOL`, `GAMMASTAB_EQ_TOL` and
    /// `GAMMASTAB_PSD_TOL` when set.
    pub fn from_env() -> Result<Self> {
        let mut tol = Tolerance::default();
        for (var, slot) in [
            ("GAMMASTAB_RANK_TOL", &mut tol.rank_tol),
            ("GAMMASTAB_EQ_TOL", &mut tol.eq_tol),
            ("GAMMASTAB_PSD_TOL", &mut tol.psd_tol),
        ] {
            if let Ok(raw) = std::env::var(var) {
                *slot = raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("{var} is not a number: {raw:?}")))?;
            }
        }
        tol.validate()?;
        Ok(tol)
    }
}

pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

pub(crate) fn ensure_square(m: &Mat, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols())))
    }
}

/// Builds a matrix from row-major nested slices.
pub fn from_rows(rows: &[&[f64]]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn hstack(blocks: &[&Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    match thin_svd(m) {
        Ok((_, s, _)) => s.first().copied().unwrap_or(0.0),
        Err(_) => SVD::new(m.clone(), false, false).singular_values.max(),
    }
}

/// Least-squares solution of `m x = rhs`, discarding singular values below
/// `cutoff` (absolute).
pub(crate) fn svd_solve(m: &Mat, rhs: &Mat, cutoff: f64) -> Result<Mat> {
    let (u, s, v) = thin_svd(m)?;
    let mut out = Mat::zeros(m.ncols(), rhs.ncols());
    for (i, &sv) in s.iter().enumerate() {
        if sv > cutoff {
            out += v.column(i) * (u.column(i).transpose() * rhs) / sv;
        }
    }
    Ok(out)
}

/// Full singular value decomposition `M = U * diag(S) * H^T` with square
/// orthogonal `U` (rows x rows) and `H` (cols x cols).
#[derive(Debug, Clone)]
pub struct FullSvd {
    pub u: Mat,
    /// Non-negative, non-increasing, length `min(rows, cols)`.
    pub singular_values: Vec<f64>,
    pub h: Mat,
}

impl FullSvd {
    /// `U * [diag(S) 0; 0 0] * H^T`.
    pub fn reconstruct(&self) -> Mat {
        let mut sigma = Mat::zeros(self.u.ncols(), self.h.ncols());
        for (i, s) in self.singular_values.iter().enumerate() {
            sigma[(i, i)] = *s;
        }
        &self.u * sigma * self.h.transpose()
    }
}

fn to_faer(m: &Mat) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Full SVD `(U, S, V)` with square `U`, `V`.
fn faer_svd(m: &Mat) -> Result<(Mat, Vec<f64>, Mat)> {
    let (r, c) = m.shape();
    let svd = to_faer(m).svd().map_err(|e| Error::NumericalFailure(format!("SVD did not converge: {e:?}")))?;
    let (fu, fv) = (svd.U(), svd.V());
    let u = Mat::from_fn(r, r, |i, j| fu[(i, j)]);
    let v = Mat::from_fn(c, c, |i, j| fv[(i, j)]);
    let sv = svd.S().column_vector();
    let s: Vec<f64> = (0..r.min(c)).map(|i| sv[i]).collect();
    Ok((u, s, v))
}

fn thin_svd(m: &Mat) -> Result<(Mat, Vec<f64>, Mat)> {
    let (u, s, v) = faer_svd(m)?;
    let k = s.len();
    Ok((u.columns(0, k).into_owned(), s, v.columns(0, k).into_owned()))
}

pub fn svd_full(m: &Mat) -> Result<FullSvd> {
    ensure_finite(m, "matrix")?;
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(FullSvd { u: Mat::identity(r, r), singular_values: vec![], h: Mat::identity(c, c) });
    }
    let (u, singular_values, h) = faer_svd(m)?;
    Ok(FullSvd { u, singular_values, h })
}

pub fn singular_values(m: &Mat) -> Result<Vec<f64>> {
    ensure_finite(m, "matrix")?;
    if m.is_empty() {
        return Ok(vec![]);
    }
    Ok(thin_svd(m)?.1)
}

/// Counts singular values above `rank_tol * scale`. `scale` defaults to the
/// largest singular value.
pub(crate) fn rank_of_values(s: &[f64], rank_tol: f64, scale: Option<f64>) -> usize {
    let smax = s.first().copied().unwrap_or(0.0);
    let scale = scale.unwrap_or(smax).max(smax);
    if scale <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rank_tol * scale).count()
}

pub fn numeric_rank(m: &Mat, tol: &Tolerance) -> Result<usize> {
    Ok(rank_of_values(&singular_values(m)?, tol.rank_tol, None))
}

/// Moore-Penrose pseudo-inverse through the truncated SVD.
pub fn pinv(m: &Mat, tol: &Tolerance) -> Result<Mat> {
    let svd = svd_full(m)?;
    let rank = rank_of_values(&svd.singular_values, tol.rank_tol, None);
    let mut out = Mat::zeros(m.ncols(), m.nrows());
    for i in 0..rank {
        let s = svd.singular_values[i];
        out += svd.h.column(i) * svd.u.column(i).transpose() / s;
    }
    Ok(out)
}

/// Diagonal similarity by powers of two that equalizes row and column norms
/// (Parlett-Reinsch). The spectrum is unchanged.
fn balance(a: &Mat) -> Mat {
    const RADIX: f64 = 2.0;
    let n = a.nrows();
    let mut m = a.clone();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= RADIX * RADIX;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= RADIX * RADIX;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                m.row_mut(i).scale_mut(1.0 / f);
                m.column_mut(i).scale_mut(f);
            }
        }
    }
    m
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    ensure_square(a, "matrix")?;
    ensure_finite(a, "matrix")?;
    if a.nrows() == 0 {
        return Ok(vec![]);
    }
    let balanced = balance(a);
    if let Ok(ev) = to_faer(&balanced).eigenvalues() {
        if ev.iter().all(|l| l.re.is_finite() && l.im.is_finite()) {
            return Ok(ev.iter().map(|l| Complex64::new(l.re, l.im)).collect());
        }
    }
    let attempts = [(&balanced, f64::EPSILON), (&balanced, 8.0 * f64::EPSILON), (a, 8.0 * f64::EPSILON)];
    for (m, eps) in attempts {
        if let Some(schur) = nalgebra::Schur::try_new(m.clone(), eps, MAX_ITER) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::NumericalFailure("eigenvalue iteration did not converge".into()))
}

/// Maximum real part over the spectrum; `-inf` for an empty matrix.
pub fn spectral_abscissa(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(a: &Mat, margin: f64) -> Result<bool> {
    Ok(spectral_abscissa(a)? < -margin)
}

/// Largest eigenvalue of the symmetric part `(M + M^T) / 2`.
pub fn max_symmetric_eigenvalue(m: &Mat) -> Result<f64> {
    ensure_square(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    if m.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let sym = (m + m.transpose()) * 0.5;
    if let Ok(ev) = to_faer(&sym).self_adjoint_eigenvalues(faer::Side::Lower) {
        if let Some(&top) = ev.last() {
            return Ok(top);
        }
    }
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
    Ok(eig.eigenvalues.max())
}

pub fn min_symmetric_eigenvalue(m: &Mat) -> Result<f64> {
    Ok(-max_symmetric_eigenvalue(&(-m))?)
}

pub fn is_negative_semidefinite(m: &Mat, tol: &Tolerance) -> Result<bool> {
    Ok(max_symmetric_eigenvalue(m)? <= tol.psd_tol)
}

fn min_spectral_gap(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut gap = f64::INFINITY;
    for x in a {
        for y in b {
            gap = gap.min((x - y).norm());
        }
    }
    gap
}

/// Solves `T * F - M * T = Q` for `T` by Kronecker vectorization:
/// `(F^T (x) I - I (x) M) vec(T) = vec(Q)`.
///
/// The spectra of `F` and `M` must be separated by more than
/// `eq_tol * max(1, |F|, |M|)`.
pub fn solve_sylvester(f: &Mat, m: &Mat, q: &Mat, tol: &Tolerance) -> Result<Mat> {
    ensure_square(f, "F")?;
    ensure_square(m, "M")?;
    ensure_finite(q, "Q")?;
    let (p, k) = (m.nrows(), f.nrows());
    if q.shape() != (p, k) {
        return Err(Error::DimensionMismatch(format!(
            "Q must be {p}x{k} for T*F - M*T = Q, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    if p == 0 || k == 0 {
        return Ok(Mat::zeros(p, k));
    }
    let ef = eigenvalues(f)?;
    let em = eigenvalues(m)?;
    let scale = 1f64.max(spectral_norm(f)).max(spectral_norm(m));
    let gap = min_spectral_gap(&ef, &em);
    if gap <= tol.eq_tol * scale {
        return Err(Error::NoUniqueSolution(format!(
            "spectra of F and M overlap (minimum eigenvalue distance {gap:.3e})"
        )));
    }
    let sys = kron(&f.transpose(), &Mat::identity(p, p)) - kron(&Mat::identity(k, k), m);
    let rhs = Vector::from_column_slice(q.as_slice());
    let lu = LU::new(sys);
    let x = lu.solve(&rhs).ok_or_else(|| Error::NumericalFailure("Sylvester system is singular".into()))?;
    let mut t = Mat::from_column_slice(p, k, x.as_slice());
    let mut residual = (&t * f - m * &t - q).norm();
    // iterative refinement with the same factorization
    for _ in 0..3 {
        if residual <= tol.eq_tol * 1f64.max(q.norm()) {
            break;
        }
        let r = q - (&t * f - m * &t);
        let Some(dx) = lu.solve(&Vector::from_column_slice(r.as_slice())) else { break };
        let candidate = &t + Mat::from_column_slice(p, k, dx.as_slice());
        let next = (&candidate * f - m * &candidate - q).norm();
        if !(next < residual) {
            break;
        }
        t = candidate;
        residual = next;
    }
    if residual > tol.eq_tol * 1f64.max(q.norm()) {
        return Err(Error::NumericalFailure(format!("Sylvester residual {residual:.3e} too large")));
    }
    Ok(t)
}

/// Solves `A^T P + P A = -Q` for a Hurwitz `A`.
pub fn solve_lyapunov(a: &Mat, q: &Mat, tol: &Tolerance) -> Result<Mat> {
    let p = solve_sylvester(a, &(-a.transpose()), &(-q), tol)?;
    Ok((&p + p.transpose()) * 0.5)
}

fn determinant_scale(z: &Mat) -> Option<f64> {
    let lu = LU::new(z.clone());
    let u = lu.u();
    let n = z.nrows() as f64;
    let mut log_det = 0.0;
    for i in 0..z.nrows() {
        let d = u[(i, i)].abs();
        if d == 0.0 {
            return None;
        }
        log_det += d.ln();
    }
    Some((log_det / n).exp())
}

/// Matrix sign function by the scaled Newton iteration.
fn matrix_sign(h: &Mat) -> Result<Mat> {
    let n = h.nrows();
    let mut z = h.clone();
    for iter in 0..100 {
        let inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NumericalFailure("sign iteration hit a singular iterate".into()))?;
        // determinant scaling only while far from convergence
        let c = if iter < 20 { determinant_scale(&z).unwrap_or(1.0) } else { 1.0 };
        let next = (&z / c + inv * c) * 0.5;
        let delta = (&next - &z).abs().row_sum().max();
        let size = next.abs().row_sum().max();
        z = next;
        if delta <= 1e-13 * size.max(1.0) {
            // one extra unscaled step polishes the result
            let inv = z.clone().try_inverse().unwrap_or_else(|| Mat::identity(n, n));
            return Ok((&z + inv) * 0.5);
        }
    }
    Err(Error::NumericalFailure("matrix sign iteration did not converge".into()))
}

/// Stabilizing observer gain from the filter Riccati equation.
#[derive(Debug, Clone)]
pub struct ObserverGain {
    /// `L = P * C^T`.
    pub l: Mat,
    /// Stabilizing solution of `A P + P A^T - P C^T C P + W = 0`.
    pub p: Mat,
}

/// Observer gain `L = P C^T` where `P` is the stabilizing solution of the
/// filter Riccati equation `A P + P A^T - P C^T C P + W = 0`.
///
/// `P` is read off the stable invariant subspace of the Hamiltonian
/// `[[A^T, -C^T C], [-W, -A]]`, extracted with the matrix sign function.
pub fn observer_gain(a: &Mat, c: &Mat, noise_weight: &Mat, tol: &Tolerance) -> Result<ObserverGain> {
    ensure_square(a, "A")?;
    ensure_finite(a, "A")?;
    ensure_finite(c, "C")?;
    let n = a.nrows();
    if c.ncols() != n {
        return Err(Error::DimensionMismatch(format!("C must have {n} columns, got {}", c.ncols())));
    }
    if noise_weight.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("noise weight must be {n}x{n}")));
    }
    if (noise_weight - noise_weight.transpose()).norm() > tol.eq_tol * 1f64.max(noise_weight.norm()) {
        return Err(Error::InvalidInput("noise weight must be symmetric".into()));
    }
    if n == 0 {
        return Ok(ObserverGain { l: Mat::zeros(0, c.nrows()), p: Mat::zeros(0, 0) });
    }
    if min_symmetric_eigenvalue(noise_weight)? <= 0.0 {
        return Err(Error::InvalidInput("noise weight must be positive definite".into()));
    }
    if !pbh_detectable(a, c, tol)? {
        return Err(Error::Infeasible("(A, C) is not detectable; no stabilizing observer gain exists".into()));
    }
    let ctc = c.transpose() * c;
    let mut ham = Mat::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(&a.transpose());
    ham.view_mut((0, n), (n, n)).copy_from(&(-&ctc));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-noise_weight));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a));

    let axis_gap = eigenvalues(&ham)?.iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min);
    if axis_gap <= tol.eq_tol * 1f64.max(ham.norm()) {
        return Err(Error::NumericalFailure(format!(
            "Hamiltonian has eigenvalues on the imaginary axis (|Re| = {axis_gap:.3e})"
        )));
    }
    let sign = matrix_sign(&ham)?;
    // (S + I) [I; P] = 0  =>  [S12; S22 + I] P = -[S11 + I; S21]
    let eye = Mat::identity(n, n);
    let lhs = vstack(&[
        &sign.view((0, n), (n, n)).into_owned(),
        &(sign.view((n, n), (n, n)).into_owned() + &eye),
    ]);
    let rhs = -vstack(&[
        &(sign.view((0, 0), (n, n)).into_owned() + &eye),
        &sign.view((n, 0), (n, n)).into_owned(),
    ]);
    let p = svd_solve(&lhs, &rhs, f64::EPSILON * 2.0 * n as f64)?;
    let p = (&p + p.transpose()) * 0.5;
    let l = &p * c.transpose();
    let abscissa = spectral_abscissa(&(a - &l * c))?;
    if !(abscissa < 0.0) {
        return Err(Error::NumericalFailure(format!(
            "Riccati observer gain does not stabilize A - L C (abscissa {abscissa:.3e})"
        )));
    }
    Ok(ObserverGain { l, p })
}

/// Coefficients `(a_1, ..., a_s)` of the minimal polynomial
/// `A^s + a_1 A^(s-1) + ... + a_s I`.
///
/// Powers of the normalized matrix `A / |A|` are tested for linear dependence
/// by least squares; the first degree whose residual falls below `eq_tol`
/// wins.
pub fn minimal_polynomial(a: &Mat, tol: &Tolerance) -> Result<Vec<f64>> {
    ensure_square(a, "A")?;
    ensure_finite(a, "A")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(vec![]);
    }
    if a.norm() == 0.0 {
        return Ok(vec![0.0]);
    }
    // power-of-two scaling keeps the scaled powers exact
    let scale = 2f64.powi(a.norm().log2().round() as i32);
    let b = a / scale;
    let mut powers = vec![Mat::identity(n, n)];
    let mut best = None;
    for s in 1..=n {
        let next = powers.last().unwrap() * &b;
        // columns vec(B^(s-1)), ..., vec(B^0)
        let mut basis = Mat::zeros(n * n, s);
        for k in 0..s {
            basis.column_mut(k).copy_from_slice(powers[s - 1 - k].as_slice());
        }
        let rhs = -Vector::from_column_slice(next.as_slice());
        let coeffs = svd_solve(&basis, &Mat::from_column_slice(n * n, 1, rhs.as_slice()), 1e-14)?.column(0).into_owned();
        let residual = (&basis * &coeffs - &rhs).norm();
        let unscaled: Vec<f64> =
            coeffs.iter().enumerate().map(|(k, &c)| snap_dyadic(c) * scale.powi(k as i32 + 1)).collect();
        if residual <= tol.eq_tol {
            return Ok(unscaled);
        }
        best = Some(unscaled);
        powers.push(next);
    }
    // Cayley-Hamilton guarantees degree n; return the last fit.
    Ok(best.unwrap_or_default())
}

/// Rounds `c` to the nearest multiple of `2^-30` when it is within rounding
/// noise of it, so exactly representable coefficients come out exact.
fn snap_dyadic(c: f64) -> f64 {
    let grid = 2f64.powi(30);
    let r = (c * grid).round() / grid;
    if (c - r).abs() <= 64.0 * f64::EPSILON * c.abs().max(1.0) {
        r
    } else {
        c
    }
}

pub(crate) fn complex_rank(m: &DMatrix<Complex64>, tol: &Tolerance) -> Result<usize> {
    if m.is_empty() {
        return Ok(0);
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("complex SVD did not converge".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(rank_of_values(&s, tol.rank_tol, None))
}

pub(crate) fn to_complex(m: &Mat) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

fn dedup_eigenvalues(eigs: Vec<Complex64>) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = Vec::with_capacity(eigs.len());
    for l in eigs {
        if !out.iter().any(|o| (o - l).norm() <= 1e-12 * (1.0 + l.norm())) {
            out.push(l);
        }
    }
    out
}

/// `[lambda I - A, B]` has full row rank at a given eigenvalue.
pub fn pbh_rank_at(a: &Mat, b: &Mat, lambda: Complex64, tol: &Tolerance) -> Result<usize> {
    let n = a.nrows();
    let mut m = DMatrix::<Complex64>::zeros(n, n + b.ncols());
    let shifted = DMatrix::<Complex64>::identity(n, n) * lambda - to_complex(a);
    m.view_mut((0, 0), (n, n)).copy_from(&shifted);
    m.view_mut((0, n), (n, b.ncols())).copy_from(&to_complex(b));
    complex_rank(&m, tol)
}

/// PBH controllability test.
pub fn pbh_controllable(a: &Mat, b: &Mat, tol: &Tolerance) -> Result<bool> {
    ensure_square(a, "A")?;
    ensure_finite(b, "B")?;
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch("B must have as many rows as A".into()));
    }
    let n = a.nrows();
    for lambda in dedup_eigenvalues(eigenvalues(a)?) {
        if pbh_rank_at(a, b, lambda, tol)? < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// PBH detectability test: the stacked `[lambda I - A; C]` must have full
/// column rank at every eigenvalue with non-negative real part.
pub fn pbh_detectable(a: &Mat, c: &Mat, tol: &Tolerance) -> Result<bool> {
    ensure_square(a, "A")?;
    ensure_finite(c, "C")?;
    if c.ncols() != a.nrows() {
        return Err(Error::DimensionMismatch("C must have as many columns as A".into()));
    }
    let n = a.nrows();
    for lambda in dedup_eigenvalues(eigenvalues(a)?) {
        if lambda.re < -tol.eq_tol {
            continue;
        }
        // rank of the stacked matrix equals rank of its conjugate transpose
        if pbh_rank_at(&a.transpose(), &c.transpose(), lambda.conj(), tol)? < n {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn b_nominal() -> Mat {
        from_rows(&[&[0.0, 0.0], &[0.0, 1.0], &[2.0, 0.0], &[0.0, 0.0]])
    }

    fn is_orthogonal(m: &Mat, eps: f64) -> bool {
        (m.transpose() * m - Mat::identity(m.ncols(), m.ncols())).norm() <= eps
    }

    #[test]
    fn svd_identity_and_zero() {
        let svd = svd_full(&Mat::identity(3, 3)).unwrap();
        assert_eq!(svd.singular_values, vec![1.0, 1.0, 1.0]);
        assert!((&svd.u * svd.h.transpose() - Mat::identity(3, 3)).norm() < 1e-14);

        let svd = svd_full(&Mat::zeros(2, 3)).unwrap();
        assert_eq!(svd.singular_values, vec![0.0, 0.0]);
        assert!(is_orthogonal(&svd.u, 1e-12) && is_orthogonal(&svd.h, 1e-12));
    }

    #[test]
    fn svd_of_nominal_input_matrix() {
        let b = b_nominal();
        let svd = svd_full(&b).unwrap();
        assert!((svd.singular_values[0] - 2.0).abs() < 1e-14);
        assert!((svd.singular_values[1] - 1.0).abs() < 1e-14);
        assert_eq!(svd.u.shape(), (4, 4));
        assert_eq!(svd.h.shape(), (2, 2));
        assert!(is_orthogonal(&svd.u, 1e-12));
        assert!((svd.reconstruct() - &b).norm() < 1e-12);
        let wide = svd_full(&b.transpose()).unwrap();
        assert!((wide.reconstruct() - b.transpose()).norm() < 1e-12);
    }

    #[test]
    fn svd_rejects_nan() {
        let mut m = Mat::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(svd_full(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numeric_rank(&Mat::identity(4, 4), &tol()).unwrap(), 4);
        assert_eq!(numeric_rank(&Mat::zeros(3, 2), &tol()).unwrap(), 0);
        assert_eq!(numeric_rank(&b_nominal(), &tol()).unwrap(), 2);
    }

    #[test]
    fn pinv_examples() {
        assert!((pinv(&Mat::identity(2, 2), &tol()).unwrap() - Mat::identity(2, 2)).norm() < 1e-15);
        let v = Mat::from_column_slice(4, 1, &[0.0, 0.0, 2.0, 0.0]);
        let expected = Mat::from_row_slice(1, 4, &[0.0, 0.0, 0.5, 0.0]);
        assert!((pinv(&v, &tol()).unwrap() - expected).norm() < 1e-15);
        let bp = pinv(&b_nominal(), &tol()).unwrap();
        let expected = from_rows(&[&[0.0, 0.0, 0.5, 0.0], &[0.0, 1.0, 0.0, 0.0]]);
        assert!((&bp - expected).norm() < 1e-14);
        assert!((bp * b_nominal() - Mat::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn sylvester_examples() {
        let t = solve_sylvester(&Mat::zeros(1, 1), &from_rows(&[&[-1.0]]), &from_rows(&[&[1.0]]), &tol()).unwrap();
        assert!((t[(0, 0)] - 1.0).abs() < 1e-15);
        let i = Mat::identity(3, 3);
        let t = solve_sylvester(&i, &(-&i), &Mat::zeros(3, 3), &tol()).unwrap();
        assert_eq!(t.norm(), 0.0);
    }

    #[test]
    fn sylvester_overlapping_spectra() {
        let i = Mat::identity(2, 2);
        let err = solve_sylvester(&i, &i, &i, &tol()).unwrap_err();
        assert!(matches!(err, Error::NoUniqueSolution(_)));
    }

    #[test]
    fn sylvester_dimension_mismatch() {
        let err = solve_sylvester(&Mat::identity(2, 2), &(-Mat::identity(3, 3)), &Mat::zeros(2, 3), &tol());
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn scalar_riccati() {
        let g = observer_gain(&Mat::zeros(1, 1), &Mat::identity(1, 1), &Mat::identity(1, 1), &tol()).unwrap();
        assert!((g.p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((g.l[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn riccati_keeps_stable_plant_stable() {
        let a = -Mat::identity(2, 2);
        let g = observer_gain(&a, &Mat::identity(2, 2), &Mat::identity(2, 2), &tol()).unwrap();
        assert!(spectral_abscissa(&(a - g.l)).unwrap() < 0.0);
    }

    #[test]
    fn riccati_double_integrator() {
        let a = from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let c = from_rows(&[&[1.0, 0.0]]);
        let w = Mat::identity(2, 2);
        let g = observer_gain(&a, &c, &w, &tol()).unwrap();
        assert!(spectral_abscissa(&(&a - &g.l * &c)).unwrap() < 0.0);
        let residual = &a * &g.p + &g.p * a.transpose() - &g.p * c.transpose() * &c * &g.p + w;
        assert!(residual.norm() < 1e-10, "Riccati residual {}", residual.norm());
    }

    #[test]
    fn riccati_rejects_undetectable_pair() {
        let a = Mat::identity(2, 2);
        let c = from_rows(&[&[1.0, 0.0]]);
        let err = observer_gain(&a, &c, &Mat::identity(2, 2), &tol()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn minimal_polynomial_examples() {
        assert_eq!(minimal_polynomial(&Mat::zeros(3, 3), &tol()).unwrap(), vec![0.0]);
        let p = minimal_polynomial(&Mat::identity(2, 2), &tol()).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0] + 1.0).abs() < 1e-14);
        let ao = from_rows(&[&[0.0, 0.5], &[-0.5, 0.0]]);
        let p = minimal_polynomial(&ao, &tol()).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p[0].abs() < 1e-14 && (p[1] - 0.25).abs() < 1e-14, "{p:?}");
    }

    #[test]
    fn pbh_examples() {
        let a = from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let b = Mat::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(pbh_controllable(&a, &b, &tol()).unwrap());
        let b = Mat::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(!pbh_controllable(&Mat::identity(2, 2), &b, &tol()).unwrap());
        // unstable unobservable mode
        let c = from_rows(&[&[1.0, 0.0]]);
        assert!(!pbh_detectable(&from_rows(&[&[-1.0, 0.0], &[0.0, 1.0]]), &c, &tol()).unwrap());
        // stable unobservable mode is fine
        assert!(pbh_detectable(&from_rows(&[&[1.0, 0.0], &[0.0, -1.0]]), &c, &tol()).unwrap());
    }

    #[test]
    fn spectral_abscissa_examples() {
        assert!((spectral_abscissa(&(-Mat::identity(3, 3))).unwrap() + 1.0).abs() < 1e-15);
        let rot = from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert!(spectral_abscissa(&rot).unwrap().abs() < 1e-15);
        let m = kron(&Mat::identity(2, 2), &Mat::from_diagonal(&Vector::from_vec(vec![-0.5, -1.0])));
        assert!((spectral_abscissa(&m).unwrap() + 0.5).abs() < 1e-15);
        assert!(is_hurwitz(&m, 0.4).unwrap() && !is_hurwitz(&m, 0.5).unwrap());
    }

    #[test]
    fn semidefinite_examples() {
        assert!(is_negative_semidefinite(&(-Mat::identity(2, 2)), &tol()).unwrap());
        assert!(!is_negative_semidefinite(&from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]), &tol()).unwrap());
        assert!(is_negative_semidefinite(&from_rows(&[&[-0.5, 0.5], &[0.5, -0.5]]), &tol()).unwrap());
    }

    #[test]
    fn lyapunov_solution() {
        let a = from_rows(&[&[-1.0, 2.0], &[0.0, -3.0]]);
        let p = solve_lyapunov(&a, &Mat::identity(2, 2), &tol()).unwrap();
        let r = a.transpose() * &p + &p * &a + Mat::identity(2, 2);
        assert!(r.norm() < 1e-12);
        assert!(min_symmetric_eigenvalue(&p).unwrap() > 0.0);
    }

    #[test]
    fn tolerance_validation() {
        assert!(Tolerance::new(0.0, 1e-8, 1e-8).is_err());
        assert!(Tolerance::new(1e-9, 1e-8, f64::NAN).is_err());
        assert!(Tolerance::new(1e-9, 1e-8, 1e-8).is_ok());
    }
}
