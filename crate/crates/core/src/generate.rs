//! Seeded random systems with known structure for sweeps and property tests.
//!
//! Normal-form systems are built block by block (so the number of SVD steps is
//! known in advance) and then hidden behind a random orthogonal change of
//! coordinates.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{pbh_controllable, pbh_detectable, solve_lyapunov, Mat, Tolerance};
use crate::normal_form::LinearSystem;
use crate::synthesis::AugmentedPlant;

/// Scale of the generated perturbation matrices `R`.
///
/// Larger values are legal but inflate the backstepping gains until the
/// closed loop is no longer resolvable in double precision.
pub const PERTURBATION_SCALE: f64 = 0.05;

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| -> f64 { StandardNormal.sample(rng) })
}

/// Haar-distributed orthogonal matrix.
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> Mat {
    let qr = gaussian(rng, n, n).qr();
    let (q, r) = qr.unpack();
    let signs = Mat::from_diagonal(&r.diagonal().map(|v| if v < 0.0 { -1.0 } else { 1.0 }));
    q * signs
}

/// `rows x cols` matrix of rank `min(rows, cols)` with singular values in `[lo, hi]`.
pub fn random_with_singular_values<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    let u = random_orthogonal(rng, rows);
    let v = random_orthogonal(rng, cols);
    let mut s = Mat::zeros(rows, cols);
    for k in 0..rows.min(cols) {
        s[(k, k)] = rng.random_range(lo..=hi);
    }
    u * s * v.transpose()
}

/// Random Hurwitz matrix with eigenvalue real parts in `[-hi, -lo]`.
pub fn random_hurwitz<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Mat {
    let q = random_orthogonal(rng, n);
    let mut t = Mat::zeros(n, n);
    let mut k = 0;
    while k < n {
        let re = -rng.random_range(lo..=hi);
        if k + 1 < n && rng.random_bool(0.5) {
            let im: f64 = rng.random_range(0.1..=2.0);
            t[(k, k)] = re;
            t[(k + 1, k + 1)] = re;
            t[(k, k + 1)] = im;
            t[(k + 1, k)] = -im;
            k += 2;
        } else {
            t[(k, k)] = re;
            k += 1;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if t[(i, j)] == 0.0 && !(j == i + 1 && t[(j, i)] != 0.0) {
                let z: f64 = StandardNormal.sample(rng);
                t[(i, j)] = 0.5 * z;
            }
        }
    }
    &q * t * q.transpose()
}

/// Generated system together with the structure it was built from.
#[derive(Debug, Clone)]
pub struct GeneratedSystem {
    pub system: LinearSystem,
    /// Number of SVD steps the reduction should find.
    pub l: usize,
    /// Block heights `n_1 <= ... <= n_{l+1}`.
    pub heights: Vec<usize>,
    /// Orthogonal matrix hiding the normal form: `x = Q^T xi`.
    pub q: Mat,
}

/// System in normal form with `l` SVD steps, blocks of size at most 3,
/// `|C_xi| = 1`, conjugated by a random orthogonal matrix.
pub fn random_normal_form_system<R: Rng>(rng: &mut R, l: usize, outputs: usize, perturbations: usize) -> GeneratedSystem {
    let blocks = l + 1;
    let mut heights: Vec<usize> = (0..blocks).map(|_| rng.random_range(1..=3)).collect();
    heights.sort_unstable();
    let mut off = vec![0];
    for h in &heights {
        off.push(off.last().unwrap() + h);
    }
    let n = off[blocks];
    let m = heights[blocks - 1];
    let mut a = Mat::zeros(n, n);
    for j in 0..blocks {
        for k in 0..=j {
            a.view_mut((off[j], off[k]), (heights[j], heights[k]))
                .copy_from(&gaussian(rng, heights[j], heights[k]));
        }
        if j + 1 < blocks {
            let bj = random_with_singular_values(rng, heights[j], heights[j + 1], 0.5, 2.0);
            a.view_mut((off[j], off[j + 1]), (heights[j], heights[j + 1])).copy_from(&bj);
        }
    }
    let mut b = Mat::zeros(n, m);
    b.view_mut((off[blocks - 1], 0), (m, m)).copy_from(&random_with_singular_values(rng, m, m, 0.5, 2.0));
    let mut c = Mat::zeros(outputs, n);
    // unit output scale, so gamma means the same thing across systems
    let c_xi = gaussian(rng, outputs, heights[0]);
    let c_xi = &c_xi / crate::linalg::spectral_norm(&c_xi).max(f64::MIN_POSITIVE);
    c.view_mut((0, 0), (outputs, heights[0])).copy_from(&c_xi);
    let r = gaussian(rng, n, perturbations) * PERTURBATION_SCALE;
    let q = random_orthogonal(rng, n);
    let qt = q.transpose();
    let system = LinearSystem { a: &qt * a * &q, b: &qt * b, c: c * &q, r: qt * r };
    GeneratedSystem { system, l, heights, q }
}

/// Dense random pair `(A, B)` with `m <= n`.
pub fn random_pair<R: Rng>(rng: &mut R, n: usize, m: usize) -> (Mat, Mat) {
    (gaussian(rng, n, n), gaussian(rng, n, m))
}

/// Relative PBH margin required of generated augmented plants.
pub const DETECTABILITY_MARGIN: f64 = 1e-2;

/// Attempts at the margin before accepting any detectable augmentation.
const STRICT_ATTEMPTS: usize = 200;

fn margin_tolerance(tol: &Tolerance) -> Tolerance {
    Tolerance { rank_tol: DETECTABILITY_MARGIN.max(tol.rank_tol), ..*tol }
}

/// `random_normal_form_system` resampled until `(A, C)` is detectable with
/// relative PBH margin `DETECTABILITY_MARGIN`. Nearly unobservable unstable
/// modes make observer Lyapunov equations unsolvable to tolerance.
pub fn random_detectable_normal_form_system<R: Rng>(
    rng: &mut R,
    l: usize,
    outputs: usize,
    perturbations: usize,
    tol: &Tolerance,
) -> GeneratedSystem {
    let strict = margin_tolerance(tol);
    loop {
        let g = random_normal_form_system(rng, l, outputs, perturbations);
        if pbh_detectable(&g.system.a, &g.system.c, &strict).unwrap_or(false) {
            return g;
        }
    }
}

/// Extends `sys` with a random Hurwitz `M` (`q <= 3` states), controllable
/// `(M, N)` and random `Q`, resampling until the augmented pair is detectable,
/// preferably with relative PBH margin `DETECTABILITY_MARGIN`.
pub fn random_augmented_plant<R: Rng>(rng: &mut R, sys: &LinearSystem, tol: &Tolerance) -> AugmentedPlant {
    let m_in = sys.b.ncols();
    let strict = margin_tolerance(tol);
    let mut attempt = 0;
    loop {
        let nz = rng.random_range(1..=3);
        let m = random_hurwitz(rng, nz, 0.5, 2.0);
        let n = gaussian(rng, nz, m_in);
        if !pbh_controllable(&m, &n, tol).unwrap_or(false) {
            continue;
        }
        let plant = AugmentedPlant {
            a: sys.a.clone(),
            b: sys.b.clone(),
            c: sys.c.clone(),
            r: sys.r.clone(),
            m,
            n,
            q: gaussian(rng, m_in, nz) * 0.5,
        };
        attempt += 1;
        let check = if attempt <= STRICT_ATTEMPTS { &strict } else { tol };
        if pbh_detectable(&plant.a_bar(), &plant.c_bar(), check).unwrap_or(false) {
            return plant;
        }
    }
}

/// Second subsystem `tau' = A tau + R y`, `zeta = C tau` with a quadratic
/// certificate `(P, 1, gamma_zeta)`.
#[derive(Debug, Clone)]
pub struct CertifiedSecondSubsystem {
    pub a: Mat,
    pub r: Mat,
    pub c: Mat,
    pub p: Mat,
    pub gamma_zeta: f64,
}

/// Random certified second subsystem with `inputs` inputs and `outputs` outputs.
///
/// `P` solves `A^T P + P A = -2 C^T C - 2 delta I`; completing the square in
/// `y` gives `beta = lambda_max(R^T P (C^T C + 2 delta I)^-1 P R)` for `alpha = 1`.
pub fn random_second_subsystem<R: Rng>(
    rng: &mut R,
    states: usize,
    inputs: usize,
    outputs: usize,
    tol: &Tolerance,
) -> CertifiedSecondSubsystem {
    let delta = 0.05;
    loop {
        let a = random_hurwitz(rng, states, 0.5, 2.0);
        let r = gaussian(rng, states, inputs) * 0.3;
        let c = gaussian(rng, outputs, states);
        let eye = Mat::identity(states, states);
        let weight = c.transpose() * &c * 2.0 + &eye * (2.0 * delta);
        let Ok(p) = solve_lyapunov(&a, &weight, tol) else { continue };
        let Some(inv) = (c.transpose() * &c + &eye * (2.0 * delta)).try_inverse() else { continue };
        let core = r.transpose() * &p * inv * &p * &r;
        let core = (&core + core.transpose()) * 0.5;
        let beta = core.symmetric_eigenvalues().max();
        if beta.is_finite() && beta > 0.0 {
            return CertifiedSecondSubsystem { a, r, c, p, gamma_zeta: beta };
        }
    }
}
