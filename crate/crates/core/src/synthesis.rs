//! Gamma-stabilizing controller synthesis and quadratic IOS certificates.
//!
//! A certificate `(P, alpha, beta)` for `x' = A_c x + R_c zeta`, `y = C_c x`
//! witnesses `V' <= -alpha |y|^2 + beta |zeta|^2` for `V = x^T P x`, hence an
//! output energy gain of at most `beta / alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result};
use crate::linalg::{
    block_diag, ensure_finite, hstack, is_hurwitz, max_symmetric_eigenvalue, min_symmetric_eigenvalue,
    numeric_rank, observer_gain, pbh_controllable, pbh_detectable, pinv, solve_lyapunov, spectral_abscissa,
    spectral_norm, vstack, Mat, Tolerance,
};
use crate::normal_form::{LinearSystem, NormalForm};

/// Number of times the kappa schedule is doubled before giving up.
pub const MAX_ESCALATIONS: u32 = 20;
pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IosCertificate {
    pub p: Mat,
    pub alpha: f64,
    pub beta: f64,
}

impl IosCertificate {
    pub fn new(p: Mat, alpha: f64, beta: f64) -> Result<Self> {
        let cert = IosCertificate { p, alpha, beta };
        cert.validate()?;
        Ok(cert)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidInput(format!("beta must be positive, got {}", self.beta)));
        }
        if !self.p.is_square() {
            return Err(Error::DimensionMismatch("P must be square".into()));
        }
        ensure_finite(&self.p, "P")
    }

    pub fn gain(&self) -> f64 {
        self.beta / self.alpha
    }
}

/// `[[A_c^T P + P A_c + alpha C_c^T C_c, P R_c], [R_c^T P, -beta I]]`.
pub fn make_certificate_matrix(ac: &Mat, rc: &Mat, cc: &Mat, p: &Mat, alpha: f64, beta: f64) -> Result<Mat> {
    let n = ac.nrows();
    if !ac.is_square() || rc.nrows() != n || cc.ncols() != n || p.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "certificate operands: A_c {:?}, R_c {:?}, C_c {:?}, P {:?}",
            ac.shape(),
            rc.shape(),
            cc.shape(),
            p.shape()
        )));
    }
    let ell = rc.ncols();
    let top_left = ac.transpose() * p + p * ac + cc.transpose() * cc * alpha;
    let pr = p * rc;
    let mut out = Mat::zeros(n + ell, n + ell);
    out.view_mut((0, 0), (n, n)).copy_from(&top_left);
    out.view_mut((0, n), (n, ell)).copy_from(&pr);
    out.view_mut((n, 0), (ell, n)).copy_from(&pr.transpose());
    out.view_mut((n, n), (ell, ell)).copy_from(&(Mat::identity(ell, ell) * -beta));
    Ok((&out + out.transpose()) * 0.5)
}

/// Outcome of evaluating a certificate on a closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    /// Largest eigenvalue of the certificate matrix.
    pub max_eigenvalue: f64,
    /// Spectral norm of the certificate matrix.
    pub scale: f64,
    /// Smallest eigenvalue of `P`.
    pub p_min_eigenvalue: f64,
}

impl CertificateCheck {
    /// Negative semidefinite up to an absolute slack.
    pub fn holds(&self, psd_tol: f64) -> bool {
        self.p_min_eigenvalue > 0.0 && self.max_eigenvalue <= psd_tol
    }

    /// Negative semidefinite up to a slack relative to the matrix size.
    pub fn holds_relative(&self, psd_tol: f64) -> bool {
        self.p_min_eigenvalue > 0.0 && self.max_eigenvalue <= psd_tol * self.scale.max(1.0)
    }
}

pub fn check_certificate(ac: &Mat, rc: &Mat, cc: &Mat, cert: &IosCertificate) -> Result<CertificateCheck> {
    cert.validate()?;
    let m = make_certificate_matrix(ac, rc, cc, &cert.p, cert.alpha, cert.beta)?;
    let p_sym = (&cert.p + cert.p.transpose()) * 0.5;
    Ok(CertificateCheck {
        max_eigenvalue: max_symmetric_eigenvalue(&m)?,
        scale: spectral_norm(&m),
        p_min_eigenvalue: if p_sym.nrows() == 0 { f64::INFINITY } else { min_symmetric_eigenvalue(&p_sym)? },
    })
}

/// Result of the backstepping state-feedback design `u = K x`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFeedbackResult {
    pub gamma: f64,
    pub k: Mat,
    pub kappas: Vec<f64>,
    /// `K_1, ..., K_{l+1}`; `K_j` acts on `(xi_bar_1, ..., xi_bar_j)`.
    pub stage_gains: Vec<Mat>,
    /// `S`, mapping `x` to `xi_bar`.
    pub composite_transform: Mat,
    /// Orthogonal normal-form transform `xi = T x`.
    pub t: Mat,
    /// `xi = W xi_bar`.
    pub w: Mat,
    /// Closed loop in `xi_bar` coordinates: `-kappa_j I` on the diagonal and
    /// `B_j` on the superdiagonal.
    pub cascade: Mat,
    /// Perturbation matrix in `xi_bar` coordinates.
    pub r_bar: Mat,
    /// Output matrix in `xi_bar` coordinates, `[C_xi 0 ... 0]`.
    pub c_bar: Mat,
    /// Certificate in original coordinates, `P = S^T S / 2`.
    pub certificate: IosCertificate,
    /// Number of kappa doublings needed.
    pub escalations: u32,
    /// Largest eigenvalue of the certificate matrix in `xi_bar` coordinates.
    pub certificate_max_eigenvalue: f64,
    /// Relative residual of `S (A + B K) S^-1 = cascade`.
    pub cascade_residual: f64,
    /// Spectral abscissa of `A + B K` computed in original coordinates.
    pub closed_loop_abscissa: f64,
}

impl StateFeedbackResult {
    /// Certificate matrix of `(cascade, r_bar, c_bar)` with `P = I / 2`.
    pub fn cascade_certificate_matrix(&self) -> Result<Mat> {
        let n = self.cascade.nrows();
        let c = &self.certificate;
        make_certificate_matrix(&self.cascade, &self.r_bar, &self.c_bar, &(Mat::identity(n, n) * 0.5), c.alpha, c.beta)
    }

    /// Decay margin `mu = -lambda_max` of the cascade certificate matrix.
    pub fn certificate_margin(&self) -> f64 {
        -self.certificate_max_eigenvalue
    }
}

struct Stages {
    kappas: Vec<f64>,
    gains: Vec<Mat>,
    r_bars: Vec<Mat>,
    w: Mat,
}

fn backstep(nf: &NormalForm, ab: &Mat, gamma: f64, margin: f64, factor: f64, tol: &Tolerance) -> Result<Stages> {
    let dims = &nf.heights;
    let off = nf.offsets();
    let blocks = dims.len();
    let mut w = Mat::identity(dims[0], dims[0]);
    let mut kappas: Vec<f64> = Vec::with_capacity(blocks);
    let mut gains: Vec<Mat> = Vec::with_capacity(blocks);
    let mut r_bars: Vec<Mat> = Vec::with_capacity(blocks);
    // Young splits: the zeta cross terms share beta = 1/2 evenly over the
    // blocks, each B_j coupling costs 1/4 upstream and |B_j|^2 downstream.
    // For two blocks these are exactly the one-step rules.
    let split = (blocks as f64 / 2.0).max(1.0);
    let c_norm = spectral_norm(&nf.c_xi);
    for j in 0..blocks {
        let (r_bar, kappa, drift) = if j == 0 {
            let r_bar = nf.r_blocks[0].clone();
            let kappa = 0.25 + split * spectral_norm(&r_bar).powi(2) + c_norm.max(c_norm * c_norm) / (2.0 * gamma) + margin;
            (r_bar, kappa, nf.a_blocks[0].clone())
        } else {
            let prev = &gains[j - 1];
            let refs: Vec<&Mat> = r_bars.iter().collect();
            let r_bar = &nf.r_blocks[j] - prev * vstack(&refs);
            let upstream = if j + 1 < blocks { 0.25 } else { 0.0 };
            let kappa =
                spectral_norm(&nf.b_blocks[j - 1]).powi(2) + split * spectral_norm(&r_bar).powi(2) + upstream + margin;
            // d/dt xi_j in terms of xi_bar_1..xi_bar_j
            let f = ab.view((off[j], 0), (dims[j], off[j + 1])) * &w;
            // d/dt Xi_bar_{j-1} under the partial cascade, plus the B_{j-1} xi_bar_j coupling
            let mut lam = Mat::zeros(off[j], off[j + 1]);
            for q in 0..j {
                lam.view_mut((off[q], off[q]), (dims[q], dims[q]))
                    .copy_from(&(Mat::identity(dims[q], dims[q]) * -kappas[q]));
                lam.view_mut((off[q], off[q + 1]), (dims[q], dims[q + 1])).copy_from(&nf.b_blocks[q]);
            }
            (r_bar, kappa, f - prev * lam)
        };
        let kappa = kappa * factor;
        let mut sel = Mat::zeros(dims[j], off[j + 1]);
        sel.view_mut((0, off[j]), (dims[j], dims[j])).fill_with_identity();
        let k = pinv(&nf.b_blocks[j], tol)? * (sel * -kappa - drift);
        if j + 1 < blocks {
            let size = off[j + 1];
            let mut next = Mat::identity(off[j + 2], off[j + 2]);
            next.view_mut((0, 0), (size, size)).copy_from(&w);
            next.view_mut((size, 0), (dims[j + 1], size)).copy_from(&k);
            w = next;
        }
        kappas.push(kappa);
        gains.push(k);
        r_bars.push(r_bar);
    }
    Ok(Stages { kappas, gains, r_bars, w })
}

fn cascade_matrix(nf: &NormalForm, kappas: &[f64]) -> Mat {
    let off = nf.offsets();
    let n = nf.n();
    let mut lam = Mat::zeros(n, n);
    for (j, &h) in nf.heights.iter().enumerate() {
        lam.view_mut((off[j], off[j]), (h, h)).copy_from(&(Mat::identity(h, h) * -kappas[j]));
        if j + 1 < nf.heights.len() {
            lam.view_mut((off[j], off[j + 1]), (h, nf.heights[j + 1])).copy_from(&nf.b_blocks[j]);
        }
    }
    lam
}

fn validate_gamma(gamma: f64, margin: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be strictly positive, got {gamma}")));
    }
    if !(margin.is_finite() && margin > 0.0) {
        return Err(Error::InvalidInput(format!("margin must be strictly positive, got {margin}")));
    }
    Ok(())
}

/// Backstepping design of `u = K x` with certified gain `gamma`.
///
/// Stage gains are computed block by block so that the closed loop in
/// `xi_bar` coordinates is the cascade `xi_bar_j' = -kappa_j xi_bar_j +
/// B_j xi_bar_{j+1} + R_bar_j zeta`. The kappa schedule starts at the
/// analytic lower bounds plus `margin` and is doubled until the certificate
/// with `P = S^T S / 2`, `alpha = 1/(2 gamma)`, `beta = 1/2` holds.
pub fn synthesize_state_feedback(
    nf: &NormalForm,
    gamma: f64,
    margin: f64,
    tol: &Tolerance,
) -> Result<StateFeedbackResult> {
    validate_gamma(gamma, margin)?;
    let ab = nf.assembled_a();
    let b_xi = nf.assembled_b();
    let r_xi = nf.assembled_r();
    let c_bar = nf.assembled_c();
    let n = nf.n();
    let alpha = 1.0 / (2.0 * gamma);
    let beta = 0.5;
    let mut last_max = f64::NAN;
    for escalation in 0..=MAX_ESCALATIONS {
        let factor = 2f64.powi(escalation as i32);
        let stages = backstep(nf, &ab, gamma, margin, factor, tol)?;
        let cascade = cascade_matrix(nf, &stages.kappas);
        let refs: Vec<&Mat> = stages.r_bars.iter().collect();
        let r_bar = vstack(&refs);
        let k_last = stages.gains.last().expect("at least one stage");

        let residual = (&ab * &stages.w + &b_xi * k_last - &stages.w * &cascade).norm();
        let scale = ab.norm() * stages.w.norm() + b_xi.norm() * k_last.norm() + stages.w.norm() * cascade.norm();
        let cascade_residual = residual / scale.max(f64::MIN_POSITIVE);
        let r_residual = (&stages.w * &r_bar - &r_xi).norm() / (stages.w.norm() * r_bar.norm()).max(1.0);
        if cascade_residual > 1e-8 || r_residual > 1e-8 {
            return Err(Error::SynthesisFailure(format!(
                "backstepping postcondition violated (cascade residual {cascade_residual:.3e}, perturbation residual {r_residual:.3e})"
            )));
        }

        let half = Mat::identity(n, n) * 0.5;
        let m = make_certificate_matrix(&cascade, &r_bar, &c_bar, &half, alpha, beta)?;
        let max_eig = max_symmetric_eigenvalue(&m)?;
        last_max = max_eig;
        if max_eig > tol.psd_tol {
            continue;
        }

        let w_inv = stages
            .w
            .clone()
            .solve_lower_triangular(&Mat::identity(n, n))
            .ok_or_else(|| Error::NumericalFailure("backstepping transform is singular".into()))?;
        let s = w_inv * &nf.t;
        let k = k_last * &s;
        let a = nf.t.transpose() * &ab * &nf.t;
        let b = nf.t.transpose() * &b_xi;
        let closed_loop_abscissa = spectral_abscissa(&(a + b * &k))?;
        if !(closed_loop_abscissa < 0.0) {
            return Err(Error::SynthesisFailure(format!(
                "A + B K is not numerically Hurwitz in original coordinates (abscissa {closed_loop_abscissa:.3e}); \
                 the gain magnitude {:.3e} exceeds what double precision resolves",
                k.amax()
            )));
        }
        let p = s.transpose() * &s * 0.5;
        return Ok(StateFeedbackResult {
            gamma,
            k,
            kappas: stages.kappas,
            stage_gains: stages.gains,
            composite_transform: s,
            t: nf.t.clone(),
            w: stages.w,
            cascade,
            r_bar,
            c_bar,
            certificate: IosCertificate { p, alpha, beta },
            escalations: escalation,
            certificate_max_eigenvalue: max_eig,
            cascade_residual,
            closed_loop_abscissa,
        });
    }
    Err(Error::SynthesisFailure(format!(
        "certificate still indefinite after {MAX_ESCALATIONS} kappa doublings (largest eigenvalue {last_max:.3e})"
    )))
}

/// Plant with an attached internal-model state `z`:
/// `x' = A x + B Q z + B u + R zeta`, `z' = (M + N Q) z + N u + N B^+ R zeta`,
/// `y = C x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPlant {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub r: Mat,
    pub m: Mat,
    pub n: Mat,
    pub q: Mat,
}

impl AugmentedPlant {
    pub fn validate(&self) -> Result<()> {
        LinearSystem::new(self.a.clone(), self.b.clone(), self.c.clone(), self.r.clone())?;
        let nz = self.m.nrows();
        let mu = self.b.ncols();
        if !self.m.is_square() {
            return Err(Error::DimensionMismatch("M must be square".into()));
        }
        if self.n.shape() != (nz, mu) {
            return Err(Error::DimensionMismatch(format!("N must be {nz}x{mu}, got {:?}", self.n.shape())));
        }
        if self.q.shape() != (mu, nz) {
            return Err(Error::DimensionMismatch(format!("Q must be {mu}x{nz}, got {:?}", self.q.shape())));
        }
        for (m, name) in [(&self.m, "M"), (&self.n, "N"), (&self.q, "Q")] {
            ensure_finite(m, name)?;
        }
        Ok(())
    }

    pub fn system(&self) -> LinearSystem {
        LinearSystem { a: self.a.clone(), b: self.b.clone(), c: self.c.clone(), r: self.r.clone() }
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nz(&self) -> usize {
        self.m.nrows()
    }

    fn b_pinv(&self, tol: &Tolerance) -> Result<Mat> {
        pinv(&self.b, tol)
    }

    pub fn a_bar(&self) -> Mat {
        let (nx, nz) = (self.nx(), self.nz());
        let mut out = Mat::zeros(nx + nz, nx + nz);
        out.view_mut((0, 0), (nx, nx)).copy_from(&self.a);
        out.view_mut((0, nx), (nx, nz)).copy_from(&(&self.b * &self.q));
        out.view_mut((nx, nx), (nz, nz)).copy_from(&(&self.m + &self.n * &self.q));
        out
    }

    pub fn b_bar(&self) -> Mat {
        vstack(&[&self.b, &self.n])
    }

    pub fn r_bar(&self, tol: &Tolerance) -> Result<Mat> {
        Ok(vstack(&[&self.r, &(&self.n * self.b_pinv(tol)? * &self.r)]))
    }

    pub fn c_bar(&self) -> Mat {
        hstack(&[&self.c, &Mat::zeros(self.c.nrows(), self.nz())])
    }

    /// Checks the hypotheses of the output-feedback construction.
    pub fn check_hypotheses(&self, tol: &Tolerance) -> Result<()> {
        self.validate()?;
        if !is_hurwitz(&self.m, 0.0)? {
            return Err(Error::violation(Assumption::InternalModelHurwitz, "M has an eigenvalue with Re >= 0"));
        }
        if !pbh_controllable(&self.m, &self.n, tol)? {
            return Err(Error::violation(Assumption::InternalModelControllability, "PBH rank test fails"));
        }
        if !pbh_detectable(&self.a, &self.c, tol)? {
            return Err(Error::violation(Assumption::Detectability, "PBH rank test fails"));
        }
        if numeric_rank(&self.b, tol)? != self.b.ncols() {
            return Err(Error::violation(Assumption::FullColumnRank, "B^+ B != I"));
        }
        Ok(())
    }
}

/// Observer-based controller `u = K_bar chi`,
/// `chi' = A_bar chi + L (y - C_bar chi) + B_bar u + R_bar zeta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFeedbackController {
    pub k_bar: Mat,
    pub l: Mat,
    pub a_bar: Mat,
    pub b_bar: Mat,
    pub c_bar: Mat,
    pub r_bar: Mat,
}

impl OutputFeedbackController {
    /// Closed loop on `x_c = (x, z, chi)`.
    pub fn closed_loop(&self) -> (Mat, Mat, Mat) {
        let na = self.a_bar.nrows();
        let bk = &self.b_bar * &self.k_bar;
        let lc = &self.l * &self.c_bar;
        let mut ac = Mat::zeros(2 * na, 2 * na);
        ac.view_mut((0, 0), (na, na)).copy_from(&self.a_bar);
        ac.view_mut((0, na), (na, na)).copy_from(&bk);
        ac.view_mut((na, 0), (na, na)).copy_from(&lc);
        ac.view_mut((na, na), (na, na)).copy_from(&(&self.a_bar - &lc + &bk));
        let rc = vstack(&[&self.r_bar, &self.r_bar]);
        let cc = hstack(&[&self.c_bar, &Mat::zeros(self.c_bar.nrows(), na)]);
        (ac, rc, cc)
    }

    /// `A_bar - L C_bar`.
    pub fn observer_matrix(&self) -> Mat {
        &self.a_bar - &self.l * &self.c_bar
    }
}

/// Builds the observer-based controller around a state-feedback gain `K`
/// for the `(A, B, C, R)` part of `plant`.
pub fn synthesize_output_feedback(
    plant: &AugmentedPlant,
    k: &Mat,
    noise_weight: Option<&Mat>,
    tol: &Tolerance,
) -> Result<OutputFeedbackController> {
    plant.check_hypotheses(tol)?;
    if k.shape() != (plant.b.ncols(), plant.nx()) {
        return Err(Error::DimensionMismatch(format!(
            "K must be {}x{}, got {:?}",
            plant.b.ncols(),
            plant.nx(),
            k.shape()
        )));
    }
    ensure_finite(k, "K")?;
    let a_bar = plant.a_bar();
    let c_bar = plant.c_bar();
    let na = a_bar.nrows();
    let identity = Mat::identity(na, na);
    let weight = noise_weight.unwrap_or(&identity);
    let l = match observer_gain(&a_bar, &c_bar, weight, tol) {
        Ok(g) => g.l,
        Err(Error::Infeasible(detail)) => {
            return Err(Error::violation(Assumption::Detectability, format!("augmented pair: {detail}")))
        }
        Err(e) => return Err(e),
    };
    let ctrl = OutputFeedbackController {
        k_bar: hstack(&[k, &(-&plant.q)]),
        l,
        a_bar,
        b_bar: plant.b_bar(),
        c_bar,
        r_bar: plant.r_bar(tol)?,
    };
    let abscissa = output_feedback_abscissa(plant, &ctrl, k)?;
    if !(abscissa < 0.0) {
        return Err(Error::SynthesisFailure(format!("output-feedback closed loop is not Hurwitz (abscissa {abscissa:.3e})")));
    }
    Ok(ctrl)
}

/// Spectral abscissa of the output-feedback closed loop.
///
/// In the coordinates `(x, z - N B^+ x, chi - (x, z))` the closed loop is
/// block triangular with diagonal blocks `A + B K`, `M` and `A_bar - L C_bar`.
pub fn output_feedback_abscissa(plant: &AugmentedPlant, ctrl: &OutputFeedbackController, k: &Mat) -> Result<f64> {
    let a = spectral_abscissa(&(&plant.a + &plant.b * k))?;
    let m = spectral_abscissa(&plant.m)?;
    let f = spectral_abscissa(&ctrl.observer_matrix())?;
    Ok(a.max(m).max(f))
}

/// Closed loop in structured coordinates `(xi_bar, phi, chi_bar)` together with
/// the certificate there.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructuredLoop {
    pub a: Mat,
    pub r: Mat,
    pub c: Mat,
    pub p: Mat,
    /// Map from `(x, z, chi)` to the structured coordinates.
    pub omega: Mat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputFeedbackCertificate {
    /// Certificate on `(x, z, chi)`.
    pub certificate: IosCertificate,
    pub structured: StructuredLoop,
    /// Largest eigenvalue of the Schur complement of the structured certificate.
    pub schur_max_eigenvalue: f64,
    /// Relative residual of `Omega A_c = A_s Omega`.
    pub similarity_residual: f64,
    /// Spectral abscissa via the block-triangular structure.
    pub closed_loop_abscissa: f64,
}

impl OutputFeedbackCertificate {
    pub fn gain(&self) -> f64 {
        self.certificate.gain()
    }
}

/// Certificate for the output-feedback loop with the same `(alpha, beta)` as
/// the state-feedback certificate.
///
/// Uses `V = xi_bar^T xi_bar / 2 + a1 phi^T P_phi phi + a2 chi_bar^T P_chi chi_bar`
/// with `M^T P_phi + P_phi M = -I`, `F^T P_chi + P_chi F = -I`,
/// `F = A_bar - L C_bar`, and weights chosen so that the cross terms consume
/// at most two thirds of the state-feedback margin.
pub fn certify_output_feedback(
    plant: &AugmentedPlant,
    ctrl: &OutputFeedbackController,
    sf: &StateFeedbackResult,
    tol: &Tolerance,
) -> Result<OutputFeedbackCertificate> {
    plant.validate()?;
    let (nx, nz) = (plant.nx(), plant.nz());
    let na = nx + nz;
    let ell = plant.r.ncols();
    let mu = sf.certificate_margin();
    if !(mu > 0.0) {
        return Err(Error::SynthesisFailure(format!(
            "state-feedback certificate has no strict margin (largest eigenvalue {:.3e})",
            sf.certificate_max_eigenvalue
        )));
    }
    let s = &sf.composite_transform;
    let b_pinv = pinv(&plant.b, tol)?;
    let nbp = &plant.n * &b_pinv;
    let f = ctrl.observer_matrix();
    let p_phi = solve_lyapunov(&plant.m, &Mat::identity(nz, nz), tol)?;
    let p_chi = solve_lyapunov(&f, &Mat::identity(na, na), tol)?;

    let s_inv = sf.t.transpose() * &sf.w;
    let e = s * &plant.b * &ctrl.k_bar;
    let g = (&plant.m * &nbp - &nbp * &plant.a) * &s_inv;

    let pg = spectral_norm(&(&p_phi * &g));
    let a1 = if pg > 0.0 { mu / (3.0 * pg * pg) } else { 1.0 };
    let en = spectral_norm(&e);
    let a2 = if en > 0.0 { 3.0 * en * en / (4.0 * mu) } else { 1.0 };

    let cascade_cert = sf.cascade_certificate_matrix()?;
    let mut schur = cascade_cert.clone();
    let extra = g.transpose() * &p_phi * &p_phi * &g * a1 + &e * e.transpose() / (4.0 * a2);
    {
        let mut top = schur.view_mut((0, 0), (nx, nx));
        top += &extra;
    }
    let schur_max_eigenvalue = max_symmetric_eigenvalue(&schur)?;
    if schur_max_eigenvalue > tol.psd_tol {
        return Err(Error::SynthesisFailure(format!(
            "output-feedback certificate fails (Schur complement eigenvalue {schur_max_eigenvalue:.3e})"
        )));
    }

    let dim = nx + nz + na;
    let mut a_s = Mat::zeros(dim, dim);
    a_s.view_mut((0, 0), (nx, nx)).copy_from(&sf.cascade);
    a_s.view_mut((0, nx + nz), (nx, na)).copy_from(&e);
    a_s.view_mut((nx, 0), (nz, nx)).copy_from(&g);
    a_s.view_mut((nx, nx), (nz, nz)).copy_from(&plant.m);
    a_s.view_mut((nx + nz, nx + nz), (na, na)).copy_from(&f);
    let r_s = vstack(&[&sf.r_bar, &Mat::zeros(nz + na, ell)]);
    let c_s = hstack(&[&sf.c_bar, &Mat::zeros(plant.c.nrows(), nz + na)]);
    let p_s = block_diag(&[&(Mat::identity(nx, nx) * 0.5), &(p_phi * a1), &(p_chi * a2)]);

    let mut omega = Mat::zeros(dim, dim);
    omega.view_mut((0, 0), (nx, nx)).copy_from(s);
    omega.view_mut((nx, 0), (nz, nx)).copy_from(&(-&nbp));
    omega.view_mut((nx, nx), (nz, nz)).fill_with_identity();
    omega.view_mut((nx + nz, 0), (na, na)).copy_from(&(-Mat::identity(na, na)));
    omega.view_mut((nx + nz, na), (na, na)).fill_with_identity();

    let (ac, rc, cc) = ctrl.closed_loop();
    let lhs = &omega * &ac;
    let rhs = &a_s * &omega;
    let scale = omega.norm() * ac.norm() + a_s.norm() * omega.norm();
    let similarity_residual = (lhs - rhs).norm() / scale.max(f64::MIN_POSITIVE);
    let r_residual = (&omega * &rc - &r_s).norm() / (omega.norm() * rc.norm()).max(1.0);
    let c_residual = (&c_s * &omega - &cc).norm() / (c_s.norm() * omega.norm()).max(1.0);
    if similarity_residual > 1e-8 || r_residual > 1e-8 || c_residual > 1e-8 {
        return Err(Error::Inconsistent(format!(
            "structured coordinates do not match the closed loop (residuals {similarity_residual:.3e}, {r_residual:.3e}, {c_residual:.3e})"
        )));
    }

    let closed_loop_abscissa = spectral_abscissa(&sf.cascade)?
        .max(spectral_abscissa(&plant.m)?)
        .max(spectral_abscissa(&f)?);
    let p = omega.transpose() * &p_s * &omega;
    let p = (&p + p.transpose()) * 0.5;
    Ok(OutputFeedbackCertificate {
        certificate: IosCertificate { p, alpha: sf.certificate.alpha, beta: sf.certificate.beta },
        structured: StructuredLoop { a: a_s, r: r_s, c: c_s, p: p_s, omega },
        schur_max_eigenvalue,
        similarity_residual,
        closed_loop_abscissa,
    })
}

/// Static or observer-based controller.
#[derive(Debug, Clone)]
pub enum GammaController {
    Static(Mat),
    Dynamic(OutputFeedbackController),
}

/// Closed-loop `(A_c, R_c, C_c)`. For a dynamic controller, `sys` is ignored
/// and the state is `(x, z, chi)`.
pub fn close_loop(sys: &LinearSystem, controller: &GammaController) -> Result<(Mat, Mat, Mat)> {
    match controller {
        GammaController::Static(k) => {
            sys.validate()?;
            if k.shape() != (sys.m(), sys.n()) {
                return Err(Error::DimensionMismatch(format!(
                    "K must be {}x{}, got {:?}",
                    sys.m(),
                    sys.n(),
                    k.shape()
                )));
            }
            Ok((&sys.a + &sys.b * k, sys.r.clone(), sys.c.clone()))
        }
        GammaController::Dynamic(ctrl) => Ok(ctrl.closed_loop()),
    }
}

/// `1 / (N gamma_zeta)`.
pub fn small_gain_bound(gamma_zeta: f64, agents: usize) -> f64 {
    1.0 / (agents as f64 * gamma_zeta)
}

/// `gamma < 1 / (N gamma_zeta)`.
pub fn small_gain_check(gamma: f64, gamma_zeta: f64, agents: usize) -> bool {
    gamma > 0.0 && gamma_zeta > 0.0 && agents > 0 && gamma < small_gain_bound(gamma_zeta, agents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::normal_form::normal_form;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn scalar_certificate_matrix() {
        let m = make_certificate_matrix(&scalar(-1.0), &scalar(1.0), &scalar(1.0), &scalar(0.5), 0.5, 0.5).unwrap();
        assert_eq!(m, from_rows(&[&[-0.5, 0.5], &[0.5, -0.5]]));
        let cert = IosCertificate::new(scalar(0.5), 0.5, 0.5).unwrap();
        let check = check_certificate(&scalar(-1.0), &scalar(1.0), &scalar(1.0), &cert).unwrap();
        assert!(check.holds(1e-8));
        assert_eq!(cert.gain(), 1.0);
    }

    #[test]
    fn certificate_without_perturbation_channel() {
        let a = from_rows(&[&[-1.0, 3.0], &[0.0, -2.0]]);
        let p = solve_lyapunov(&a, &Mat::identity(2, 2), &tol()).unwrap();
        let cert = IosCertificate::new(p, 0.1, 0.3).unwrap();
        let check = check_certificate(&a, &Mat::zeros(2, 1), &from_rows(&[&[1.0, 0.0]]), &cert).unwrap();
        assert!(check.holds(1e-8));
    }

    #[test]
    fn zero_alpha_is_rejected() {
        assert!(IosCertificate::new(scalar(1.0), 0.0, 1.0).is_err());
    }

    #[test]
    fn scalar_state_feedback() {
        let sys = LinearSystem::new(scalar(0.0), scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        let (_, nf) = normal_form(&sys, &tol()).unwrap();
        for gamma in [0.5, 1.0, 4.0] {
            let res = synthesize_state_feedback(&nf, gamma, 1.0, &tol()).unwrap();
            let kappa = 0.25 + 1.0 + 1.0 / (2.0 * gamma) + 1.0;
            assert_eq!(res.escalations, 0);
            assert!((res.kappas[0] - kappa).abs() < 1e-14);
            assert!((res.k[(0, 0)] + kappa).abs() < 1e-14);
            assert!((res.certificate.gain() - gamma).abs() < 1e-15);
            let check = check_certificate(&(&sys.a + &sys.b * &res.k), &sys.r, &sys.c, &res.certificate).unwrap();
            assert!(check.holds(1e-8));
        }
    }

    /// One-step system with unit blocks, `R_2` chosen so that `R_bar_2 = 0`.
    fn unit_l1_form(r2: f64) -> NormalForm {
        NormalForm {
            t: Mat::identity(2, 2),
            heights: vec![1, 1],
            a_blocks: vec![scalar(0.0), scalar(0.0)],
            b_blocks: vec![scalar(1.0), scalar(1.0)],
            r_blocks: vec![scalar(1.0), scalar(r2)],
            d_blocks: vec![vec![], vec![scalar(0.0)]],
            c_xi: scalar(1.0),
        }
    }

    #[test]
    fn one_step_kappa_rules() {
        // kappa_1 = 1/4 + |R_bar_1|^2 + |C_xi|/(2 gamma) + margin = 2.75
        let probe = synthesize_state_feedback(&unit_l1_form(0.0), 1.0, 1.0, &tol()).unwrap();
        let k1 = probe.stage_gains[0][(0, 0)];
        let res = synthesize_state_feedback(&unit_l1_form(k1), 1.0, 1.0, &tol()).unwrap();
        assert_eq!(res.escalations, 0);
        assert!((res.kappas[0] - 2.75).abs() < 1e-14);
        assert!(res.r_bar[(1, 0)].abs() < 1e-14);
        assert!((res.kappas[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn one_step_gains_match_closed_form() {
        // K_1 = -B_1^+ (A_1 + kappa_1 I)
        // K_2 = -B_2^+ [A_2 K_1 + D_21 + kappa_1 K_1,  A_2 - K_1 B_1 + kappa_2 I]
        let nf = NormalForm {
            t: Mat::identity(2, 2),
            heights: vec![1, 1],
            a_blocks: vec![scalar(0.3), scalar(-0.7)],
            b_blocks: vec![scalar(1.5), scalar(0.8)],
            r_blocks: vec![scalar(0.2), scalar(-0.1)],
            d_blocks: vec![vec![], vec![scalar(0.4)]],
            c_xi: scalar(1.2),
        };
        let res = synthesize_state_feedback(&nf, 1.0, 1.0, &tol()).unwrap();
        let (k1, k2) = (res.kappas[0], res.kappas[1]);
        let g1 = -(0.3 + k1) / 1.5;
        assert!((res.stage_gains[0][(0, 0)] - g1).abs() < 1e-12);
        let first = -(-0.7 * g1 + 0.4 + k1 * g1) / 0.8;
        let second = -(-0.7 - g1 * 1.5 + k2) / 0.8;
        assert!((res.stage_gains[1][(0, 0)] - first).abs() < 1e-10);
        assert!((res.stage_gains[1][(0, 1)] - second).abs() < 1e-10);
    }

    #[test]
    fn nonpositive_gamma_is_rejected() {
        let sys = LinearSystem::new(scalar(0.0), scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        let (_, nf) = normal_form(&sys, &tol()).unwrap();
        assert!(matches!(synthesize_state_feedback(&nf, 0.0, 1.0, &tol()), Err(Error::InvalidInput(_))));
        assert!(matches!(synthesize_state_feedback(&nf, -1.0, 1.0, &tol()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn separation_without_internal_model() {
        let a = from_rows(&[&[0.0, 1.0], &[2.0, -1.0]]);
        let b = Mat::from_column_slice(2, 1, &[0.0, 1.0]);
        let c = from_rows(&[&[1.0, 0.0]]);
        let r = Mat::from_column_slice(2, 1, &[0.1, 0.2]);
        let plant = AugmentedPlant {
            a: a.clone(),
            b: b.clone(),
            c,
            r,
            m: Mat::zeros(0, 0),
            n: Mat::zeros(0, 1),
            q: Mat::zeros(1, 0),
        };
        let k = from_rows(&[&[-6.0, -4.0]]);
        let ctrl = synthesize_output_feedback(&plant, &k, None, &tol()).unwrap();
        let (ac, _, _) = ctrl.closed_loop();
        let mut expected: Vec<f64> = crate::linalg::eigenvalues(&(&a + &b * &k))
            .unwrap()
            .into_iter()
            .chain(crate::linalg::eigenvalues(&ctrl.observer_matrix()).unwrap())
            .map(|l| l.re)
            .collect();
        let mut got: Vec<f64> = crate::linalg::eigenvalues(&ac).unwrap().into_iter().map(|l| l.re).collect();
        expected.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        for (e, g) in expected.iter().zip(&got) {
            assert!((e - g).abs() < 1e-6, "{expected:?} vs {got:?}");
        }
    }

    #[test]
    fn scalar_internal_model_appendage() {
        let sys = LinearSystem::new(scalar(1.0), scalar(1.0), scalar(1.0), scalar(0.5)).unwrap();
        let (_, nf) = normal_form(&sys, &tol()).unwrap();
        let sf = synthesize_state_feedback(&nf, 1.0, 1.0, &tol()).unwrap();
        let plant = AugmentedPlant {
            a: sys.a.clone(),
            b: sys.b.clone(),
            c: sys.c.clone(),
            r: sys.r.clone(),
            m: scalar(-1.0),
            n: scalar(1.0),
            q: scalar(0.0),
        };
        let ctrl = synthesize_output_feedback(&plant, &sf.k, None, &tol()).unwrap();
        let (ac, _, _) = ctrl.closed_loop();
        assert!(spectral_abscissa(&ac).unwrap() < 0.0);
        let cert = certify_output_feedback(&plant, &ctrl, &sf, &tol()).unwrap();
        assert!((cert.gain() - 1.0).abs() < 1e-15);
        let (ac, rc, cc) = ctrl.closed_loop();
        let check = check_certificate(&ac, &rc, &cc, &cert.certificate).unwrap();
        assert!(check.holds_relative(1e-8), "{check:?}");
    }

    #[test]
    fn output_feedback_rejects_unstable_internal_model() {
        let plant = AugmentedPlant {
            a: scalar(1.0),
            b: scalar(1.0),
            c: scalar(1.0),
            r: scalar(0.0),
            m: scalar(1.0),
            n: scalar(1.0),
            q: scalar(0.0),
        };
        let err = synthesize_output_feedback(&plant, &scalar(-3.0), None, &tol()).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolation { assumption: Assumption::InternalModelHurwitz, .. }));
    }

    #[test]
    fn close_loop_static() {
        let sys = LinearSystem::new(scalar(0.5), scalar(2.0), scalar(1.0), scalar(1.0)).unwrap();
        let (ac, _, _) = close_loop(&sys, &GammaController::Static(scalar(0.0))).unwrap();
        assert_eq!(ac, sys.a);
        let (ac, _, _) = close_loop(&sys, &GammaController::Static(scalar(-2.0))).unwrap();
        assert_eq!(ac, scalar(0.5 - 4.0));
    }

    #[test]
    fn small_gain_examples() {
        assert!(small_gain_check(1.5, 0.139, 4));
        assert!(!small_gain_check(2.0, 0.139, 4));
        assert!(small_gain_check(0.999, 1.0, 1));
        assert!((small_gain_bound(0.139, 4) - 1.7986).abs() < 1e-4);
    }
}
