//! Robust output synchronization of heterogeneous agents.
//!
//! Each agent gets a copy of a reference model driven by relative outputs,
//! an internal model built from the regulator equations, and an observer-based
//! gamma-stabilizing controller. Consensus of the reference models and
//! regulation of each agent to its reference are tied together by the
//! small-gain condition `gamma < 1 / (N gamma_zeta)`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result};
use crate::linalg::{
    complex_rank, eigenvalues, ensure_finite, hstack, is_hurwitz, kron, minimal_polynomial, pbh_controllable,
    pbh_detectable, pinv, singular_values, solve_sylvester, spectral_abscissa, spectral_norm, to_complex, vstack,
    Mat, Tolerance, Vector,
};
use crate::normal_form::{normal_form, NormalForm};
use crate::synthesis::{
    certify_output_feedback, small_gain_bound, small_gain_check, synthesize_output_feedback,
    synthesize_state_feedback, AugmentedPlant, OutputFeedbackCertificate, OutputFeedbackController,
    StateFeedbackResult, DEFAULT_MARGIN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemMatrix {
    A,
    B,
    C,
}

/// Entry `(row, col)` of one system matrix shifted by `w[param]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertainEntry {
    pub matrix: SystemMatrix,
    pub row: usize,
    pub col: usize,
    pub param: usize,
}

/// Agent `x' = A(w) x + B(w) u`, `y = C(w) x` with entries affine in `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub entries: Vec<UncertainEntry>,
    /// Box `[lo, hi]` for each uncertain parameter.
    pub bounds: Vec<(f64, f64)>,
}

impl AgentModel {
    pub fn certain(a: Mat, b: Mat, c: Mat) -> Self {
        AgentModel { a, b, c, entries: vec![], bounds: vec![] }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if !self.a.is_square() || self.b.nrows() != n || self.c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "agent matrices A {:?}, B {:?}, C {:?} are inconsistent",
                self.a.shape(),
                self.b.shape(),
                self.c.shape()
            )));
        }
        for (m, name) in [(&self.a, "A"), (&self.b, "B"), (&self.c, "C")] {
            ensure_finite(m, name)?;
        }
        for (k, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidInput(format!("uncertainty box {k} is invalid: [{lo}, {hi}]")));
            }
        }
        for e in &self.entries {
            let shape = self.matrix(e.matrix).shape();
            if e.row >= shape.0 || e.col >= shape.1 {
                return Err(Error::InvalidInput(format!(
                    "uncertain entry ({}, {}) is outside {:?} of shape {:?}",
                    e.row, e.col, e.matrix, shape
                )));
            }
            if e.param >= self.bounds.len() {
                return Err(Error::InvalidInput(format!("uncertain entry refers to missing parameter {}", e.param)));
            }
        }
        Ok(())
    }

    fn matrix(&self, which: SystemMatrix) -> &Mat {
        match which {
            SystemMatrix::A => &self.a,
            SystemMatrix::B => &self.b,
            SystemMatrix::C => &self.c,
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Number of uncertain parameters.
    pub fn ell(&self) -> usize {
        self.bounds.len()
    }

    pub fn in_box(&self, w: &[f64]) -> bool {
        w.len() == self.ell() && w.iter().zip(&self.bounds).all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// `(A(w), B(w), C(w))`.
    pub fn evaluate(&self, w: &[f64]) -> Result<(Mat, Mat, Mat)> {
        if w.len() != self.ell() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} uncertain parameters, got {}",
                self.ell(),
                w.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("uncertain parameters must be finite".into()));
        }
        let (mut a, mut b, mut c) = (self.a.clone(), self.b.clone(), self.c.clone());
        for e in &self.entries {
            let target = match e.matrix {
                SystemMatrix::A => &mut a,
                SystemMatrix::B => &mut b,
                SystemMatrix::C => &mut c,
            };
            target[(e.row, e.col)] += w[e.param];
        }
        Ok((a, b, c))
    }

    /// Uniform sample from the uncertainty box scaled by `scale`.
    pub fn sample<R: Rng>(&self, rng: &mut R, scale: f64) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&(lo, hi)| if hi > lo { scale * rng.random_range(lo..=hi) } else { scale * lo })
            .collect()
    }

    /// Checks that `B(w)` keeps full column rank on `samples` random box points.
    pub fn check_input_rank<R: Rng>(&self, rng: &mut R, samples: usize, tol: &Tolerance) -> Result<()> {
        for _ in 0..samples {
            let w = self.sample(rng, 1.0);
            let (_, b, _) = self.evaluate(&w)?;
            if crate::linalg::numeric_rank(&b, tol)? != b.ncols() {
                return Err(Error::violation(Assumption::FullColumnRank, format!("B(w) loses rank at w = {w:?}")));
            }
        }
        Ok(())
    }
}

/// Synchronization pattern `v' = A_o v`, `y_o = C_o v` and the companion data
/// of the minimal polynomial of `A_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternModel {
    pub a_o: Mat,
    pub c_o: Mat,
    pub s: usize,
    pub coefficients: Vec<f64>,
    pub a_bar_o: Mat,
    pub c_bar_o: Mat,
}

pub fn build_pattern_companion(a_o: &Mat, c_o: &Mat, tol: &Tolerance) -> Result<PatternModel> {
    if !a_o.is_square() || c_o.ncols() != a_o.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "pattern matrices A_o {:?} and C_o {:?} are inconsistent",
            a_o.shape(),
            c_o.shape()
        )));
    }
    ensure_finite(a_o, "A_o")?;
    ensure_finite(c_o, "C_o")?;
    if !pbh_detectable(a_o, c_o, tol)? {
        return Err(Error::violation(Assumption::PatternDetectability, "PBH rank test fails"));
    }
    let coefficients = minimal_polynomial(a_o, tol)?;
    let s = coefficients.len();
    let mut a_bar_o = Mat::zeros(s, s);
    for i in 0..s.saturating_sub(1) {
        a_bar_o[(i, i + 1)] = 1.0;
    }
    for (k, alpha) in coefficients.iter().enumerate() {
        // last row is (-alpha_s, ..., -alpha_1)
        a_bar_o[(s - 1, s - 1 - k)] = -alpha;
    }
    let mut c_bar_o = Mat::zeros(1, s);
    if s > 0 {
        c_bar_o[(0, 0)] = 1.0;
    }
    Ok(PatternModel { a_o: a_o.clone(), c_o: c_o.clone(), s, coefficients, a_bar_o, c_bar_o })
}

/// Weighted digraph; `a_ij > 0` means agent `i` receives from agent `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Digraph {
    pub adjacency: Mat,
    pub laplacian: Mat,
}

impl Digraph {
    pub fn new(adjacency: Mat) -> Result<Self> {
        let (laplacian, _) = laplacian_and_spanning_tree(&adjacency)?;
        Ok(Digraph { adjacency, laplacian })
    }

    pub fn agents(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn has_spanning_tree(&self) -> bool {
        spanning_tree_root(&self.adjacency).is_some()
    }
}

/// A node from which every other node is reachable along information flow.
pub fn spanning_tree_root(adjacency: &Mat) -> Option<usize> {
    let n = adjacency.nrows();
    if n == 0 {
        return None;
    }
    (0..n).find(|&root| {
        let mut seen = vec![false; n];
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(j) = queue.pop_front() {
            for i in 0..n {
                if !seen[i] && adjacency[(i, j)] > 0.0 {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        seen.iter().all(|&s| s)
    })
}

/// Laplacian `l_ii = sum_j a_ij`, `l_ij = -a_ij` and the spanning-tree flag.
pub fn laplacian_and_spanning_tree(adjacency: &Mat) -> Result<(Mat, bool)> {
    if !adjacency.is_square() {
        return Err(Error::DimensionMismatch("adjacency matrix must be square".into()));
    }
    ensure_finite(adjacency, "adjacency")?;
    let n = adjacency.nrows();
    for i in 0..n {
        if adjacency[(i, i)] != 0.0 {
            return Err(Error::InvalidInput(format!("adjacency diagonal entry {i} must be zero")));
        }
        for j in 0..n {
            if adjacency[(i, j)] < 0.0 {
                return Err(Error::InvalidInput(format!("adjacency weight ({i}, {j}) is negative")));
            }
        }
    }
    let laplacian = Mat::from_fn(n, n, |i, j| if i == j { adjacency.row(i).sum() } else { -adjacency[(i, j)] });
    Ok((laplacian, spanning_tree_root(adjacency).is_some()))
}

/// Reference-model matrices shared by all agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub b_o: Mat,
    pub a_zeta: Mat,
    pub b_zeta: Mat,
    pub c_zeta: Mat,
    pub gamma_zeta: f64,
}

impl ReferenceModel {
    pub fn validate(&self, pattern: &PatternModel, output_dim: usize, tol: &Tolerance) -> Result<()> {
        let lo = pattern.a_o.nrows();
        let nz = self.a_zeta.nrows();
        if self.b_o.nrows() != lo
            || self.c_zeta.ncols() != nz
            || self.b_o.ncols() != self.c_zeta.nrows()
            || !self.a_zeta.is_square()
            || self.b_zeta.shape() != (nz, output_dim)
        {
            return Err(Error::DimensionMismatch(format!(
                "reference model B_o {:?}, A_zeta {:?}, B_zeta {:?}, C_zeta {:?} do not fit a {lo}-state pattern with {output_dim} outputs",
                self.b_o.shape(),
                self.a_zeta.shape(),
                self.b_zeta.shape(),
                self.c_zeta.shape()
            )));
        }
        for (m, name) in [(&self.b_o, "B_o"), (&self.a_zeta, "A_zeta"), (&self.b_zeta, "B_zeta"), (&self.c_zeta, "C_zeta")]
        {
            ensure_finite(m, name)?;
        }
        if !(self.gamma_zeta.is_finite() && self.gamma_zeta > 0.0) {
            return Err(Error::InvalidInput(format!("gamma_zeta must be positive, got {}", self.gamma_zeta)));
        }
        let _ = tol;
        if !is_hurwitz(&self.a_zeta, 0.0)? {
            return Err(Error::violation(Assumption::ReferenceHurwitz, "A_zeta has an eigenvalue with Re >= 0"));
        }
        Ok(())
    }

    /// `B_o C_zeta`.
    pub fn drive(&self) -> Mat {
        &self.b_o * &self.c_zeta
    }

    pub fn state_dim(&self) -> usize {
        self.a_zeta.nrows()
    }
}

/// Solves `X A_o = A X + B U`, `C X = C_o`.
pub fn solve_regulator_equations(a: &Mat, b: &Mat, c: &Mat, a_o: &Mat, c_o: &Mat, tol: &Tolerance) -> Result<(Mat, Mat)> {
    let n = a.nrows();
    let m = b.ncols();
    let p = c.nrows();
    let lo = a_o.nrows();
    if !a.is_square() || b.nrows() != n || c.ncols() != n || !a_o.is_square() || c_o.shape() != (p, lo) {
        return Err(Error::DimensionMismatch(format!(
            "regulator equations: A {:?}, B {:?}, C {:?}, A_o {:?}, C_o {:?}",
            a.shape(),
            b.shape(),
            c.shape(),
            a_o.shape(),
            c_o.shape()
        )));
    }
    for (mat, name) in [(a, "A"), (b, "B"), (c, "C"), (a_o, "A_o"), (c_o, "C_o")] {
        ensure_finite(mat, name)?;
    }
    // rank [[A - lambda I, B], [C, 0]] = n + m at every eigenvalue of A_o
    let mut rosenbrock = DMatrix::<Complex64>::zeros(n + p, n + m);
    rosenbrock.view_mut((0, n), (n, m)).copy_from(&to_complex(b));
    rosenbrock.view_mut((n, 0), (p, n)).copy_from(&to_complex(c));
    for lambda in eigenvalues(a_o)? {
        let shifted = to_complex(a) - DMatrix::<Complex64>::identity(n, n) * lambda;
        rosenbrock.view_mut((0, 0), (n, n)).copy_from(&shifted);
        if complex_rank(&rosenbrock, tol)? != n + m {
            return Err(Error::TransmissionZero { re: lambda.re, im: lambda.im });
        }
    }

    let unknowns = n * lo + m * lo;
    let mut sys = Mat::zeros(n * lo + p * lo, unknowns);
    let top = kron(&a_o.transpose(), &Mat::identity(n, n)) - kron(&Mat::identity(lo, lo), a);
    sys.view_mut((0, 0), (n * lo, n * lo)).copy_from(&top);
    sys.view_mut((0, n * lo), (n * lo, m * lo)).copy_from(&(-kron(&Mat::identity(lo, lo), b)));
    sys.view_mut((n * lo, 0), (p * lo, n * lo)).copy_from(&kron(&Mat::identity(lo, lo), c));
    let mut rhs = Vector::zeros(n * lo + p * lo);
    rhs.rows_mut(n * lo, p * lo).copy_from_slice(c_o.as_slice());

    let sol = if sys.is_square() {
        sys.clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NumericalFailure("regulator system is singular".into()))?
    } else {
        crate::linalg::svd_solve(&sys, &Mat::from_column_slice(rhs.len(), 1, rhs.as_slice()), 1e-14)?.column(0).into_owned()
    };
    let x = Mat::from_column_slice(n, lo, &sol.as_slice()[..n * lo]);
    let u = Mat::from_column_slice(m, lo, &sol.as_slice()[n * lo..]);
    let scale = 1f64.max(a.norm()).max(a_o.norm()) * 1f64.max(x.norm()) + b.norm() * u.norm();
    let r1 = (&x * a_o - a * &x - b * &u).norm();
    let r2 = (c * &x - c_o).norm();
    if r1 > tol.eq_tol * scale || r2 > tol.eq_tol * 1f64.max(c_o.norm()) {
        return Err(Error::NumericalFailure(format!("regulator residuals too large ({r1:.3e}, {r2:.3e})")));
    }
    Ok((x, u))
}

/// `Phi = I_m (x) A_bar_o`, `Psi = I_m (x) C_bar_o` and `Upsilon` with
/// `Upsilon A_o = Phi Upsilon`, `U = Psi Upsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateGenerator {
    pub phi: Mat,
    pub psi: Mat,
    pub upsilon: Mat,
}

pub fn build_steady_state_generator(u: &Mat, pattern: &PatternModel) -> Result<SteadyStateGenerator> {
    let lo = pattern.a_o.nrows();
    if u.ncols() != lo {
        return Err(Error::DimensionMismatch(format!("U must have {lo} columns, got {}", u.ncols())));
    }
    ensure_finite(u, "U")?;
    let m = u.nrows();
    let s = pattern.s;
    let mut upsilon = Mat::zeros(m * s, lo);
    for j in 0..m {
        let mut row = u.row(j).into_owned();
        for k in 0..s {
            upsilon.row_mut(j * s + k).copy_from(&row);
            row = row * &pattern.a_o;
        }
    }
    let eye = Mat::identity(m, m);
    let phi = kron(&eye, &pattern.a_bar_o);
    let psi = kron(&eye, &pattern.c_bar_o);
    let scale = 1f64.max(upsilon.norm()) * 1f64.max(pattern.a_o.norm()).max(phi.norm());
    let d1 = (&upsilon * &pattern.a_o - &phi * &upsilon).norm();
    let d2 = (u - &psi * &upsilon).norm();
    if d1 > 1e-10 * scale || d2 > 1e-10 * 1f64.max(u.norm()) {
        return Err(Error::NumericalFailure(format!(
            "steady-state generator identities fail ({d1:.3e}, {d2:.3e}); minimal polynomial degree is wrong"
        )));
    }
    Ok(SteadyStateGenerator { phi, psi, upsilon })
}

/// `M = I_m (x) diag(-1/2, -1, ..., -s/2)`, `N = I_m (x) (1, ..., 1)^T`.
pub fn default_internal_model(m: usize, s: usize) -> (Mat, Mat) {
    let eye = Mat::identity(m, m);
    let diag = Mat::from_diagonal(&Vector::from_fn(s, |k, _| -0.5 * (k as f64 + 1.0)));
    (kron(&eye, &diag), kron(&eye, &Mat::from_element(s, 1, 1.0)))
}

/// Internal model `eta' = M eta + N u + G zeta` together with the Sylvester
/// solution `T` (`T Phi - M T = N Psi`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalModel {
    pub m: Mat,
    pub n: Mat,
    pub t: Mat,
    pub t_inv: Mat,
    /// `Psi T^-1`.
    pub q: Mat,
    /// `G = T Upsilon B_o C_zeta - N B^+ X B_o C_zeta`.
    pub zeta_gain: Mat,
}

pub fn build_internal_model(
    b: &Mat,
    generator: &SteadyStateGenerator,
    m: &Mat,
    n: &Mat,
    x: &Mat,
    reference: &ReferenceModel,
    tol: &Tolerance,
) -> Result<InternalModel> {
    let dim = generator.phi.nrows();
    if m.shape() != (dim, dim) || n.shape() != (dim, b.ncols()) {
        return Err(Error::DimensionMismatch(format!(
            "internal model needs M {dim}x{dim} and N {dim}x{}, got {:?} and {:?}",
            b.ncols(),
            m.shape(),
            n.shape()
        )));
    }
    ensure_finite(m, "M")?;
    ensure_finite(n, "N")?;
    if !is_hurwitz(m, 0.0)? {
        return Err(Error::violation(Assumption::InternalModelHurwitz, "M has an eigenvalue with Re >= 0"));
    }
    if !pbh_controllable(m, n, tol)? {
        return Err(Error::violation(Assumption::InternalModelControllability, "PBH rank test fails"));
    }
    let t = match solve_sylvester(&generator.phi, m, &(n * &generator.psi), tol) {
        Ok(t) => t,
        Err(Error::NoUniqueSolution(detail)) => return Err(Error::violation(Assumption::DisjointSpectra, detail)),
        Err(e) => return Err(e),
    };
    let sv = singular_values(&t)?;
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = sv.last().copied().unwrap_or(0.0);
    if dim > 0 && smin <= tol.rank_tol * smax.max(1.0) {
        return Err(Error::SynthesisFailure(format!(
            "Sylvester solution T is numerically singular (smallest singular value {smin:.3e}); choose a different M"
        )));
    }
    let t_inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SynthesisFailure("Sylvester solution T is singular; choose a different M".into()))?;
    let q = &generator.psi * &t_inv;
    let drive = reference.drive();
    let zeta_gain = &t * &generator.upsilon * &drive - n * pinv(b, tol)? * x * &drive;
    Ok(InternalModel { m: m.clone(), n: n.clone(), t, t_inv, q, zeta_gain })
}

/// Plant plus internal model in error coordinates, in the template of the
/// output-feedback construction with `R = -X B_o C_zeta` and `Q = Psi T^-1`.
pub fn build_augmented_system(
    a: &Mat,
    b: &Mat,
    c: &Mat,
    im: &InternalModel,
    x: &Mat,
    reference: &ReferenceModel,
    tol: &Tolerance,
) -> Result<AugmentedPlant> {
    let plant = AugmentedPlant {
        a: a.clone(),
        b: b.clone(),
        c: c.clone(),
        r: -(x * reference.drive()),
        m: im.m.clone(),
        n: im.n.clone(),
        q: im.q.clone(),
    };
    plant.validate()?;
    let a_bar = plant.a_bar();
    let (nx, nz) = (plant.nx(), plant.nz());
    let d12 = (a_bar.view((0, nx), (nx, nz)) - b * &im.q).norm();
    let d22 = (a_bar.view((nx, nx), (nz, nz)) - (&im.m + &im.n * &im.q)).norm();
    if d12 > 1e-12 * 1f64.max(a_bar.norm()) || d22 > 1e-12 * 1f64.max(a_bar.norm()) {
        return Err(Error::Inconsistent("augmented system does not match the internal-model template".into()));
    }
    let r_bar = plant.r_bar(tol)?;
    let expected = vstack(&[&plant.r, &(-(&im.n * pinv(b, tol)? * x * reference.drive()))]);
    if (r_bar - expected).norm() > 1e-12 * 1f64.max(plant.r.norm()) {
        return Err(Error::Inconsistent("augmented perturbation matrix does not match the template".into()));
    }
    plant.check_hypotheses(tol)?;
    Ok(plant)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncOptions {
    pub gamma: f64,
    pub margin: f64,
    pub noise_weight: Option<Mat>,
    /// `(M, N)`; the default internal model is used when absent.
    pub internal_model: Option<(Mat, Mat)>,
}

impl SyncOptions {
    pub fn new(gamma: f64) -> Self {
        SyncOptions { gamma, margin: DEFAULT_MARGIN, noise_weight: None, internal_model: None }
    }
}

/// Everything designed for one agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncDesign {
    pub x: Mat,
    pub u: Mat,
    pub generator: SteadyStateGenerator,
    pub internal_model: InternalModel,
    pub plant: AugmentedPlant,
    pub normal_form_steps: usize,
    pub state_feedback: StateFeedbackResult,
    pub controller: OutputFeedbackController,
    pub certificate: OutputFeedbackCertificate,
}

pub fn design_agent(
    agent: &AgentModel,
    pattern: &PatternModel,
    reference: &ReferenceModel,
    opts: &SyncOptions,
    tol: &Tolerance,
) -> Result<SyncDesign> {
    agent.validate()?;
    let (x, u) = solve_regulator_equations(&agent.a, &agent.b, &agent.c, &pattern.a_o, &pattern.c_o, tol)?;
    let generator = build_steady_state_generator(&u, pattern)?;
    let (m, n) = match &opts.internal_model {
        Some((m, n)) => (m.clone(), n.clone()),
        None => default_internal_model(agent.m(), pattern.s),
    };
    let internal_model = build_internal_model(&agent.b, &generator, &m, &n, &x, reference, tol)?;
    let plant = build_augmented_system(&agent.a, &agent.b, &agent.c, &internal_model, &x, reference, tol)?;
    let (_, nf): (_, NormalForm) = normal_form(&plant.system(), tol)?;
    let state_feedback = synthesize_state_feedback(&nf, opts.gamma, opts.margin, tol)?;
    let controller = synthesize_output_feedback(&plant, &state_feedback.k, opts.noise_weight.as_ref(), tol)?;
    let certificate = certify_output_feedback(&plant, &controller, &state_feedback, tol)?;
    Ok(SyncDesign {
        x,
        u,
        generator,
        internal_model,
        plant,
        normal_form_steps: nf.l(),
        state_feedback,
        controller,
        certificate,
    })
}

/// Per-agent controller with state `(chi, v, zeta, eta)`:
/// `w' = A w + B_y y + B_rel rel`, `u = C_u w`, where `rel` is the weighted sum
/// of relative outputs received from neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributedController {
    pub a: Mat,
    pub b_y: Mat,
    pub b_rel: Mat,
    pub c_u: Mat,
    pub chi_dim: usize,
    pub v_dim: usize,
    pub zeta_dim: usize,
    pub eta_dim: usize,
}

impl DistributedController {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
}

pub fn assemble_distributed_controller(
    design: &SyncDesign,
    pattern: &PatternModel,
    reference: &ReferenceModel,
    agents: usize,
) -> Result<DistributedController> {
    let gamma = design.state_feedback.gamma;
    if !small_gain_check(gamma, reference.gamma_zeta, agents) {
        return Err(Error::DesignRejection { gamma, bound: small_gain_bound(reference.gamma_zeta, agents) });
    }
    let ctrl = &design.controller;
    let im = &design.internal_model;
    let nchi = ctrl.a_bar.nrows();
    let nv = pattern.a_o.nrows();
    let nzeta = reference.state_dim();
    let neta = im.m.nrows();
    let p = ctrl.c_bar.nrows();
    let dim = nchi + nv + nzeta + neta;
    let drive = reference.drive();
    let mut a = Mat::zeros(dim, dim);
    let (oc, ov, oz, oe) = (0, nchi, nchi + nv, nchi + nv + nzeta);
    let bk = &ctrl.b_bar * &ctrl.k_bar;
    a.view_mut((oc, oc), (nchi, nchi)).copy_from(&(ctrl.observer_matrix() + bk));
    a.view_mut((oc, ov), (nchi, nv)).copy_from(&(-(&ctrl.l * &pattern.c_o)));
    a.view_mut((oc, oz), (nchi, nzeta)).copy_from(&ctrl.r_bar);
    a.view_mut((ov, ov), (nv, nv)).copy_from(&pattern.a_o);
    a.view_mut((ov, oz), (nv, nzeta)).copy_from(&drive);
    a.view_mut((oz, oz), (nzeta, nzeta)).copy_from(&reference.a_zeta);
    a.view_mut((oe, oc), (neta, nchi)).copy_from(&(&im.n * &ctrl.k_bar));
    a.view_mut((oe, oz), (neta, nzeta)).copy_from(&im.zeta_gain);
    a.view_mut((oe, oe), (neta, neta)).copy_from(&(&im.m + &im.n * &im.q));
    let mut b_y = Mat::zeros(dim, p);
    b_y.view_mut((oc, 0), (nchi, p)).copy_from(&ctrl.l);
    let mut b_rel = Mat::zeros(dim, p);
    b_rel.view_mut((oz, 0), (nzeta, p)).copy_from(&reference.b_zeta);
    let mut c_u = Mat::zeros(ctrl.k_bar.nrows(), dim);
    c_u.view_mut((0, oc), (ctrl.k_bar.nrows(), nchi)).copy_from(&ctrl.k_bar);
    c_u.view_mut((0, oe), (im.q.nrows(), neta)).copy_from(&im.q);
    Ok(DistributedController { a, b_y, b_rel, c_u, chi_dim: nchi, v_dim: nv, zeta_dim: nzeta, eta_dim: neta })
}

/// Designed network: agents, graph, reference model and per-agent controllers.
#[derive(Debug, Clone)]
pub struct SyncNetwork {
    pub agents: Vec<AgentModel>,
    pub graph: Digraph,
    pub pattern: PatternModel,
    pub reference: ReferenceModel,
    pub designs: Vec<SyncDesign>,
    pub controllers: Vec<DistributedController>,
}

/// Designs every agent and the distributed controllers.
///
/// Structural checks and the small-gain condition run before any synthesis.
pub fn build_network(
    agents: Vec<AgentModel>,
    graph: Digraph,
    pattern: PatternModel,
    reference: ReferenceModel,
    opts: &SyncOptions,
    tol: &Tolerance,
) -> Result<SyncNetwork> {
    let count = agents.len();
    if count == 0 {
        return Err(Error::InvalidInput("at least one agent is required".into()));
    }
    if graph.agents() != count {
        return Err(Error::DimensionMismatch(format!("graph has {} nodes for {count} agents", graph.agents())));
    }
    for (i, agent) in agents.iter().enumerate() {
        agent.validate()?;
        if agent.p() != pattern.c_o.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "agent {} has {} outputs, pattern has {}",
                i + 1,
                agent.p(),
                pattern.c_o.nrows()
            )));
        }
    }
    reference.validate(&pattern, pattern.c_o.nrows(), tol)?;
    if !graph.has_spanning_tree() {
        return Err(Error::violation(Assumption::SpanningTree, "no node reaches all others"));
    }
    if !(opts.gamma.is_finite() && opts.gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be strictly positive, got {}", opts.gamma)));
    }
    if !small_gain_check(opts.gamma, reference.gamma_zeta, count) {
        return Err(Error::DesignRejection { gamma: opts.gamma, bound: small_gain_bound(reference.gamma_zeta, count) });
    }
    let mut designs = Vec::with_capacity(count);
    let mut controllers = Vec::with_capacity(count);
    for agent in &agents {
        let design = design_agent(agent, &pattern, &reference, opts, tol)?;
        controllers.push(assemble_distributed_controller(&design, &pattern, &reference, count)?);
        designs.push(design);
    }
    Ok(SyncNetwork { agents, graph, pattern, reference, designs, controllers })
}

impl SyncNetwork {
    /// State offsets of each agent block `(x_i, w_i)`; has `N + 1` entries.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for (agent, ctrl) in self.agents.iter().zip(&self.controllers) {
            off.push(off.last().unwrap() + agent.n() + ctrl.state_dim());
        }
        off
    }

    pub fn state_dim(&self) -> usize {
        *self.offsets().last().unwrap()
    }

    pub fn output_dim(&self) -> usize {
        self.agents.iter().map(|a| a.p()).sum()
    }

    /// Closed-loop matrix and output matrix of the whole network with agent
    /// parameters `ws`.
    pub fn closed_loop(&self, ws: &[Vec<f64>]) -> Result<(Mat, Mat)> {
        let count = self.agents.len();
        if ws.len() != count {
            return Err(Error::DimensionMismatch(format!("expected {count} parameter vectors, got {}", ws.len())));
        }
        let mut plants = Vec::with_capacity(count);
        for (agent, w) in self.agents.iter().zip(ws) {
            plants.push(agent.evaluate(w)?);
        }
        let off = self.offsets();
        let dim = self.state_dim();
        let mut f = Mat::zeros(dim, dim);
        let mut out = Mat::zeros(self.output_dim(), dim);
        let mut out_row = 0;
        for i in 0..count {
            let (a, b, c) = &plants[i];
            let ctrl = &self.controllers[i];
            let n = a.nrows();
            let (ox, ow) = (off[i], off[i] + n);
            let dw = ctrl.state_dim();
            f.view_mut((ox, ox), (n, n)).copy_from(a);
            f.view_mut((ox, ow), (n, dw)).copy_from(&(b * &ctrl.c_u));
            f.view_mut((ow, ow), (dw, dw)).copy_from(&ctrl.a);
            let mut own = &ctrl.b_y * c;
            let degree: f64 = self.graph.adjacency.row(i).sum();
            own -= &ctrl.b_rel * c * degree;
            f.view_mut((ow, ox), (dw, n)).copy_from(&own);
            for j in 0..count {
                let aij = self.graph.adjacency[(i, j)];
                if aij > 0.0 {
                    let cj = &plants[j].2;
                    let nj = cj.ncols();
                    let mut block = f.view_mut((ow, off[j]), (dw, nj));
                    block += &ctrl.b_rel * cj * aij;
                }
            }
            out.view_mut((out_row, ox), (c.nrows(), n)).copy_from(c);
            out_row += c.nrows();
        }
        Ok((f, out))
    }

    /// State on the steady-state manifold with common pattern state `v0`:
    /// `x_i = X_i v0`, `chi_i = 0`, `v_i = v0`, `zeta_i = 0`, `eta_i = T_i Upsilon_i v0`.
    pub fn manifold_state(&self, v0: &Vector) -> Result<Vector> {
        if v0.len() != self.pattern.a_o.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "pattern state must have {} entries",
                self.pattern.a_o.nrows()
            )));
        }
        let off = self.offsets();
        let mut state = Vector::zeros(self.state_dim());
        for (i, (design, ctrl)) in self.designs.iter().zip(&self.controllers).enumerate() {
            let n = design.x.nrows();
            state.rows_mut(off[i], n).copy_from(&(&design.x * v0));
            let ow = off[i] + n;
            state.rows_mut(ow + ctrl.chi_dim, ctrl.v_dim).copy_from(v0);
            let eta = &design.internal_model.t * &design.generator.upsilon * v0;
            state.rows_mut(ow + ctrl.chi_dim + ctrl.v_dim + ctrl.zeta_dim, ctrl.eta_dim).copy_from(&eta);
        }
        Ok(state)
    }

    /// Rows mapping the network state to the regulation errors
    /// `e_i = y_i - C_o v_i`, stacked by agent.
    pub fn regulation_error_matrix(&self, ws: &[Vec<f64>]) -> Result<Mat> {
        if ws.len() != self.agents.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameter vectors, got {}",
                self.agents.len(),
                ws.len()
            )));
        }
        let off = self.offsets();
        let mut e = Mat::zeros(self.output_dim(), self.state_dim());
        let mut row = 0;
        for (i, (agent, ctrl)) in self.agents.iter().zip(&self.controllers).enumerate() {
            let (_, _, c) = agent.evaluate(&ws[i])?;
            let p = c.nrows();
            e.view_mut((row, off[i]), (p, agent.n())).copy_from(&c);
            let ov = off[i] + agent.n() + ctrl.chi_dim;
            e.view_mut((row, ov), (p, ctrl.v_dim)).copy_from(&(-&self.pattern.c_o));
            row += p;
        }
        Ok(e)
    }

    /// Output of agent `i` together with the matching rows of the output matrix.
    pub fn output_ranges(&self) -> Vec<(usize, usize)> {
        let mut ranges = Vec::with_capacity(self.agents.len());
        let mut row = 0;
        for a in &self.agents {
            ranges.push((row, a.p()));
            row += a.p();
        }
        ranges
    }
}

/// Largest spectral abscissa of the reference-model disagreement dynamics
/// `[[A_o, B_o C_zeta], [-lambda B_zeta C_o, A_zeta]]` over the nonzero
/// Laplacian eigenvalues `lambda`. Negative means the unperturbed reference
/// models reach consensus.
pub fn consensus_margin(pattern: &PatternModel, reference: &ReferenceModel, graph: &Digraph) -> Result<f64> {
    let lo = pattern.a_o.nrows();
    let nz = reference.state_dim();
    let dim = lo + nz;
    let drive = reference.drive();
    let coupling = &reference.b_zeta * &pattern.c_o;
    let scale = 1f64.max(spectral_norm(&graph.laplacian));
    let mut worst = f64::NEG_INFINITY;
    for lambda in eigenvalues(&graph.laplacian)? {
        if lambda.norm() <= 1e-9 * scale {
            continue;
        }
        let mut re = Mat::zeros(dim, dim);
        re.view_mut((0, 0), (lo, lo)).copy_from(&pattern.a_o);
        re.view_mut((0, lo), (lo, nz)).copy_from(&drive);
        re.view_mut((lo, 0), (nz, lo)).copy_from(&(&coupling * -lambda.re));
        re.view_mut((lo, lo), (nz, nz)).copy_from(&reference.a_zeta);
        let mut im = Mat::zeros(dim, dim);
        im.view_mut((lo, 0), (nz, lo)).copy_from(&(&coupling * -lambda.im));
        let real_form = vstack(&[&hstack(&[&re, &(-&im)]), &hstack(&[&im, &re])]);
        worst = worst.max(spectral_abscissa(&real_form)?);
    }
    Ok(worst)
}

/// Eigenvalues of `A_o` at which the regulator rank condition fails for
/// sampled parameters; empty when every sample passes.
pub fn regulator_rank_warnings<R: Rng>(
    agent: &AgentModel,
    pattern: &PatternModel,
    rng: &mut R,
    samples: usize,
    scale: f64,
    tol: &Tolerance,
) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    for _ in 0..samples {
        let w = agent.sample(rng, scale);
        let (a, b, c) = agent.evaluate(&w)?;
        if let Err(Error::TransmissionZero { re, im }) =
            solve_regulator_equations(&a, &b, &c, &pattern.a_o, &pattern.c_o, tol)
        {
            warnings.push(format!("regulator rank condition fails at {re} + {im}i for w = {w:?}"));
        }
    }
    Ok(warnings)
}
