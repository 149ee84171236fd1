//! Saved controllers and their certificate re-check.

use gammastab::linalg::{max_symmetric_eigenvalue, min_symmetric_eigenvalue, spectral_abscissa};
use gammastab::synthesis::{
    make_certificate_matrix, AugmentedPlant, OutputFeedbackCertificate, OutputFeedbackController, StateFeedbackResult,
};
use gammastab::{Mat, Tolerance};
use serde::{Deserialize, Serialize};

use crate::config::{matrix, to_rows, Rows};
use crate::error::CliError;

/// Relative residual allowed between the saved coordinates and the closed loop.
pub const SIMILARITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemRows {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub r: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantRows {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub r: Rows,
    pub m: Rows,
    pub n: Rows,
    pub q: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverRows {
    pub k_bar: Rows,
    pub l: Rows,
}

/// Closed loop in the coordinates where the certificate was built:
/// `transform` maps closed-loop states to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredRows {
    pub transform: Rows,
    pub a: Rows,
    pub r: Rows,
    pub c: Rows,
    pub p: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateRows {
    pub p: Rows,
    pub alpha: f64,
    pub beta: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerFile {
    StateFeedback {
        gamma: f64,
        system: SystemRows,
        k: Rows,
        kappas: Vec<f64>,
        certificate: CertificateRows,
        structured: StructuredRows,
    },
    OutputFeedback {
        gamma: f64,
        plant: PlantRows,
        controller: ObserverRows,
        kappas: Vec<f64>,
        certificate: CertificateRows,
        structured: StructuredRows,
    },
}

impl ControllerFile {
    pub fn state_feedback(a: &Mat, b: &Mat, c: &Mat, r: &Mat, sf: &StateFeedbackResult) -> Self {
        let n = sf.cascade.nrows();
        let cert = &sf.certificate;
        ControllerFile::StateFeedback {
            gamma: sf.gamma,
            system: SystemRows { a: to_rows(a), b: to_rows(b), c: to_rows(c), r: to_rows(r) },
            k: to_rows(&sf.k),
            kappas: sf.kappas.clone(),
            certificate: CertificateRows { p: to_rows(&cert.p), alpha: cert.alpha, beta: cert.beta, gain: cert.gain() },
            structured: StructuredRows {
                transform: to_rows(&sf.composite_transform),
                a: to_rows(&sf.cascade),
                r: to_rows(&sf.r_bar),
                c: to_rows(&sf.c_bar),
                p: to_rows(&(Mat::identity(n, n) * 0.5)),
            },
        }
    }

    pub fn output_feedback(
        plant: &AugmentedPlant,
        ctrl: &OutputFeedbackController,
        sf: &StateFeedbackResult,
        cert: &OutputFeedbackCertificate,
    ) -> Self {
        let s = &cert.structured;
        let c = &cert.certificate;
        ControllerFile::OutputFeedback {
            gamma: sf.gamma,
            plant: PlantRows {
                a: to_rows(&plant.a),
                b: to_rows(&plant.b),
                c: to_rows(&plant.c),
                r: to_rows(&plant.r),
                m: to_rows(&plant.m),
                n: to_rows(&plant.n),
                q: to_rows(&plant.q),
            },
            controller: ObserverRows { k_bar: to_rows(&ctrl.k_bar), l: to_rows(&ctrl.l) },
            kappas: sf.kappas.clone(),
            certificate: CertificateRows { p: to_rows(&c.p), alpha: c.alpha, beta: c.beta, gain: c.gain() },
            structured: StructuredRows {
                transform: to_rows(&s.omega),
                a: to_rows(&s.a),
                r: to_rows(&s.r),
                c: to_rows(&s.c),
                p: to_rows(&s.p),
            },
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            ControllerFile::StateFeedback { gamma, .. } | ControllerFile::OutputFeedback { gamma, .. } => *gamma,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("controller files contain only finite numbers")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::input(format!("{origin}: {e}")))
    }

    /// Closed loop `(A_c, R_c, C_c)` rebuilt from the saved plant and gains.
    pub fn closed_loop(&self, tol: &Tolerance) -> Result<(Mat, Mat, Mat), CliError> {
        match self {
            ControllerFile::StateFeedback { system, k, .. } => {
                let a = matrix(&system.a, "system.a")?;
                let b = matrix(&system.b, "system.b")?;
                let c = matrix(&system.c, "system.c")?;
                let r = matrix(&system.r, "system.r")?;
                let k = matrix(k, "k")?;
                let n = a.nrows();
                if !a.is_square() || b.nrows() != n || c.ncols() != n || r.nrows() != n || k.shape() != (b.ncols(), n) {
                    return Err(CliError::input("state-feedback controller: inconsistent dimensions"));
                }
                Ok((&a + &b * &k, r, c))
            }
            ControllerFile::OutputFeedback { plant, controller, .. } => {
                let plant = AugmentedPlant {
                    a: matrix(&plant.a, "plant.a")?,
                    b: matrix(&plant.b, "plant.b")?,
                    c: matrix(&plant.c, "plant.c")?,
                    r: matrix(&plant.r, "plant.r")?,
                    m: matrix(&plant.m, "plant.m")?,
                    n: matrix(&plant.n, "plant.n")?,
                    q: matrix(&plant.q, "plant.q")?,
                };
                plant.validate().map_err(|e| CliError::input(format!("plant: {e}")))?;
                let na = plant.nx() + plant.nz();
                let ctrl = OutputFeedbackController {
                    k_bar: matrix(&controller.k_bar, "controller.k_bar")?,
                    l: matrix(&controller.l, "controller.l")?,
                    a_bar: plant.a_bar(),
                    b_bar: plant.b_bar(),
                    c_bar: plant.c_bar(),
                    r_bar: plant.r_bar(tol)?,
                };
                if ctrl.k_bar.shape() != (plant.b.ncols(), na) || ctrl.l.shape() != (na, plant.c.nrows()) {
                    return Err(CliError::input("output-feedback controller: inconsistent dimensions"));
                }
                Ok(ctrl.closed_loop())
            }
        }
    }

    /// Re-checks the certificate against the closed loop rebuilt from the
    /// saved plant and gains.
    pub fn verify(&self, tol: &Tolerance) -> Result<VerifyReport, CliError> {
        let (ac, rc, cc) = self.closed_loop(tol)?;
        let (structured, certificate) = match self {
            ControllerFile::StateFeedback { structured, certificate, .. }
            | ControllerFile::OutputFeedback { structured, certificate, .. } => (structured, certificate),
        };
        let t = matrix(&structured.transform, "structured.transform")?;
        let a_s = matrix(&structured.a, "structured.a")?;
        let r_s = matrix(&structured.r, "structured.r")?;
        let c_s = matrix(&structured.c, "structured.c")?;
        let p_s = matrix(&structured.p, "structured.p")?;
        let p = matrix(&certificate.p, "certificate.p")?;
        let n = ac.nrows();
        if t.shape() != (n, n) || a_s.shape() != (n, n) || r_s.shape() != rc.shape() || c_s.shape() != cc.shape() {
            return Err(CliError::input("structured coordinates do not match the closed loop"));
        }
        if p_s.shape() != (n, n) || p.shape() != (n, n) {
            return Err(CliError::input("certificate matrices do not match the closed loop"));
        }
        let relative = |lhs: Mat, rhs: Mat, scale: f64| (lhs - rhs).norm() / scale.max(1.0);
        let similarity = relative(&t * &ac, &a_s * &t, t.norm() * ac.norm() + a_s.norm() * t.norm())
            .max(relative(&t * &rc, r_s.clone(), t.norm() * rc.norm()))
            .max(relative(&c_s * &t, cc.clone(), c_s.norm() * t.norm()));
        let congruence = relative(t.transpose() * &p_s * &t, p.clone(), t.norm() * t.norm() * p_s.norm());

        let m = make_certificate_matrix(&a_s, &r_s, &c_s, &p_s, certificate.alpha, certificate.beta)?;
        let normalized = congruence_normalized(&m);
        let max_eigenvalue = max_symmetric_eigenvalue(&normalized)?;
        let p_min = min_symmetric_eigenvalue(&((&p_s + p_s.transpose()) * 0.5))?;
        let abscissa = spectral_abscissa(&a_s)?;
        let gain = certificate.beta / certificate.alpha;
        let gamma = self.gamma();

        let mut failures = Vec::new();
        if !(similarity <= SIMILARITY_TOL && congruence <= SIMILARITY_TOL) {
            failures.push(format!("coordinate residuals {similarity:.3e} / {congruence:.3e} exceed {SIMILARITY_TOL:e}"));
        }
        if !(max_eigenvalue <= tol.psd_tol) {
            failures.push(format!("certificate matrix has eigenvalue {max_eigenvalue:.3e} > {:e}", tol.psd_tol));
        }
        if !(p_min > 0.0) {
            failures.push(format!("P is not positive definite (smallest eigenvalue {p_min:.3e})"));
        }
        if !(abscissa < 0.0) {
            failures.push(format!("closed loop is not Hurwitz (abscissa {abscissa:.3e})"));
        }
        if !(certificate.alpha > 0.0 && certificate.beta > 0.0 && gain <= gamma) {
            failures.push(format!("certified gain {gain} exceeds gamma {gamma}"));
        }
        Ok(VerifyReport {
            gamma,
            gain,
            max_eigenvalue,
            p_min_eigenvalue: p_min,
            closed_loop_abscissa: abscissa,
            similarity_residual: similarity,
            congruence_residual: congruence,
            passed: failures.is_empty(),
            failures,
        })
    }
}

/// `D M D` with `D = diag(1 / sqrt(max(|M_ii|, 1)))`; same inertia as `M`.
pub fn congruence_normalized(m: &Mat) -> Mat {
    let d = Mat::from_diagonal(&m.diagonal().map(|v| 1.0 / v.abs().max(1.0).sqrt()));
    &d * m * &d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub gamma: f64,
    pub gain: f64,
    /// Largest eigenvalue of the diagonally normalized certificate matrix.
    pub max_eigenvalue: f64,
    pub p_min_eigenvalue: f64,
    pub closed_loop_abscissa: f64,
    pub similarity_residual: f64,
    pub congruence_residual: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}
