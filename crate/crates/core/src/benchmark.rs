//! Four-agent benchmark: heterogeneous uncertain agents tracking a common
//! 0.5 rad/s oscillation over a directed graph.

use crate::linalg::{from_rows, kron, Mat};
use crate::sync::{AgentModel, ReferenceModel, SystemMatrix, UncertainEntry};

pub const AGENT_COUNT: usize = 4;
pub const GAMMA: f64 = 1.5;
pub const GAMMA_ZETA: f64 = 0.139;
pub const HORIZON: f64 = 120.0;
pub const PATTERN_FREQUENCY: f64 = 0.5;

pub struct NominalAgent {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
}

pub fn agent_nominal() -> NominalAgent {
    NominalAgent {
        a: from_rows(&[
            &[-1.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 1.0],
            &[1.0, -2.0, -2.0, 0.0],
            &[3.0, 0.0, 1.0, 2.0],
        ]),
        b: from_rows(&[&[0.0, 0.0], &[0.0, 1.0], &[2.0, 0.0], &[0.0, 0.0]]),
        c: from_rows(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]),
    }
}

/// Agent with the four uncertain entries `A(1,1)`, `A(3,2)`, `A(3,3)`,
/// `B(3,1)`, each in `[-1, 1]`.
pub fn agent_model() -> AgentModel {
    let nominal = agent_nominal();
    let entry = |matrix, row, col, param| UncertainEntry { matrix, row, col, param };
    AgentModel {
        a: nominal.a,
        b: nominal.b,
        c: nominal.c,
        entries: vec![
            entry(SystemMatrix::A, 0, 0, 0),
            entry(SystemMatrix::A, 2, 1, 1),
            entry(SystemMatrix::A, 2, 2, 2),
            entry(SystemMatrix::B, 2, 0, 3),
        ],
        bounds: vec![(-1.0, 1.0); 4],
    }
}

pub fn pattern() -> (Mat, Mat) {
    (from_rows(&[&[0.0, 0.5], &[-0.5, 0.0]]), Mat::identity(2, 2))
}

pub fn laplacian() -> Mat {
    from_rows(&[
        &[3.0, -2.0, -1.0, 0.0],
        &[-1.0, 2.0, 0.0, -1.0],
        &[0.0, 0.0, 1.0, -1.0],
        &[0.0, 0.0, -1.0, 1.0],
    ])
}

/// `a_ij > 0` means agent `i` receives from agent `j`.
pub fn adjacency() -> Mat {
    let l = laplacian();
    Mat::from_fn(AGENT_COUNT, AGENT_COUNT, |i, j| if i == j { 0.0 } else { -l[(i, j)] })
}

pub fn reference_model() -> ReferenceModel {
    ReferenceModel {
        b_o: Mat::from_column_slice(2, 1, &[0.0, 35.0]),
        a_zeta: from_rows(&[&[-0.03, 0.47], &[-0.357, -3.94]]),
        b_zeta: Mat::from_element(2, 2, 0.03),
        c_zeta: from_rows(&[&[0.087, 0.112]]),
        gamma_zeta: GAMMA_ZETA,
    }
}

/// Regulator solution as printed alongside the benchmark data.
pub fn printed_regulator_solution() -> (Mat, Mat) {
    let x = from_rows(&[&[1.0, 0.0], &[1.0, 0.5], &[-3.5, -2.0], &[0.0, 1.0]]);
    let u = from_rows(&[&[-2.5, 2.375], &[3.25, 1.5]]);
    (x, u)
}

pub fn printed_generator() -> (Mat, Mat) {
    let eye = Mat::identity(2, 2);
    let phi = kron(&eye, &from_rows(&[&[0.0, 1.0], &[-0.25, 0.0]]));
    let psi = kron(&eye, &from_rows(&[&[1.0, 0.0]]));
    (phi, psi)
}

pub fn printed_internal_model() -> (Mat, Mat) {
    let eye = Mat::identity(2, 2);
    let m = kron(&eye, &from_rows(&[&[-0.5, 0.0], &[0.0, -1.0]]));
    let n = kron(&eye, &Mat::from_column_slice(2, 1, &[1.0, 1.0]));
    (m, n)
}
