use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Structural hypotheses the synthesis pipeline depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// (A, B) controllable.
    Controllability,
    /// C·A^(j-1)·B = 0 for every SVD step j.
    LevelCondition,
    /// (A, C) detectable.
    Detectability,
    /// Input matrix has full column rank.
    FullColumnRank,
    /// Internal-model state matrix is Hurwitz.
    InternalModelHurwitz,
    /// Internal-model pair (M, N) controllable.
    InternalModelControllability,
    /// Spectra of the internal model and the steady-state generator are disjoint.
    DisjointSpectra,
    /// Synchronization pattern (A_o, C_o) detectable.
    PatternDetectability,
    /// Reference-model filter matrix is Hurwitz.
    ReferenceHurwitz,
    /// Communication graph contains a spanning tree.
    SpanningTree,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Assumption::Controllability => "controllability assumption: (A, B) must be controllable",
            Assumption::LevelCondition => "level assumption: C·A^(j-1)·B must vanish for j = 1..l",
            Assumption::Detectability => "detectability assumption: (A, C) must be detectable",
            Assumption::FullColumnRank => "input matrix must have full column rank",
            Assumption::InternalModelHurwitz => "internal model matrix M must be Hurwitz",
            Assumption::InternalModelControllability => "internal model pair (M, N) must be controllable",
            Assumption::DisjointSpectra => "spectra of M and the steady-state generator must be disjoint",
            Assumption::PatternDetectability => "pattern pair (A_o, C_o) must be detectable",
            Assumption::ReferenceHurwitz => "reference-model matrix A_zeta must be Hurwitz",
            Assumption::SpanningTree => "communication graph must contain a spanning tree",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no unique solution: {0}")]
    NoUniqueSolution(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("{assumption} ({detail})")]
    AssumptionViolation { assumption: Assumption, detail: String },

    #[error("transmission zero: rank condition of the regulator equations fails at eigenvalue {re} + {im}i of A_o")]
    TransmissionZero { re: f64, im: f64 },

    #[error("synthesis failed: {0}")]
    SynthesisFailure(String),

    #[error("design rejected: gamma = {gamma} violates the small-gain bound gamma < 1/(N*gamma_zeta) = {bound}")]
    DesignRejection { gamma: f64, bound: f64 },

    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),

    #[error("simulation diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("no dominant frequency: {0}")]
    NoFrequency(String),
}

impl Error {
    pub(crate) fn violation(assumption: Assumption, detail: impl Into<String>) -> Self {
        Error::AssumptionViolation { assumption, detail: detail.into() }
    }
}
