use gammastab::Error;

/// Failure of a command together with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),

    #[error("{0}")]
    Core(#[from] Error),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{0} acceptance row(s) failed")]
    Acceptance(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    /// 0 success, 1 input, 2 assumption, 3 synthesis, 4 small gain, 5 acceptance.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                Error::InvalidInput(_) | Error::DimensionMismatch(_) => 1,
                Error::AssumptionViolation { .. } | Error::TransmissionZero { .. } => 2,
                Error::DesignRejection { .. } => 4,
                Error::NoUniqueSolution(_)
                | Error::NumericalFailure(_)
                | Error::Infeasible(_)
                | Error::SynthesisFailure(_)
                | Error::Inconsistent(_)
                | Error::Divergence { .. }
                | Error::NoFrequency(_) => 3,
            },
            CliError::Verification(_) => 3,
            CliError::Acceptance(_) => 5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gammastab::Assumption;

    #[test]
    fn exit_code_contract() {
        assert_eq!(CliError::input("x").exit_code(), 1);
        assert_eq!(CliError::from(Error::DimensionMismatch("x".into())).exit_code(), 1);
        let violation = Error::AssumptionViolation { assumption: Assumption::Controllability, detail: String::new() };
        assert_eq!(CliError::from(violation).exit_code(), 2);
        assert_eq!(CliError::from(Error::TransmissionZero { re: 0.0, im: 0.5 }).exit_code(), 2);
        assert_eq!(CliError::from(Error::SynthesisFailure("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::DesignRejection { gamma: 2.0, bound: 1.8 }).exit_code(), 4);
        assert_eq!(CliError::Acceptance(1).exit_code(), 5);
    }
}
