use delaysync_core::Error as CoreError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;
pub const EXIT_ASSUMPTION: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    /// A valid mathematical outcome: no certificate exists.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Inconclusive(_) => EXIT_INCONCLUSIVE,
            CliError::Io(_) | CliError::Json(_) => EXIT_OTHER,
            CliError::Core(e) => match e {
                CoreError::Dimension(_) | CoreError::InvalidArgument(_) | CoreError::InvalidGraph(_) => EXIT_VALIDATION,
                CoreError::Assumption1Violated => EXIT_ASSUMPTION,
                CoreError::DelayFreeInfeasible { .. }
                | CoreError::EmptyRegion { .. }
                | CoreError::DesignInfeasible { .. }
                | CoreError::NoCouplingGain { .. } => EXIT_INFEASIBLE,
                CoreError::Inconclusive(_) => EXIT_INCONCLUSIVE,
                CoreError::EigenFailure | CoreError::Diverged { .. } => EXIT_OTHER,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;

    #[test]
    fn exit_codes_follow_the_contract() {
        let z = Complex::new(1.0, 0.0);
        assert_eq!(CliError::Validation("x".into()).exit_code(), 3);
        assert_eq!(CliError::Infeasible("x".into()).exit_code(), 2);
        assert_eq!(CliError::Inconclusive("x".into()).exit_code(), 4);
        assert_eq!(CliError::Core(CoreError::Inconclusive("x".into())).exit_code(), 4);
        assert_eq!(CliError::Core(CoreError::DesignInfeasible { sigma: z }).exit_code(), 2);
        assert_eq!(CliError::Core(CoreError::NoCouplingGain { eigenvalue: z }).exit_code(), 2);
        assert_eq!(CliError::Core(CoreError::EmptyRegion { cells: 1 }).exit_code(), 2);
        assert_eq!(CliError::Core(CoreError::Dimension("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(CoreError::Assumption1Violated).exit_code(), 5);
        assert_eq!(CliError::Core(CoreError::Diverged { t: 1.0 }).exit_code(), 1);
    }
}
