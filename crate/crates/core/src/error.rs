use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DimerError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty system: atom count is zero")]
    EmptySystem,
    #[error("coordinate singularity: |z| = {0} reaches the pole")]
    PoleSingularity(f64),
    #[error("no self-trapping branch for lambda = {0} (< 1)")]
    NoSelfTrapping(f64),
    #[error("step size too large: {0}")]
    StepTooLarge(String),
    #[error("outside the perturbative regime: {0}")]
    OutOfRegime(String),
    #[error("no revival without interaction (U = 0)")]
    NoRevival,
    #[error("invalid jump: well {0} holds no atoms")]
    InvalidJump(u8),
    #[error("time samples are not uniformly spaced")]
    NonUniformSampling,
    #[error("density-matrix oracle limited to N <= 12, got N = {0}")]
    OracleTooLarge(usize),
    #[error("eigensolver failed to converge after {0} iterations")]
    NoConvergence(usize),
}

pub type Result<T> = std::result::Result<T, DimerError>;
