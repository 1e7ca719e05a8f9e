use crate::teich::Modulus;
use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to act on
/// (retry, shrink a step, reject input) without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("not an immersion: min singular value {min_singular_value:.3e} at sample ({j}, {k})")]
    NotImmersion {
        min_singular_value: f64,
        j: usize,
        k: usize,
    },

    #[error("modulus {re} + {im}i is not in the upper half plane")]
    NotInUpperHalfPlane { re: f64, im: f64 },

    #[error("metric is ill conditioned: condition number {max_condition:.3e} exceeds cap {cap:.3e}")]
    IllConditionedMetric { max_condition: f64, cap: f64 },

    #[error("formal jet residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    JetResidual { residual: f64, tol: f64 },

    #[error("harmonic form solve failed: {0}")]
    ModulusSolveFailed(String),

    #[error("defect decomposition has negative coefficient rho_{direction} = {value:.3e}")]
    NegativeCoefficient { direction: usize, value: f64 },

    #[error("corrugation amplitude out of domain: speed ratio {ratio:.6} not in (0, 1]")]
    AmplitudeDomain { ratio: f64 },

    #[error("stage budget exhausted: defect {defect:.3e} > eps {eps:.3e} after {stages} stages")]
    StageBudgetExceeded {
        stages: usize,
        defect: f64,
        eps: f64,
    },

    #[error("shortness lost at stage {stage}: increment has eigenvalue {min_eig:.3e}")]
    ShortnessLost { stage: usize, min_eig: f64 },

    #[error("C0 displacement budget exceeded: spent {spent:.3e} of {budget:.3e}")]
    C0BudgetExceeded { spent: f64, budget: f64 },

    #[error("winding gap too small: min |psi(p) - tau0| = {min_gap:.3e} on the contour")]
    GapTooSmall { min_gap: f64 },

    #[error("brouwer hypothesis violated: chart_distance(psi(p), p) = {distance:.3e} > r = {radius:.3e}")]
    HypothesisViolated { distance: f64, radius: f64 },

    #[error("no sub-region carries a nonzero winding certificate")]
    NoCertificate,

    #[error("psi evaluation budget of {budget} exhausted")]
    MaxEvaluations { budget: usize },

    #[error("component jump suspected between t = {t_lo} and t = {t_hi}: step floor reached")]
    ComponentJumpSuspected {
        t_lo: f64,
        t_hi: f64,
        partial: Vec<(f64, Modulus)>,
    },

    #[error("self-linking methods disagree: writhe+twist gives {white}, crossing count gives {crossings}")]
    MethodDisagreement { white: i64, crossings: i64 },

    #[error("quadratic relation violated: q(1,0)={q10}, q(0,1)={q01}, q(1,1)={q11}")]
    QuadraticRelationViolated { q10: u8, q01: u8, q11: u8 },

    #[error("invalid Euler characteristic {chi}: need an even chi with -60 <= chi <= 2")]
    InvalidEuler { chi: i64 },

    #[error("config error: {0}")]
    ConfigError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable process exit code for the CLI.
    /// 2 config, 3 geometry precondition, 4 solver failure, 5 certificate failure.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            ConfigError(_) | InvalidEuler { .. } => 2,
            InvalidMap(_)
            | ShapeError(_)
            | NotImmersion { .. }
            | NotInUpperHalfPlane { .. }
            | JetResidual { .. } => 3,
            IllConditionedMetric { .. }
            | ModulusSolveFailed(_)
            | NegativeCoefficient { .. }
            | AmplitudeDomain { .. }
            | StageBudgetExceeded { .. }
            | ShortnessLost { .. }
            | C0BudgetExceeded { .. }
            | MaxEvaluations { .. }
            | ComponentJumpSuspected { .. } => 4,
            GapTooSmall { .. }
            | HypothesisViolated { .. }
            | NoCertificate
            | MethodDisagreement { .. }
            | QuadraticRelationViolated { .. } => 5,
            Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
