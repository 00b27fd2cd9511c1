use thiserror::Error;

/// Errors raised by the library.
///
/// Variants map onto two classes: domain errors (the input violates a
/// mathematical precondition, e.g. a non-closed measure or a non-convex curve)
/// and internal failures (a numerical routine did not reach its tolerance).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A measure that must be nonzero has no mass.
    #[error("measure has zero total mass")]
    ZeroMeasure,

    /// A mass or density value is negative or not finite.
    #[error("invalid mass {0}: masses must be finite and nonnegative")]
    InvalidMass(f64),

    /// A scalar argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Grid resolution below the supported minimum.
    #[error("grid resolution {got} is below the minimum {min}")]
    GridTooCoarse { got: usize, min: usize },

    /// The first moment of a measure does not vanish.
    #[error("not closed: first moment has norm {residual:e}")]
    NotClosed { residual: f64 },

    /// A sampled curve or polygon is not convex and positively oriented.
    #[error("not convex: {0}")]
    NotConvex(String),

    /// A loop or measure has fewer than two distinct directions.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The input measures are not weakly admissible.
    #[error("measures are not weakly admissible")]
    NotAdmissible,

    /// Every shift plan has infinite cost.
    #[error("no admissible shift: every quantile shift has infinite cost")]
    NoAdmissibleShift,

    /// A density vanishes on a cell, so its CDF cannot be inverted.
    #[error("non-invertible CDF: density {value:e} in cell {cell} is below the floor {floor:e}")]
    NonInvertibleCdf { cell: usize, value: f64, floor: f64 },

    /// The optimal reparametrization does not exist at sample scale.
    #[error("optimal reparametrization does not exist at sample scale (wfr value {wfr_value})")]
    NoOptimalReparametrization { wfr_value: f64 },

    /// The transport problem has a row or column without finite-cost cells.
    #[error("infeasible transport problem: {0}")]
    Infeasible(String),

    /// An iterative solver stopped before reaching its tolerance.
    #[error("solver did not converge: best value {best_value}, certificate gap {gap:e}")]
    NonConvergence { best_value: f64, gap: f64 },

    /// A linear-algebra step lost rank.
    #[error("numerical rank failure: {0}")]
    RankFailure(String),

    /// A constraint residual exceeds its tolerance.
    #[error("constraint residual {residual:e} exceeds tolerance {tol:e}: {what}")]
    Residual { what: String, residual: f64, tol: f64 },

    /// Serialization or parse failure.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Stable machine-readable kind, used in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroMeasure => "zero_measure",
            Error::InvalidMass(_) => "invalid_mass",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::GridTooCoarse { .. } => "grid_too_coarse",
            Error::NotClosed { .. } => "not_closed",
            Error::NotConvex(_) => "not_convex",
            Error::Degenerate(_) => "degenerate",
            Error::NotAdmissible => "not_admissible",
            Error::NoAdmissibleShift => "no_admissible_shift",
            Error::NonInvertibleCdf { .. } => "non_invertible_cdf",
            Error::NoOptimalReparametrization { .. } => "no_optimal_reparametrization",
            Error::Infeasible(_) => "infeasible",
            Error::NonConvergence { .. } => "non_convergence",
            Error::RankFailure(_) => "rank_failure",
            Error::Residual { .. } => "residual",
            Error::Format(_) => "format",
        }
    }

    /// Domain errors are caused by the input, everything else by the solver.
    pub fn is_domain(&self) -> bool {
        !matches!(
            self,
            Error::NonConvergence { .. } | Error::RankFailure(_) | Error::Residual { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
