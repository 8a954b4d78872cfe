use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum SrgError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mode count {modes} exceeds the mode budget {budget}")]
    ModeBudget { modes: usize, budget: usize },

    #[error("dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("T does not commute with the cutoff: commutator norm {commutator:.3e} exceeds {bound:.3e}")]
    NotChiCommuting { commutator: f64, bound: f64 },

    #[error("pair condition violated: {0}")]
    PairCondition(String),

    #[error("pair condition violated numerically: condition number {0:.3e} exceeds 1e12")]
    IllConditioned(f64),

    #[error("eigenvalue collision: separation {separation:.3e} below {threshold:.3e}")]
    EigenvalueCollision { separation: f64, threshold: f64 },

    #[error("cannot separate w00 from w11: extraction needs at least 2 angular nodes, got {0}")]
    TooFewAngularNodes(usize),

    #[error("insufficient shells: {0}")]
    InsufficientShells(String),

    #[error("r grid does not cover the H_f eigenvalue {0}")]
    RGridCoverage(f64),

    #[error("kernel order {0} exceeds the cap of 2")]
    KernelOrder(usize),

    #[error("no admissible g found: even g = {0:e} fails the polydisc check")]
    NoAdmissibleG(f64),

    #[error("ledger refused: {0}")]
    Ledger(String),

    #[error("atomic resolvent singular at t = {0}")]
    SingularResolvent(f64),

    #[error("level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<SrgError>,
    },
}

impl SrgError {
    /// Attach the RG level at which an error surfaced.
    pub fn at_level(self, level: usize) -> Self {
        match self {
            e @ SrgError::AtLevel { .. } => e,
            e => SrgError::AtLevel {
                level,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by a bad configuration rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        match self {
            SrgError::InvalidParameter(_)
            | SrgError::ModeBudget { .. }
            | SrgError::DimensionCap { .. }
            | SrgError::InsufficientShells(_)
            | SrgError::TooFewAngularNodes(_)
            | SrgError::KernelOrder(_) => true,
            SrgError::AtLevel { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, SrgError>;
