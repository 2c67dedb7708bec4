use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TssError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid rung grid: {0}")]
    Grid(String),

    #[error("rung {rung} is covered {count} times (every rung must lie in exactly two windows)")]
    Coverage { rung: usize, count: usize },

    #[error("window overlap graph is disconnected")]
    Irreducibility,

    #[error("window {0} is empty")]
    EmptyWindow(usize),

    #[error("all rung weights vanish in window {window} at the current state")]
    DegenerateDistribution { window: usize },

    #[error("rung density is degenerate (all metric determinants are zero and eps_gamma = 0)")]
    DegenerateDensity,

    #[error("no window has been visited")]
    NoVisitedWindows,

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("insufficient window coverage under epoch deletion: {pairs:?} (window, epoch)")]
    InsufficientCoverage { pairs: Vec<(usize, u32)> },

    #[error("sample overlap graph is disconnected")]
    DisconnectedOverlap,

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TssError {
    fn from(e: std::io::Error) -> Self {
        TssError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TssError>;
