use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration failed at t = {last_time}: {reason}")]
    Integration { last_time: f64, reason: String },

    #[error("grid too coarse or too small: {0}")]
    Resolution(String),

    #[error("time step {dt} too large (kinetic phase per step {phase:.3} > pi/4); use dt <= {suggested}")]
    TimeStep { dt: f64, phase: f64, suggested: f64 },

    #[error("matrix is not Hermitian (defect {defect:.3e})")]
    NotHermitian { defect: f64 },

    #[error("symbol is not elliptic at (x, xi) = ({x}, {xi}): |p| = {value:.3e}")]
    NotElliptic { x: f64, xi: f64, value: f64 },

    #[error("ill-conditioned matrix (condition number {cond:.3e}); split the step")]
    IllConditioned { cond: f64 },

    #[error("branch tracking lost at t = {time}: argument jump {jump:.3} >= pi/2; refine time sampling")]
    Branch { time: f64, jump: f64 },

    #[error("spectral gap violated at x = {x:?}: |w| = {norm:.3e}")]
    Gap { x: Vec<f64>, norm: f64 },

    #[error("Landau-Zener rate undefined: tangential passage (|dw xi| = {0:.3e})")]
    Tangential(f64),

    #[error("spectral window [{lo}, {hi}] exceeds the reliable band (upper edge {band})")]
    SpectralBand { lo: f64, hi: f64, band: f64 },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
