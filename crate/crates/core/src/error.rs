use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid qubit count {n}: must be in 1..={max}")]
    QubitCount { n: usize, max: usize },

    #[error("invalid total spin 2j = {two_j} for N = {n}")]
    InvalidSpin { n: usize, two_j: u32 },

    #[error("invalid magnetic number 2m = {two_m} in sector 2j = {two_j}")]
    InvalidProjection { two_j: u32, two_m: i32 },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("Dicke excitation {n} exceeds qubit count {n_qubits}")]
    ExcitationOutOfRange { n: usize, n_qubits: usize },

    #[error("Fock truncation guard: population {population:.3e} in top two levels at t = {time}")]
    TruncationGuard { time: f64, population: f64 },

    #[error("step size underflow at t = {time} (h = {step:.3e})")]
    StepUnderflow { time: f64, step: f64 },

    #[error("non-finite state encountered at t = {time}")]
    NonFinite { time: f64 },

    #[error("matrix is not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("block structure mismatch: {0}")]
    Shape(String),

    #[error("fit input: {0}")]
    FitInput(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Configuration problems are detected before any numerics run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::QubitCount { .. }
                | Error::InvalidSpin { .. }
                | Error::InvalidProjection { .. }
                | Error::InvalidParams(_)
                | Error::ExcitationOutOfRange { .. }
                | Error::Config(_)
                | Error::FitInput(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
