use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("initial vector has total mass {0}, expected 1")]
    InitMass(f64),

    #[error("subgenerator eigenvalue {re:e}{im:+e}i does not have a negative real part")]
    UnstableGenerator { re: f64, im: f64 },

    #[error("distribution mean {0} is not positive and finite")]
    NonPositiveMean(f64),

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("spectral radius {0} of the transfer matrix is not below one")]
    SpectralRadius(f64),

    /// The adversary mines at least one block per honest interval on average,
    /// so every attack eventually succeeds.
    #[error("unstable regime: E[Phi] = {mean_phi} >= 1, the attack always succeeds")]
    Unstable { mean_phi: f64 },

    #[error("probability p_Phi(0) is zero")]
    ZeroAtom,

    #[error("calibration did not converge after {} iterations (last rate {:?})", .trace.len(), .trace.last())]
    Calibration { trace: Vec<(f64, f64)> },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
