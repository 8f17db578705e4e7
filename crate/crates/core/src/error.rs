use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },

    #[error("state contains a non-finite component")]
    NonFinite,

    #[error("singular point: {0}")]
    Singularity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("Hessian is singular at the current iterate")]
    SingularHessian,

    #[error("point is not an equilibrium (gradient norm {0:e})")]
    NotEquilibrium(f64),

    #[error("spectrum is not Hamiltonian-paired: {0}")]
    Unpaired(String),

    #[error("resonant center frequencies {0} and {1}")]
    Resonance(f64, f64),

    #[error("center block is not semisimple (eigenvector condition number {0:e})")]
    NonSemisimple(f64),

    #[error("equilibrium type mismatch: expected {expected}, found {found}")]
    WrongKind { expected: String, found: String },

    #[error("degenerate eigenvector pairing: {0}")]
    DegeneratePairing(String),

    #[error("normal form construction failed: {0}")]
    Construction(String),

    #[error("gain precondition violated: {0}")]
    Gain(String),

    #[error("integration step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("integration failed at t = {t}: {source}")]
    Integration {
        t: f64,
        last_state: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory needs at least 2 samples, got {0}")]
    TrajectoryTooShort(usize),
}
