use thiserror::Error;

/// Error type shared across the simulator.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid mesh request: {0}")]
    InvalidMesh(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("element inversion: J = {j} <= 0")]
    ElementInversion { j: f64 },

    #[error("cell density {c} outside admissible range [0, {max})")]
    DensityOutOfRange { c: f64, max: f64 },

    #[error("local active-stress Newton did not converge after {iters} iterations (|R| = {residual:.3e})")]
    LocalNewtonDiverged { iters: usize, residual: f64 },

    #[error("singular denominator in Sherman-Morrison inverse")]
    ShermanMorrisonSingular,

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("Newton iteration did not converge after {iters} iterations (|R| = {residual:.3e})")]
    NewtonDiverged { iters: usize, residual: f64 },

    #[error("time step underflow at t = {t}: dt_min = {dt_min} persistently rejected")]
    TimeStepUnderflow { t: f64, dt_min: f64 },

    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("config validation error: {0}")]
    ConfigValidation(String),

    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}
