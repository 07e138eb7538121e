//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures reported by the numerical modules and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// A kernel was evaluated at an offset congruent to zero modulo the lattice.
    #[error("kernel evaluated at a singular offset {0:?}")]
    SingularOffset(Vec<f64>),

    /// Two fields (or a field and a grid) disagree in shape.
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    /// A density that must be positive was not.
    #[error("nonpositive density {value} at node {node}")]
    NonPositiveDensity { node: usize, value: f64 },

    /// The requested time step exceeds the admissible explicit step.
    #[error("time step {dt:e} violates the stability bound; admissible dt = {admissible:e}")]
    Cfl { dt: f64, admissible: f64 },

    /// A run crossed the configured density floor.
    #[error("density {min:e} fell below the floor {floor:e} at t = {t}")]
    DensityFloor { t: f64, min: f64, floor: f64 },

    /// The comparison solution failed the smoothness proxy.
    #[error("reference rejected at t = {t}: spectral tail ratio {ratio:e} exceeds {limit:e}")]
    ReferenceRejected { t: f64, ratio: f64, limit: f64 },

    /// The calibration ratio did not settle under grid refinement.
    #[error("calibration failed: c(N={n}) = {coarse}, c(N={}) = {fine}", 2 * n)]
    Calibration { n: usize, coarse: f64, fine: f64 },

    /// An ensemble member aborted.
    #[error("ensemble member with epsilon = {epsilon:e} aborted: {source}")]
    MemberAborted {
        epsilon: f64,
        #[source]
        source: Box<Error>,
    },

    /// A requested snapshot time does not exist.
    #[error("unknown snapshot index {0}")]
    UnknownSnapshot(usize),

    /// Sampling range for a certificate is empty.
    #[error("empty sampling range: {0}")]
    EmptyRange(String),

    /// The lower density bound needed by a measure-level check is not positive.
    #[error("density lower bound c_rho = {0} is not positive")]
    NonPositiveSupport(f64),

    /// Malformed snapshot or store file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
