use std::io;

use thiserror::Error;

/// Errors produced anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum DgnnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("singular affine map for element {element} (det = {det:e})")]
    SingularMap { element: usize, det: f64 },

    #[error("non-manifold edge ({0}, {1}) touches more than two triangles")]
    NonManifold(usize, usize),

    #[error("unsupported quadrature rule: {0}")]
    UnsupportedRule(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("point ({x}, {y}) is not inside any element")]
    Locate { x: f64, y: f64 },

    #[error("singular linear system (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("insufficient quadrature: rule exact to degree {have}, need {need}")]
    InsufficientQuadrature { have: usize, need: usize },

    #[error("non-finite value at iteration {iteration} (max element loss on element {element})")]
    NonFinite { iteration: usize, element: usize },

    #[error("newton/bisection failed for burgers reference at x = {x}, t = {t}")]
    ReferenceSolve { x: f64, t: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DgnnError>;

impl DgnnError {
    /// Process exit code: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            DgnnError::Io(_) | DgnnError::Json(_) => 4,
            DgnnError::NonFinite { .. }
            | DgnnError::SingularSystem { .. }
            | DgnnError::ReferenceSolve { .. }
            | DgnnError::SingularMap { .. }
            | DgnnError::Locate { .. } => 3,
            _ => 2,
        }
    }
}
