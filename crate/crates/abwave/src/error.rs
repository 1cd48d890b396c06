//! Crate wide error type.  Variants map one-to-one onto the failure modes of
//! the geometric, algebraic and numerical layers.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Obstacles collide with each other or touch the outer boundary.
    #[error("obstacle overlap: {0}")]
    Overlap(String),

    /// An obstacle spans too few grid cells to be resolved.
    #[error("obstacle under-resolved: {0}")]
    Resolution(String),

    /// A path that must be closed is not.
    #[error("path is not closed (gap {gap:.3e})")]
    OpenPath { gap: f64 },

    /// A sampled evaluation landed inside an obstacle or outside the domain.
    #[error("field evaluation outside the fluid region at ({x:.6}, {y:.6})")]
    Interpolation { x: f64, y: f64 },

    /// Flow speed reaches or exceeds the light speed.
    #[error("flow speed {speed:.6} >= c = {c:.6}")]
    Superluminal { speed: f64, c: f64 },

    /// Metric does not have Lorentzian signature (+,-,...,-).
    #[error("metric signature broken at node {node:?}: eigenvalues {eigs:?}")]
    Signature { node: (usize, usize), eigs: Vec<f64> },

    /// The operator would lose hyperbolicity (|v|^2 too close to n^2).
    #[error("hyperbolicity margin violated: max |v|^2/n^2 = {ratio:.6} > {limit:.6}")]
    Hyperbolicity { ratio: f64, limit: f64 },

    /// A vector field that should be curl-free is not.
    #[error("nonzero curl: max |curl| = {max_curl:.3e} exceeds tol {tol:.3e}")]
    Curl { max_curl: f64, tol: f64 },

    /// A loop integral that should vanish does not; the two fields sit in
    /// different equivalence classes.
    #[error("nonzero holonomy around obstacle {obstacle}: loop integral {value:.6e}")]
    Holonomy { obstacle: usize, value: f64 },

    /// A reconstructed potential fails to be constant on the outer boundary.
    #[error("potential not constant on the outer boundary: spread {spread:.3e}")]
    Boundary { spread: f64 },

    /// The time step is too large for the medium; the solution blew up.
    #[error("CFL violation: max |u| = {max_u:.3e} after step {step}")]
    CflViolation { max_u: f64, step: usize },

    /// Grid/medium/coefficient shapes disagree.
    #[error("mask mismatch: {0}")]
    Mask(String),

    /// A coordinate map is not orientation preserving where required.
    #[error("jacobian not positive at ({x:.6}, {y:.6}): det = {det:.3e}")]
    Jacobian { x: f64, y: f64, det: f64 },

    /// The simulation record lacks the interior layers needed for a trace.
    #[error("missing boundary layers: {0}")]
    MissingLayers(String),

    /// DN matrices with different bases or samplings cannot be compared.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A time record ends while boundary responses still carry energy.
    #[error("spectral leakage: tail holds fraction {fraction:.3e} of response energy")]
    Leakage { fraction: f64 },

    /// Characteristics crossed before reaching the requested collar depth.
    #[error("caustic inside collar: characteristics cross near x_n = {depth:.4}")]
    Caustic { depth: f64 },

    /// A chart lacks a field required by the requested operation.
    #[error("chart error: {0}")]
    Chart(String),

    /// Newton inversion of a coordinate map failed to converge.
    #[error("map not invertible near ({x:.6}, {y:.6})")]
    NonInvertible { x: f64, y: f64 },

    /// A transported point left the chart before reaching the requested depth.
    #[error("flow left the chart at y_n = {depth:.4}, y' = {y1:.4}")]
    Escape { depth: f64, y1: f64 },

    /// A ray entered an obstacle; reflected rays are not traced.
    #[error("ray hit obstacle {obstacle} at ({x:.6}, {y:.6}); reflected rays are not traced")]
    ObstacleHit { obstacle: usize, x: f64, y: f64 },

    /// Ray shooting failed to connect source and receiver.
    #[error("ray endpoint misses target by {miss:.3e} (allowed {allowed:.3e})")]
    RayMismatch { miss: f64, allowed: f64 },

    /// An experiment input is degenerate (e.g. identically zero flow).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Configuration rejected before any compute.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
