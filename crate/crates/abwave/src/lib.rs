//! Numerical laboratory for wave propagation in slowly moving media on
//! multiply connected planar domains.
//!
//! The crate builds staircase-masked finite difference grids with circular or
//! rectangular obstacles, integrates second order wave equations whose first
//! order terms encode the medium flow, extracts the hyperbolic
//! Dirichlet-to-Neumann (DN) operator on the outer boundary, and compares DN
//! operators across media that differ by a time-shift gauge transformation or
//! by an interior space-time diffeomorphism.  A geometric optics layer builds
//! characteristic (Goursat) coordinates near the boundary, traces rays around
//! obstacles and evaluates interferometric phase differences driven by the
//! circulation of the flow.
//!
//! Modules mirror the pipeline: [`geometry`] and [`field`] hold grids, paths
//! and sampled fields; [`media`] builds metric coefficient tables from a
//! refraction index and a flow; [`gauge`] implements the equivalence-class
//! machinery; [`solver`] integrates the wave equations; [`dnmap`] assembles
//! and compares DN matrices; [`goursat`] builds characteristic charts and
//! rays; [`experiments`] packages the falsifiable comparisons; [`io`] writes
//! artifacts.

pub mod analytic;
pub mod dnmap;
pub mod error;
pub mod experiments;
pub mod field;
pub mod gauge;
pub mod geometry;
pub mod goursat;
pub mod io;
pub mod media;
pub mod solver;
pub mod util;

pub use error::{Error, Result};
