//! flatform: decides whether a bilinear form g + omega on a coordinate box
//! admits local flat coordinates, and for the constructive cases builds a
//! flat chart numerically and certifies it by pullback.
//!
//! The pipeline is symbolic-numeric: form entries are exact expression trees
//! (symbolic differentiation, double-precision evaluation); rank profiles,
//! connection solves, curvature and chart constructions are dense numerical
//! linear algebra on sample grids.

pub mod analyze;
pub mod chart;
pub mod chartmap;
pub mod config;
pub mod connection;
pub mod constructor;
pub mod curvature;
pub mod error;
pub mod expr;
pub mod forms;
pub mod gen;
pub mod interp;
pub mod kernelrank;
pub mod linalg;
pub mod ode;
pub mod problem;
pub mod report;
pub mod skewpart;

pub use chart::{Chart, Grid, Point};
pub use config::Config;
pub use error::{Error, Result};
pub use expr::Expr;
pub use forms::{BilinearFormField, ExprMatrix, VectorField};

/// Crate version echoed in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
