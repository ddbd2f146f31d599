//! Numerical checks for conformal deformations of flat tori with scalar
//! curvature bounded below by `-1/j`.

pub mod background;
pub mod cli;
pub mod conformal;
pub mod distances;
pub mod error;
pub mod estimates;
pub mod fit;
pub mod grid;
pub mod io;
pub mod mask;
pub mod report;
pub mod sequences;

pub use background::MetricField;
pub use conformal::ConformalMetric;
pub use error::{Error, Result};
pub use estimates::HypothesisBudget;
pub use grid::{Accuracy, FlatMetric, GridSpec, ScalarField};
pub use mask::RegionMask;
pub use report::{CheckReport, Status};
