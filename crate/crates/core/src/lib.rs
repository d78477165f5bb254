//! Multi-resolution thin-plate-spline bases and fixed-rank spatial covariance estimation.

pub mod basis;
pub mod covlab;
pub mod eigen;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod prediction;
pub mod linalg;
pub mod locations;
pub mod tps;

pub use basis::{BasisRecord, MrtsBasis, SpatialBasis};
pub use error::{Error, Result};
pub use estimation::{fit_ml, select_k, DataPanel, SreFit};
pub use locations::LocationSet;
pub use tps::TpsSystem;
