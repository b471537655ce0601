//! Bi-axial attention transformer for classifying sparse, irregularly
//! sampled multivariate time series.
//!
//! Each observation cell `(t, d)` is embedded from its value, its
//! missingness bit, a learned sensor-identity row and a continuous-time
//! sinusoidal encoding. Two attention tracks then alternate attention along
//! the time and sensor axes in opposite orders, sharing one encoder stack per
//! track, before pooling, demographic fusion and a small classification head.

pub mod error;
pub mod data;
pub mod embedding;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{BatError, Result};
