//! Gridless wideband direction-of-arrival estimation by multi-frequency
//! atomic norm minimization.

pub mod certificate;
pub mod error;
pub mod evaluation;
pub mod extract;
pub mod linalg;
pub mod model;
pub mod sdp;
pub mod solver;

pub use error::{Error, Result};
