pub mod cell_solver;
pub mod error;
pub mod grid;
pub mod isoperimetric;
pub mod metric;
pub mod planelike;
pub mod stable_norm;

pub use error::{Error, Result};
