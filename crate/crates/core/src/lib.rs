pub mod acceptance;
pub mod error;
pub mod experiments;
pub mod haar;
pub mod mps;
pub mod statmech;
pub mod tensor;
pub mod weingarten;

pub use error::{LabError, Result};
