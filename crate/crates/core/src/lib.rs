pub mod assembly;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod femspace;
pub mod linsolve;
pub mod mesh;
pub mod quadrature;
pub mod scheme;
pub mod sparse;
pub mod truth;

pub use error::{Error, Result};
