pub mod checkpoint;
pub mod data;
pub mod error;
pub mod ensemble;
pub mod eval;
pub mod model;
pub mod nn;
pub mod par;
pub mod training;

pub use error::{Error, Result};
