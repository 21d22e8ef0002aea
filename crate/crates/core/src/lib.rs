pub mod cli;
pub mod env;
pub mod error;
pub mod graph;
pub mod policy;
pub mod repr;
pub mod seed;
pub mod submodular;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
