pub mod certify;
pub mod cli;
pub mod error;
pub mod family;
pub mod fixtures;
pub mod linalg;
pub mod output;
pub mod perturbation;
pub mod reduced;
pub mod schrodinger;

pub use error::{Error, Result};
