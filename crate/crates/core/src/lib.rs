pub mod bnb;
pub mod cli;
pub mod conic;
pub mod dataset;
pub mod error;
mod linalg;
pub mod loss;
pub mod relax;
pub mod screen;

pub use error::{Error, Result};
