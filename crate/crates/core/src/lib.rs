pub mod cli;
pub mod conditional;
pub mod distributions;
pub mod error;
pub mod hashing;
pub mod limits;
pub mod quadrature;
pub mod seeding;
pub mod stats;

pub use error::{Error, Result};
