pub mod cli;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod models;
pub mod report;
pub mod seed;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
