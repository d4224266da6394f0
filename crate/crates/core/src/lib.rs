pub mod augment;
pub mod datasetio;
pub mod error;
pub mod evalsuite;
pub mod expert;
pub mod image;
pub mod models;
pub mod nn;
pub mod seed;
pub mod simworld;
pub mod trainer;

pub use error::{Error, Result};
