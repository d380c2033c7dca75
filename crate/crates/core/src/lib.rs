pub mod data;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod io;
pub mod selection;
pub mod simulator;

pub use data::Dataset;
pub use error::{Error, Result};
pub use estimators::{AcdEstimate, EstimationOptions, Method, OmSpec};
