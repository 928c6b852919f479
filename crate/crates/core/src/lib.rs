pub mod anonymize;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod pipeline;
pub mod plan;

pub use error::{Error, Result};
