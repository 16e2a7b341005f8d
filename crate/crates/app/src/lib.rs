//! Pipeline orchestration: dataset assembly, the inference pipeline, the
//! HTTP service and the command-line driver.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod pipeline;
pub mod service;

pub use error::{Error, Result};
