pub mod cli;
pub mod conditioning;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod gradsuite;
pub mod nn;
pub mod pipeline;
pub mod schedule;

pub use error::{Error, Result};
