//! Encoder-decoder models for irregularly-sampled time series and other
//! incomplete data.

pub mod autodiff;
pub mod batch;
pub mod continuous;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod models;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
