pub mod config;
pub mod dataset;
pub mod error;
pub mod fisher;
pub mod imaging;
pub mod lr;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod router;
pub mod vit;
pub mod transformer;

pub use error::{Error, Result};
