//! Egocentric pedestrian trajectory prediction with selective state-space
//! (Mamba) encoders and an ego-motion-guided decoder.

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod model;
pub mod representation;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
