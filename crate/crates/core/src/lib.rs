//! Tactile texture recognition for a legged robot foot.
//!
//! The crate simulates a 10×10 pressure-sensing foot pressed onto textured
//! plates, trains a small convolutional network to tell the textures apart,
//! selects gaits from the recognized surface, and carries frames between a
//! sensor node and an inference host over a fixed-size binary protocol.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod gait;
pub mod nn;
pub mod report;
pub mod seed;
pub mod sensor;
pub mod textures;
pub mod wire;

pub use error::{Error, Result};
