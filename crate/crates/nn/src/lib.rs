//! Torus-aware networks, their losses and the ranking WGAN training loop.

pub mod error;
pub mod kernels;
pub mod landmark;
pub mod losses;
pub mod nets;
pub mod params;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use nets::{Critic, Encoder, Generator, GridGeometry, NetConfig};
pub use tape::{Tape, Var};
pub use train::{ModelBundle, TrainConfig, TrainData};
