pub mod align;
pub mod bench;
pub mod audio;
pub mod cepstrum;
pub mod commands;
pub mod detect;
pub mod emd;
pub mod features;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod spectral;
pub mod stats;
pub mod synth;

mod error;

pub use error::{Error, Result};
