//! Traffic forecasting with interleaved temporal attention and selective
//! state-space propagation over sensors.

pub mod bench;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod params;
pub mod train;
pub mod tst;

pub use error::{FastError, Result};
pub use model::{BlockVariant, FastModel, ModelConfig};
