//! Timing model, simulator, codecs and a TCP parameter-server harness for
//! studying compressed-domain aggregation in data-parallel training.

pub mod bench;
pub mod cli;
pub mod codec;
pub mod cost_model;
pub mod exec;
pub mod net_harness;
pub mod report;
pub mod simulator;

pub use codec::{CodecError, CodecKind, EncodedBlob, ParamBlob, QuantizedBlob};
pub use cost_model::{ClusterConfig, CodecProfile, ConfigError, PhaseBreakdown, Strategy};
pub use exec::Exec;
