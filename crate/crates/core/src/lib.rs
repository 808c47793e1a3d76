//! Deployment toolchain for small ConvNets on satellite-class microcontrollers
//! with an integer NPU.
//!
//! The pipeline prunes whole filters by L2 norm, lowers the model to INT8 with
//! post-training static quantization, maps the integer graph onto CPU and NPU,
//! plans activation memory, estimates latency and energy, and simulates the
//! downlink savings of confidence-filtered onboard inference.

pub mod cost;
pub mod downlink;
pub mod error;
pub mod exec;
pub mod graph;
pub mod mapper;
pub mod pipeline;
pub mod prune;
pub mod quant;

pub use error::{Error, Result};
