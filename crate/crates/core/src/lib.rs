//! Graph test-time adaptation by re-weighting propagation hops.

pub mod adapt;
pub mod config;
pub mod csbm;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod model;
pub mod pretrain;
pub mod theory;
pub mod tta;
pub mod util;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use graph::{Graph, Normalization, PropagationOperator};
pub use model::{GprModel, HopCache, ModelDims, SoftPrediction};
