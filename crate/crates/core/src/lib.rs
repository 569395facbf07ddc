//! Broad ensemble learning for drifting data streams.
//!
//! A random broad feature space feeds a dynamic ensemble of ridge-regression
//! output layers; inactive layers are parked in a pool and recalled when they
//! fit the current concept again.

pub mod ensemble;
pub mod error;
pub mod feature_space;
pub mod linalg;
pub mod output_layer;
pub mod prequential;
pub mod snapshot;
pub mod stream;

pub use ensemble::{BelsConfig, BelsModel, ChunkResult, Variant};
pub use error::{BelsError, Result};
pub use linalg::Matrix;
pub use prequential::{evaluate, Evaluator, Learner, PrequentialRecord, PrequentialSeries};
pub use snapshot::Snapshot;
pub use stream::{Chunk, Sample, StreamConfig, StreamSource};
