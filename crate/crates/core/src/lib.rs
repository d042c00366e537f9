//! Forecasting and clustering of loosely decoupled time series.
//!
//! Per-entity LSTMs are seeded from static features, their hidden states
//! are used as embeddings, entities are clustered on those embeddings, and
//! cluster-mates that are further along a similar trajectory augment the
//! forecast of a lagging entity.

pub mod data;
pub mod embedding;
pub mod error;
pub mod ldt;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
