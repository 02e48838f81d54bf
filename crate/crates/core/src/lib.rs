//! Peak-aware multi-horizon quantile forecasting.
//!
//! Historical peak events are masked out of the convolutional encoder by
//! forward fill, and a separate attention module over past peaks produces an
//! additive correction at future peak horizons.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
