//! Complex-valued DCCRN speech dereverberation with interchangeable
//! time-frequency attention mechanisms.

pub mod attention;
pub mod ctensor;
pub mod datasynth;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nnlayers;
pub mod signal;

pub use error::{Error, Result};
