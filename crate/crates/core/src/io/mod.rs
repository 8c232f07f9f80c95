//! Dataset input and benchmark output.

pub mod bench;
pub mod cube;
pub mod g2o;
pub mod metrics;
