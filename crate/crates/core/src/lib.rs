//! Copy&Refine graph-to-graph molecular optimization.

pub mod chemprop;
pub mod cli;
pub mod decoder;
pub mod encoder;
pub mod molgraph;
mod parallel;
pub mod pipeline;
pub mod scaffold;
pub mod tensor;
pub mod training;
