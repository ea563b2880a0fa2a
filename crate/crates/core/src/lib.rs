//! Multi-step referential game between a memory-less sender and a recurrent
//! receiver that decides when to stop talking.

pub mod agents;
pub mod analysis;
pub mod dataset;
pub mod fixtures;
pub mod game;
pub mod model;
pub mod nn;
pub mod training;

pub use model::{Model, CODE_VERSION};
