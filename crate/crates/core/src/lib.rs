//! Stroke-level graph modeling of online handwritten math and an
//! edge-weighted graph attention network for joint symbol and relation
//! classification.

pub mod error;
pub mod evaluation;
pub mod graph_build;
pub mod ink_io;
pub mod label_graph;
pub mod model;
pub mod training;

pub use error::{Error, Result};
