//! Topology-regularized generative modeling on synthetic blob images.

pub mod autodiff;
pub mod dataset;
pub mod eval;
pub mod models;
pub mod training;
pub mod topology;

pub use topology::{BinaryImage, GrayImage, LabelMap, ScoreConfig, TopologyError};
