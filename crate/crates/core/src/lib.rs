//! Body-part segmentation of sparse radar point-cloud sequences.
//!
//! The pipeline: per-point MLPs with max-pooled global signatures, an LSTM
//! carrying state across frames, fine (6 part) and coarse (3 group) heads,
//! and a graph-connectivity loss built on Gaussian point similarities. All
//! trainable math runs on the small reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod error;
pub mod graph_loss;
pub mod lstm;
pub mod pointcloud;
pub mod segnet;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
