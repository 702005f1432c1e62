//! Monocular 3D pose label generation.
//!
//! A left-view 2D pose is turned into a virtual stereo pair by a learned view
//! synthesis network, lifted to a coarse root-relative 3D pose by a second
//! network, and then placed at the absolute depth whose back-projection of the
//! 2D input best agrees with the coarse estimate. The crate also carries the
//! synthetic data generator, training engine, metrics, the labeling pipeline
//! and a small action classifier built on top of the 3D output.

pub mod action;
pub mod config;
pub mod error;
pub mod geometry;
pub mod geosearch;
pub mod jsonfmt;
pub mod lifting;
pub mod metrics;
pub mod neuralnet;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod skeleton;
pub mod synthgen;

pub use error::{Error, Result};
