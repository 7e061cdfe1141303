//! Ranks social-media influencers by predicted engagement.
//!
//! The pipeline: posts and profiles become per-window heterogeneous graphs
//! (`hetnet`), node behavior becomes fixed-width feature rows (`featurizer`),
//! a graph-convolutional recurrent attention model scores each influencer
//! (`model`, trained by `trainer` with a listwise loss), and graded ranking
//! metrics judge the result (`metrics`). `synthgen` builds synthetic worlds
//! with planted dynamics so the whole loop can be verified end to end, and
//! `cli` wires the commands together. All numerics live in `numkit`.

pub mod cli;
pub mod config;
pub mod error;
pub mod featurizer;
pub mod hetnet;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
