//! Cascaded-CNN fingertip detection pipeline: a small trainable network
//! engine, a synthetic egocentric scene generator, the two-stage hand/finger
//! cascade, and the evaluation and benchmarking toolkit behind the
//! `fingercascade` CLI.

pub mod cascade;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
