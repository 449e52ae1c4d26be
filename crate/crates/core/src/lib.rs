//! Spherical-kernel graph convolution on 3D point clouds.
//!
//! The crate is organised bottom-up: [`geometry`] bins neighbor offsets into
//! the spherical kernel, [`graph`] builds capped neighborhoods and coarsening
//! pyramids, [`ops`] holds the differentiable layer operations, [`network`]
//! composes them into trainable models, [`data`] supplies synthetic shapes,
//! augmentation and file IO, and [`cli`] backs the `sph3d` binary.

pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod kv;
pub mod network;
pub mod ops;
pub mod seed;

pub use error::{Error, Result};
