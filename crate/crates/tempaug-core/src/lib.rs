//! A self-contained laboratory for studying the training dynamics of small
//! dense classifiers: deterministic SGD training with full checkpoint
//! trajectories, composite networks stitched across checkpoints, temporal
//! consistency metrics and memory windows, one-step SGD noise covariance
//! analysis, and a numerical harness for the memory-to-generalization bound.
//!
//! Everything is seed-deterministic: identical configs produce bit-identical
//! trajectories and analysis outputs.

pub mod composite;
pub mod dataio;
pub mod linalg;
pub mod memory;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod stats;
pub mod trajectory;
