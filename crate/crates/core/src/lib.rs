//! Weakly-supervised temporal action localization with explicit action and
//! context feature subspaces.
//!
//! Videos are represented as two streams of snippet features (appearance and
//! motion). A base module learns snippet attention and video-level class
//! scores from video labels alone. A subspace module then projects snippet
//! features into a low-dimensional space split into an *action* half and a
//! *context* half, supervised by pseudo labels mined from the two attention
//! streams. At inference, class activation in the action subspace separates
//! true action extents from the surrounding context that video-level labels
//! cannot distinguish.
//!
//! The crate is self-contained: [`autodiff`] provides the reverse-mode
//! differentiation kernel everything trains on, [`synthetic`] generates a
//! corpus with planted action/context structure, and [`evaluation`] scores
//! detections against ground truth. No external ML framework is used.

pub mod autodiff;
pub mod base;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod localization;
pub mod model;
pub mod selftest;
pub mod subspace;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
