//! Depth estimation for cross-shaped light fields with wide baselines.
//!
//! The pipeline turns a cross light field (the center row and center column
//! of a 4D view grid) into a per-pixel disparity map in three stages:
//!
//! 1. A plane sweep over integer disparities, realized as a skew ("EPI shift")
//!    of the view stacks. Points at disparity `s` appear at disparity zero in
//!    the stack shifted by `s`, so a predictor with a small receptive field
//!    can handle arbitrarily wide baselines ([`epishift`]).
//! 2. A convolutional predictor (siamese feature extractor plus a U-Net) that
//!    emits, per shift, a classification map ("is the true disparity within
//!    half a pixel of this shift?") and a sub-pixel offset regression ([`net`]).
//! 3. Fusion: per pixel, the shift with the highest classification score plus
//!    its regressed offset, with optional median-based refinement of
//!    low-confidence pixels ([`fusion`]).
//!
//! Supporting modules cover scene I/O ([`io`], [`lightfield`]), target and
//! loss construction ([`targets`]), training ([`train`]), synthetic scenes
//! with exact ground truth ([`synth`]), evaluation metrics ([`metrics`]) and
//! the sweep inference driver ([`pipeline`]).

pub mod epishift;
pub mod error;
pub mod fusion;
pub mod io;
pub mod lightfield;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod synth;
pub mod targets;
pub mod train;

pub use error::{Error, Result};
pub use lightfield::{CrossStack, DisparityMap, LightField4D, View};
