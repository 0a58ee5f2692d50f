//! Two-stream flow-guided convolutional attention networks (FCAN) for video
//! action recognition, built on a small reverse-mode autograd engine, with
//! homography-based camera-motion compensation of optical flow and a
//! synthetic video generator with exact ground truth.

pub mod ablation;
pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod export;
pub mod flow;
pub mod imageio;
pub mod metrics;
pub mod network;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{FcanError, Result};
pub use tensor::{Real, Tensor};
