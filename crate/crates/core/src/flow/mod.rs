//! Optical flow fields, camera-motion estimation and compensation, and the
//! 8-bit flow image codec.

mod field;
mod homography;
mod ransac;

pub use field::{decode_component, decode_gray, encode_component, encode_gray, quantize, FlowField, DEFAULT_FLOW_BOUND};
pub use homography::{compensate, dlt, induced_flow, Homography};
pub use ransac::{fit_homography, HomographyFit, RansacConfig};
