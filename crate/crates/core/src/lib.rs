//! Zero-shot 3D keypoint detection from text-prompted 2D point detectors.
//!
//! A mesh is rendered from a ring of calibrated views, a pluggable detector
//! answers "point to X" queries per view, detections are lifted onto the
//! surface through the cached depth buffer, and the lifted points are fused
//! into named 3D keypoints with density-based clustering.

pub mod mesh;
pub mod render;
pub mod gateway;
pub mod backproject;
pub mod cluster;
pub mod eval;
pub mod pipeline;
