//! Raster primitives: images and masks, edges, components, clustering and
//! keypoints.

mod components;
mod edges;
mod image;
mod keypoints;
mod meanshift;

pub use components::{connected_components, Components, Connectivity};
pub use edges::{canny_edges, gaussian_blur, non_maximum_suppression, sobel, Gradient, CANNY_HIGH, CANNY_LOW};
pub use image::{luma, BinaryMask, GrayImage, ImageError};
pub use keypoints::{detect_keypoints, match_descriptors, Keypoint, DEFAULT_MAX_KEYPOINTS, PATCH};
pub use meanshift::{cluster_count, meanshift_1d};
