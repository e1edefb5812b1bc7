//! Hand-crafted image features that stand in for deep embeddings: global
//! intensity moments and GLCM texture statistics.

pub mod glcm;
pub mod image;
pub mod moments;

pub use glcm::{glcm, glcm_features, GlcmMatrix, DEFAULT_LEVELS};
pub use image::GrayImage;
pub use moments::zero_order_stats;

pub const ZERO_ORDER_NAMES: [&str; 4] = ["mean", "std", "skewness", "kurtosis"];
pub const GLCM_NAMES: [&str; 5] = [
    "contrast",
    "homogeneity",
    "energy",
    "correlation",
    "entropy",
];
