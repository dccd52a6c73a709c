//! Multimodal (visible / near-infrared) UAV vineyard imagery: feature-based
//! registration, per-modality segmentation maps, disease-map fusion and
//! evaluation.

pub mod augment;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod raster;
pub mod registration;
pub mod segmap;
pub mod synth;
