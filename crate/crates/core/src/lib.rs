//! Fingerprint template fusion.
//!
//! The pipeline: load grayscale impressions, reduce them to unit-width
//! ridge skeletons with minutiae, search a similarity transform aligning
//! each impression to a chosen mean template, fuse ridges and minutiae
//! into one standardized template, and score match quality with GAR/FAR
//! sweeps over a threshold range.

pub mod alignment;
pub mod evaluation;
pub(crate) mod fsutil;
pub mod geometry;
pub mod minutiae;
pub mod pnm;
pub mod raster;
pub mod seeds;
pub mod store;
pub mod synthesis;
pub mod synthgen;

pub use alignment::{AlignmentResult, GAConfig, RefineMode};
pub use geometry::{ParamBox, ParamEntry, ParamList, SimilarityTransform, PARAM_BOX};
pub use minutiae::{Minutia, MinutiaKind, MinutiaeSet};
pub use raster::{BinaryRaster, BitGrid, GrayImage, Mask, Skeleton};
pub use synthesis::{FingerprintTemplate, MeanFingerprint, PreprocessParams};
