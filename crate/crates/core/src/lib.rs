//! Low-light image enhancement by per-image optimization of iterative
//! quadratic curves.
//!
//! The objective combines a contrastive pull toward normal-light positives
//! and away from synthetic under/overexposed negatives ([`boc`]), brightness
//! consistency inside graph-based super-pixels ([`segmentation`]), feature
//! retention against the input, and gray-world color constancy with a
//! smoothness penalty on the curve maps ([`losses`]).

pub mod batch;
pub mod boc;
pub mod config;
pub mod enhancer;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod segmentation;

pub use crate::boc::{CurveFamily, CurveSpec, NegativePool, Polarity};
pub use crate::config::{parse_config, Config, FeatureBank};
pub use crate::enhancer::{apply_curves, loss_gradient, optimize, CurveParamMaps, Enhancement, OptimizerConfig};
pub use crate::error::{Error, Result};
pub use crate::features::{ExpectationVector, FeaturePyramid, GramSet};
pub use crate::image::{load_image, save_image, Histogram, Image};
pub use crate::losses::{total_loss, LossBreakdown, LossContext, LossWeights};
pub use crate::segmentation::{segment, RegionMap, SegParams};
