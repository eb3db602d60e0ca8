//! Geometric and loss machinery for pose-conditioned deformable image
//! generation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: the dense HWC `f32` [`Tensor`], 18-joint [`Keypoints`] and
//!   their on-disk formats (DFT1 binary tensors, pose JSON).
//! - [`pose`]: Gaussian-style joint heatmaps and limb perturbation.
//! - [`regions`]: the ten rigid body-part rectangles, their binary masks and
//!   the left/right symmetry fallback.
//! - [`affine`]: least-squares affine fitting between corresponding corners.
//! - [`warp`]: per-part masked warping of feature maps and the merge
//!   strategies (max, average, linear combination).
//! - [`nnloss`]: the nearest-neighbour loss (reference scan and shifted-tensor
//!   fast path) together with L1, adversarial and combined objectives.
//! - [`metrics`]: SSIM and mask-SSIM.
//! - [`cli`]: the `deforma` command-line front end.
//!
//! Point convention, shared by every module: `x` is the column, `y` is the row
//! and the origin sits on the centre of the top-left pixel.

pub mod affine;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nnloss;
pub mod pose;
pub mod regions;
pub mod tensor;
pub mod warp;

pub use affine::AffineTransform;
pub use config::{Config, MergeKind};
pub use error::{Error, Result};
pub use geometry::Point2;
pub use metrics::SsimParams;
pub use nnloss::LossReport;
pub use pose::{HeatmapStack, LimbGroup};
pub use regions::{Mask, Part, Region, RegionConfig};
pub use tensor::{Joint, Keypoints, Tensor};
pub use warp::{MergeStrategy, WarpMode, WarpPlan};
