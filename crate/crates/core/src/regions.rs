//! Body-part rectangles, their masks and the left/right symmetry fallback.
//!
//! Corner order is fixed so that corner `j` of a part in one pose corresponds
//! to corner `j` of the same part in another pose:
//!
//! - limbs: `j1 - w n`, `j2 - w n`, `j2 + w n`, `j1 + w n`, where `j1`/`j2` are
//!   the proximal/distal joints, `u` the unit axis from `j1` to `j2`,
//!   `n = (-u.y, u.x)` and `w` half the limb width. The first corner is one of
//!   the two nearest to `j1` and the winding is positive in x/y coordinates.
//! - head and torso: `(x0, y0)`, `(x1, y0)`, `(x1, y1)`, `(x0, y1)`, the same
//!   winding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::tensor::{joint, Keypoints, Tensor};

pub const NUM_PARTS: usize = 10;

/// Limb width used when the torso anchor box cannot be measured, as a
/// fraction of the image height.
pub const FALLBACK_WIDTH_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Head,
    Torso,
    LUArm,
    LLArm,
    RUArm,
    RLArm,
    LULeg,
    LLLeg,
    RULeg,
    RLLeg,
}

impl Part {
    pub const ALL: [Part; NUM_PARTS] = [
        Part::Head,
        Part::Torso,
        Part::LUArm,
        Part::LLArm,
        Part::RUArm,
        Part::RLArm,
        Part::LULeg,
        Part::LLLeg,
        Part::RULeg,
        Part::RLLeg,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Head => "head",
            Part::Torso => "torso",
            Part::LUArm => "luarm",
            Part::LLArm => "llarm",
            Part::RUArm => "ruarm",
            Part::RLArm => "rlarm",
            Part::LULeg => "luleg",
            Part::LLLeg => "llleg",
            Part::RULeg => "ruleg",
            Part::RLLeg => "rlleg",
        }
    }

    /// Proximal and distal joints of a limb.
    pub fn limb_joints(self) -> Option<(usize, usize)> {
        use joint::*;
        match self {
            Part::LUArm => Some((L_SHOULDER, L_ELBOW)),
            Part::LLArm => Some((L_ELBOW, L_WRIST)),
            Part::RUArm => Some((R_SHOULDER, R_ELBOW)),
            Part::RLArm => Some((R_ELBOW, R_WRIST)),
            Part::LULeg => Some((L_HIP, L_KNEE)),
            Part::LLLeg => Some((L_KNEE, L_ANKLE)),
            Part::RULeg => Some((R_HIP, R_KNEE)),
            Part::RLLeg => Some((R_KNEE, R_ANKLE)),
            Part::Head | Part::Torso => None,
        }
    }

    /// The same limb on the other side of the body.
    pub fn twin(self) -> Option<Part> {
        match self {
            Part::LUArm => Some(Part::RUArm),
            Part::RUArm => Some(Part::LUArm),
            Part::LLArm => Some(Part::RLArm),
            Part::RLArm => Some(Part::LLArm),
            Part::LULeg => Some(Part::RULeg),
            Part::RULeg => Some(Part::LULeg),
            Part::LLLeg => Some(Part::RLLeg),
            Part::RLLeg => Some(Part::LLLeg),
            Part::Head | Part::Torso => None,
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Part::ALL
            .into_iter()
            .find(|p| p.name() == lower)
            .ok_or_else(|| Error::Domain(format!("unknown body part {s:?}")))
    }
}

/// One body-part quadrilateral; `corners == None` means the part is EMPTY.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub part: Part,
    pub corners: Option<[Point2; 4]>,
    /// (height, width) of the image the corners live in.
    pub source_dims: (usize, usize),
}

impl Region {
    pub fn empty(part: Part, source_dims: (usize, usize)) -> Self {
        Self {
            part,
            corners: None,
            source_dims,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.corners.is_none()
    }

    /// Region with its corners expressed at another resolution.
    pub fn rescaled(&self, to: (usize, usize)) -> Region {
        let sx = to.1 as f64 / self.source_dims.1 as f64;
        let sy = to.0 as f64 / self.source_dims.0 as f64;
        Region {
            part: self.part,
            corners: self
                .corners
                .map(|cs| cs.map(|p| Point2::new(p.x * sx, p.y * sy))),
            source_dims: to,
        }
    }
}

/// Joint subsets that anchor the head box and the torso measurement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionConfig {
    pub head_joints: Vec<usize>,
    pub torso_anchor_joints: Vec<usize>,
}

impl Default for RegionConfig {
    fn default() -> Self {
        use joint::*;
        Self {
            head_joints: vec![NOSE, NECK, R_EYE, L_EYE, R_EAR, L_EAR],
            torso_anchor_joints: vec![R_SHOULDER, L_SHOULDER, R_HIP, L_HIP],
        }
    }
}

impl RegionConfig {
    pub fn validate(&self) -> Result<()> {
        for &j in self.head_joints.iter().chain(&self.torso_anchor_joints) {
            if j >= crate::tensor::NUM_JOINTS {
                return Err(Error::Domain(format!("joint index {j} out of range")));
            }
        }
        Ok(())
    }
}

fn bounding_box(points: &[Point2]) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

fn box_corners(lo: Point2, hi: Point2) -> [Point2; 4] {
    [
        lo,
        Point2::new(hi.x, lo.y),
        hi,
        Point2::new(lo.x, hi.y),
    ]
}

fn present(kp: &Keypoints, set: &[usize]) -> Vec<Point2> {
    set.iter().filter_map(|&j| kp.point(j)).collect()
}

/// Width of every limb rectangle: one third of the mean diagonal of the
/// torso anchor box, or `None` when fewer than two anchors are present or the
/// box collapses to a point.
pub fn torso_limb_width(kp: &Keypoints, cfg: &RegionConfig) -> Option<f64> {
    let anchors = present(kp, &cfg.torso_anchor_joints);
    if anchors.len() < 2 {
        return None;
    }
    let (lo, hi) = bounding_box(&anchors);
    // both diagonals of an axis-aligned box have the same length
    let diagonals = [lo.distance(hi), Point2::new(hi.x, lo.y).distance(Point2::new(lo.x, hi.y))];
    let mean = (diagonals[0] + diagonals[1]) / 2.0;
    (mean > 0.0).then_some(mean / 3.0)
}

/// Rotated rectangle around the segment `j1 -> j2` with the given full width.
pub fn limb_rectangle(j1: Point2, j2: Point2, width: f64) -> Option<[Point2; 4]> {
    let axis = j2.sub(j1);
    let len = axis.norm();
    if !(len > 0.0 && width > 0.0) {
        return None;
    }
    let u = axis.scale(1.0 / len);
    let n = Point2::new(-u.y, u.x).scale(width / 2.0);
    Some([j1.sub(n), j2.sub(n), j2.add(n), j1.add(n)])
}

/// Splits a pose into the ten body-part regions, in [`Part::ALL`] order.
pub fn decompose(kp: &Keypoints, height: usize, width: usize, cfg: &RegionConfig) -> Vec<Region> {
    let dims = (height, width);
    let limb_width = torso_limb_width(kp, cfg)
        .unwrap_or(FALLBACK_WIDTH_FRACTION * height as f64);
    let torso_present = cfg.torso_anchor_joints.iter().any(|&j| !kp.is_missing(j));

    Part::ALL
        .iter()
        .map(|&part| {
            let corners = match part {
                Part::Head => {
                    let pts = present(kp, &cfg.head_joints);
                    (pts.len() >= 2).then(|| {
                        let (lo, hi) = bounding_box(&pts);
                        box_corners(lo, hi)
                    })
                }
                Part::Torso => torso_present.then(|| {
                    box_corners(Point2::new(0.0, 0.0), Point2::new(width as f64, height as f64))
                }),
                limb => {
                    let (a, b) = limb.limb_joints().expect("limb part");
                    match (kp.point(a), kp.point(b)) {
                        (Some(j1), Some(j2)) => limb_rectangle(j1, j2, limb_width),
                        _ => None,
                    }
                }
            };
            Region {
                part,
                corners,
                source_dims: dims,
            }
        })
        .collect()
}

/// Fills EMPTY limbs of `regions_a` from their left/right twin, provided the
/// same limb exists in `regions_b` (so a transform can be fitted) and the twin
/// exists in `regions_a`.
pub fn apply_symmetry(regions_a: &[Region], regions_b: &[Region]) -> Vec<Region> {
    assert_eq!(regions_a.len(), NUM_PARTS);
    assert_eq!(regions_b.len(), NUM_PARTS);
    regions_a
        .iter()
        .map(|r| {
            let Some(twin) = r.part.twin() else {
                return *r;
            };
            let donor = &regions_a[twin.index()];
            if r.is_empty() && !regions_b[r.part.index()].is_empty() && !donor.is_empty() {
                Region {
                    corners: donor.corners,
                    ..*r
                }
            } else {
                *r
            }
        })
        .collect()
}

/// Single-channel binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    tensor: Tensor,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            tensor: Tensor::zeros(height, width, 1),
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            tensor: Tensor::filled(height, width, 1, 1.0),
        }
    }

    /// Wraps a single-channel tensor whose values are all 0 or 1.
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        if tensor.channels() != 1 {
            return Err(Error::Shape(format!(
                "mask needs 1 channel, got {}",
                tensor.channels()
            )));
        }
        if let Some(v) = tensor.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { tensor })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn dims(&self) -> (usize, usize) {
        self.tensor.dims()
    }

    pub fn count(&self) -> usize {
        self.tensor.data().iter().filter(|&&v| v != 0.0).count()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.tensor.get(row, col, 0)
    }
}

const EDGE_EPS: f64 = 1e-9;

/// Horizontal extent of a convex quadrilateral along the line `y`, if any.
fn span_at(corners: &[Point2; 4], y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        let (ymin, ymax) = (a.y.min(b.y), a.y.max(b.y));
        if y < ymin - EDGE_EPS || y > ymax + EDGE_EPS {
            continue;
        }
        if (b.y - a.y).abs() <= EDGE_EPS {
            lo = lo.min(a.x.min(b.x));
            hi = hi.max(a.x.max(b.x));
        } else {
            let t = ((y - a.y) / (b.y - a.y)).clamp(0.0, 1.0);
            let x = a.x + t * (b.x - a.x);
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Marks every pixel whose centre lies inside or on the region's boundary.
/// Regions are convex, so each row is filled as a single span.
pub fn rasterize_mask(region: &Region, height: usize, width: usize) -> Mask {
    let mut mask = vec![0f32; height * width];
    if let Some(corners) = &region.corners {
        let ymin = corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let ymax = corners.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let row_lo = (ymin - EDGE_EPS).ceil().max(0.0);
        let row_hi = (ymax + EDGE_EPS).floor().min(height as f64 - 1.0);
        if row_lo <= row_hi {
            for row in row_lo as usize..=row_hi as usize {
                let Some((x0, x1)) = span_at(corners, row as f64) else {
                    continue;
                };
                let c0 = (x0 - EDGE_EPS).ceil().max(0.0);
                let c1 = (x1 + EDGE_EPS).floor().min(width as f64 - 1.0);
                if c0 <= c1 {
                    mask[row * width + c0 as usize..=row * width + c1 as usize].fill(1.0);
                }
            }
        }
    }
    Mask {
        tensor: Tensor::from_parts_unchecked(height, width, 1, mask),
    }
}
