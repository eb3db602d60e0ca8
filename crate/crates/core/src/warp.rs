//! Per-part masked warping of feature maps and the strategies used to merge
//! the ten warped copies into one deformed tensor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine::{fit_affine, rescale_affine, AffineTransform};
use crate::error::{Error, Result};
use crate::regions::{rasterize_mask, Mask, Region, NUM_PARTS};
use crate::tensor::Tensor;

/// Weight sums within this distance of 1 are accepted as they are.
pub const WEIGHT_SUM_TOLERANCE: f32 = 1e-4;
/// Weight sums within this distance of 1 are renormalised; beyond it they are
/// rejected.
pub const WEIGHT_RENORMALIZE_TOLERANCE: f32 = 1e-2;

/// Transform and source-space mask for one body part at feature resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PartWarp {
    pub transform: AffineTransform,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpPlan {
    parts: Vec<Option<PartWarp>>,
    feature_dims: (usize, usize),
}

impl WarpPlan {
    pub fn parts(&self) -> &[Option<PartWarp>] {
        &self.parts
    }

    pub fn part(&self, index: usize) -> Option<&PartWarp> {
        self.parts[index].as_ref()
    }

    pub fn feature_dims(&self) -> (usize, usize) {
        self.feature_dims
    }

    /// Mask of part `index`; EMPTY parts report an all-zero mask.
    pub fn mask(&self, index: usize) -> Mask {
        match &self.parts[index] {
            Some(p) => p.mask.clone(),
            None => Mask::zeros(self.feature_dims.0, self.feature_dims.1),
        }
    }

    pub fn active_parts(&self) -> usize {
        self.parts.iter().filter(|p| p.is_some()).count()
    }
}

/// Fits each part's transform at image resolution, moves it to the feature
/// resolution and rasterises the source region there. Parts that are EMPTY
/// in either pose, or whose fit is degenerate or singular, stay EMPTY.
pub fn build_plan(
    regions_a: &[Region],
    regions_b: &[Region],
    image_dims: (usize, usize),
    feature_dims: (usize, usize),
) -> Result<WarpPlan> {
    if regions_a.len() != NUM_PARTS || regions_b.len() != NUM_PARTS {
        return Err(Error::Shape(format!(
            "expected {NUM_PARTS} regions per pose, got {} and {}",
            regions_a.len(),
            regions_b.len()
        )));
    }
    if image_dims.0 == 0 || image_dims.1 == 0 || feature_dims.0 == 0 || feature_dims.1 == 0 {
        return Err(Error::Domain("plan dimensions must be positive".into()));
    }
    let parts = regions_a
        .iter()
        .zip(regions_b)
        .map(|(ra, rb)| {
            let (Some(src), Some(dst)) = (&ra.corners, &rb.corners) else {
                return None;
            };
            let fitted = fit_affine(src, dst).ok()?;
            let transform = rescale_affine(&fitted, image_dims, feature_dims);
            transform.invert().ok()?;
            let scaled = Region {
                source_dims: image_dims,
                ..*ra
            }
            .rescaled(feature_dims);
            Some(PartWarp {
                transform,
                mask: rasterize_mask(&scaled, feature_dims.0, feature_dims.1),
            })
        })
        .collect();
    Ok(WarpPlan {
        parts,
        feature_dims,
    })
}

/// Resampling scheme used by [`warp_feature_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarpMode {
    /// Inverse mapping with bilinear interpolation and zero padding.
    #[default]
    Backward,
    /// Each source pixel is pushed to the nearest target pixel; later pixels
    /// in raster order overwrite earlier ones.
    ForwardSplat,
}

pub fn warp_feature(f: &Tensor, mask: &Mask, t: &AffineTransform) -> Result<Tensor> {
    warp_feature_with(f, mask, t, WarpMode::Backward)
}

/// Masks `f` in source space and moves every channel vector with `t`.
pub fn warp_feature_with(
    f: &Tensor,
    mask: &Mask,
    t: &AffineTransform,
    mode: WarpMode,
) -> Result<Tensor> {
    if mask.dims() != f.dims() {
        return Err(Error::Shape(format!(
            "mask is {:?} but features are {:?}",
            mask.dims(),
            f.dims()
        )));
    }
    let inverse = t.invert()?;
    let (h, w, ch) = f.shape();
    let mask = mask.tensor().data();
    let src = f.data();
    let mut out = vec![0f32; h * w * ch];

    match mode {
        WarpMode::Backward => {
            out.par_chunks_mut(w * ch).enumerate().for_each(|(row, out_row)| {
                for col in 0..w {
                    let (sx, sy) = {
                        let p = inverse.apply(crate::Point2::new(col as f64, row as f64));
                        (p.x, p.y)
                    };
                    sample_bilinear(
                        src,
                        mask,
                        (h, w, ch),
                        sx,
                        sy,
                        &mut out_row[col * ch..(col + 1) * ch],
                    );
                }
            });
        }
        WarpMode::ForwardSplat => {
            for row in 0..h {
                for col in 0..w {
                    let m = mask[row * w + col];
                    if m == 0.0 {
                        continue;
                    }
                    let q = t.apply(crate::Point2::new(col as f64, row as f64));
                    let (qx, qy) = (q.x.round(), q.y.round());
                    if qx < 0.0 || qy < 0.0 || qx >= w as f64 || qy >= h as f64 {
                        continue;
                    }
                    let dst = (qy as usize * w + qx as usize) * ch;
                    let s = (row * w + col) * ch;
                    for c in 0..ch {
                        out[dst + c] = src[s + c] * m;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(h, w, ch, out))
}

/// Sample positions this close to a pixel centre are snapped onto it.
const SNAP_EPS: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= SNAP_EPS {
        r
    } else {
        v
    }
}

/// Bilinear sample of `src * mask` at `(sx, sy)`, writing one channel vector.
/// Taps outside the grid read as zero. Taps with zero weight are skipped, so
/// samples landing on a pixel centre (after snapping) reproduce it bit for
/// bit.
#[inline]
fn sample_bilinear(
    src: &[f32],
    mask: &[f32],
    (h, w, ch): (usize, usize, usize),
    sx: f64,
    sy: f64,
    out: &mut [f32],
) {
    let (sx, sy) = (snap(sx), snap(sy));
    if !(sx > -1.0 && sy > -1.0 && sx < w as f64 && sy < h as f64) {
        return;
    }
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1.0, y0, fx * (1.0 - fy)),
        (x0, y0 + 1.0, (1.0 - fx) * fy),
        (x0 + 1.0, y0 + 1.0, fx * fy),
    ];
    let mut touched = false;
    for (x, y, weight) in taps {
        if weight == 0.0 || x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            continue;
        }
        let loc = y as usize * w + x as usize;
        let m = mask[loc];
        if m == 0.0 {
            continue;
        }
        let weight = weight as f32;
        let base = loc * ch;
        if !touched {
            out.fill(-0.0);
            touched = true;
        }
        for (o, &v) in out.iter_mut().zip(&src[base..base + ch]) {
            *o += v * m * weight;
        }
    }
}

fn check_stack(parts: &[Tensor]) -> Result<(usize, usize, usize)> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("cannot merge an empty list of tensors".into()))?;
    for (i, t) in parts.iter().enumerate() {
        if !t.same_shape(first) {
            return Err(Error::Shape(format!(
                "tensor {i} is {:?}, expected {:?}",
                t.shape(),
                first.shape()
            )));
        }
    }
    Ok(first.shape())
}

/// Elementwise (signed) maximum over the stack.
pub fn merge_max(parts: &[Tensor]) -> Result<Tensor> {
    let (h, w, c) = check_stack(parts)?;
    let mut out = parts[0].data().to_vec();
    for t in &parts[1..] {
        for (o, &v) in out.iter_mut().zip(t.data()) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(h, w, c, out))
}

/// Elementwise arithmetic mean over the stack, accumulated in part order.
pub fn merge_average(parts: &[Tensor]) -> Result<Tensor> {
    let (h, w, c) = check_stack(parts)?;
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let mut acc = vec![0f64; h * w * c];
    for t in parts {
        for (a, &v) in acc.iter_mut().zip(t.data()) {
            *a += v as f64;
        }
    }
    let n = parts.len() as f64;
    let out = acc.into_iter().map(|a| (a / n) as f32).collect();
    Ok(Tensor::from_parts_unchecked(h, w, c, out))
}

/// Per-location convex combination `sum_h w_h(p) * F_h(p, c)`.
///
/// `weights[h]` is a single-channel map for part `h`. At each location the
/// weights must sum to 1 within [`WEIGHT_SUM_TOLERANCE`]; sums within
/// [`WEIGHT_RENORMALIZE_TOLERANCE`] are rescaled to 1, anything further off is
/// a [`Error::Weight`].
pub fn merge_linear(parts: &[Tensor], weights: &[Tensor]) -> Result<Tensor> {
    let (h, w, c) = check_stack(parts)?;
    if weights.len() != parts.len() {
        return Err(Error::Shape(format!(
            "{} weight maps for {} tensors",
            weights.len(),
            parts.len()
        )));
    }
    for (i, wt) in weights.iter().enumerate() {
        if wt.shape() != (h, w, 1) {
            return Err(Error::Shape(format!(
                "weight map {i} is {:?}, expected {:?}",
                wt.shape(),
                (h, w, 1)
            )));
        }
    }
    let mut out = vec![0f32; h * w * c];
    for loc in 0..h * w {
        let sum: f32 = weights.iter().map(|wt| wt.data()[loc]).sum();
        let dev = (sum - 1.0).abs();
        let scale = if dev <= WEIGHT_SUM_TOLERANCE {
            1.0
        } else if dev <= WEIGHT_RENORMALIZE_TOLERANCE {
            1.0 / sum
        } else {
            return Err(Error::Weight(format!(
                "weights at location ({}, {}) sum to {sum}",
                loc / w,
                loc % w
            )));
        };
        let cell = &mut out[loc * c..(loc + 1) * c];
        for ch in 0..c {
            let mut acc = 0f64;
            for (t, wt) in parts.iter().zip(weights) {
                acc += (wt.data()[loc] * scale) as f64 * t.data()[loc * c + ch] as f64;
            }
            cell[ch] = acc as f32;
        }
    }
    Ok(Tensor::from_parts_unchecked(h, w, c, out))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum MergeStrategy {
    #[default]
    Max,
    Average,
    /// One single-channel weight map per part, in part order.
    Linear(Vec<Tensor>),
}

pub fn deform(f: &Tensor, plan: &WarpPlan, strategy: &MergeStrategy) -> Result<Tensor> {
    deform_with(f, plan, strategy, WarpMode::Backward)
}

/// Warps `f` once per part and merges the results. EMPTY parts contribute an
/// all-zero tensor.
pub fn deform_with(
    f: &Tensor,
    plan: &WarpPlan,
    strategy: &MergeStrategy,
    mode: WarpMode,
) -> Result<Tensor> {
    if f.dims() != plan.feature_dims {
        return Err(Error::Shape(format!(
            "features are {:?} but the plan was built for {:?}",
            f.dims(),
            plan.feature_dims
        )));
    }
    let (h, w, c) = f.shape();
    let warped = plan
        .parts
        .par_iter()
        .map(|part| match part {
            Some(p) => warp_feature_with(f, &p.mask, &p.transform, mode),
            None => Ok(Tensor::zeros(h, w, c)),
        })
        .collect::<Result<Vec<_>>>()?;
    match strategy {
        MergeStrategy::Max => merge_max(&warped),
        MergeStrategy::Average => merge_average(&warped),
        MergeStrategy::Linear(weights) => merge_linear(&warped, weights),
    }
}
