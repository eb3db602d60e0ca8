//! SSIM with the usual 11x11 Gaussian window (sigma 1.5) and its masked
//! variant.
//!
//! Local statistics are Gaussian-weighted means over every window position
//! that fits entirely inside the image; the score is the mean SSIM index over
//! those positions, averaged over channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regions::Mask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "ssim window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::Domain("ssim constants k1, k2 must be positive".into()));
        }
        if !(self.gaussian_sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::Domain(
                "ssim gaussian sigma and dynamic range must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalised 1D Gaussian taps; the 2D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-(d * d) / (2.0 * self.gaussian_sigma * self.gaussian_sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

/// Separable "valid" filtering of one plane.
fn filter_valid(plane: &[f64], (h, w): (usize, usize), kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horiz = vec![0f64; h * ow];
    for r in 0..h {
        let row = &plane[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz[r * ow + c] = kernel.iter().zip(&row[c..c + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0f64; oh * ow];
    for r in 0..oh {
        for (i, &kv) in kernel.iter().enumerate() {
            let src = &horiz[(r + i) * ow..(r + i + 1) * ow];
            for (o, &v) in out[r * ow..(r + 1) * ow].iter_mut().zip(src) {
                *o += kv * v;
            }
        }
    }
    out
}

fn check_pair(x: &Tensor, y: &Tensor, p: &SsimParams) -> Result<()> {
    p.validate()?;
    x.ensure_same_shape(y, "ssim inputs")?;
    let (h, w) = x.dims();
    if p.window > h || p.window > w {
        return Err(Error::Domain(format!(
            "ssim window {} exceeds image {h}x{w}",
            p.window
        )));
    }
    let range = p.dynamic_range as f32;
    for t in [x, y] {
        if let Some(v) = t.data().iter().find(|&&v| !(0.0..=range).contains(&v)) {
            return Err(Error::Domain(format!(
                "ssim input value {v} outside [0, {range}]"
            )));
        }
    }
    Ok(())
}

pub fn ssim(x: &Tensor, y: &Tensor, p: &SsimParams) -> Result<f64> {
    check_pair(x, y, p)?;
    let (h, w, channels) = x.shape();
    let kernel = p.kernel();
    let (c1, c2) = (p.c1(), p.c2());
    let plane = |t: &Tensor, c: usize| -> Vec<f64> {
        t.data().iter().skip(c).step_by(channels).map(|&v| v as f64).collect()
    };

    let mut total = 0f64;
    for c in 0..channels {
        let xs = plane(x, c);
        let ys = plane(y, c);
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
        let f = |v: &[f64]| filter_valid(v, (h, w), &kernel);
        let (mx, my, exx, eyy, exy) = (f(&xs), f(&ys), f(&xx), f(&yy), f(&xy));

        let mut sum = 0f64;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cov = exy[i] - ux * uy;
            let num = (2.0 * ux * uy + c1) * (2.0 * cov + c2);
            let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
            sum += num / den;
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / channels as f64)
}

/// SSIM of the two images after zeroing everything outside `mask`.
pub fn masked_ssim(x: &Tensor, y: &Tensor, mask: &Mask, p: &SsimParams) -> Result<f64> {
    x.ensure_same_shape(y, "ssim inputs")?;
    if mask.dims() != x.dims() {
        return Err(Error::Shape(format!(
            "mask is {:?} but images are {:?}",
            mask.dims(),
            x.dims()
        )));
    }
    let apply = |t: &Tensor| {
        let c = t.channels();
        let m = mask.tensor().data();
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * m[i / c])
            .collect();
        Tensor::from_parts_unchecked(t.height(), t.width(), c, data)
    };
    ssim(&apply(x), &apply(y), p)
}
