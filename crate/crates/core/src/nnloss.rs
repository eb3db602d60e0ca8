//! Nearest-neighbour loss and the companion L1 / adversarial objectives.
//!
//! For every location `p` of `cx` the nearest-neighbour loss looks for the
//! best-matching channel vector of `cy` inside the `n x n` window centred on
//! `p` and sums the resulting L1 distances over all locations, without any
//! normalisation by channel or pixel count.
//!
//! Two implementations share that contract:
//!
//! - [`nn_loss_bruteforce`] scans the window of every location directly.
//! - [`nn_loss_fast`] walks the `n^2` window offsets as shifted copies of
//!   `cy`, forming one channel-summed difference map per offset and keeping
//!   the per-location minimum. Offsets that leave the grid count as a large
//!   finite sentinel that never wins. The channel sums run in vector lanes.
//!
//! The reference sums channels in `f64` and in channel order; the fast path
//! sums them in `f32` lanes, so the two agree to roughly `1e-7` relative.
//! Totals over locations are `f64` in row-major order for both, and
//! [`l1_loss`] shares the fast path's per-location sum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weight of the nearest-neighbour term in the combined objective.
pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_WINDOW: usize = 3;

/// Stand-in for `+inf` at offsets that leave the grid.
pub const BORDER_SENTINEL: f32 = f32::MAX;

fn check_inputs(cx: &Tensor, cy: &Tensor, n: usize) -> Result<()> {
    cx.ensure_same_shape(cy, "nearest-neighbour loss inputs")?;
    if n == 0 || n.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "window size must be a positive odd integer, got {n}"
        )));
    }
    Ok(())
}

/// Reference implementation: per-location window scan.
pub fn nn_loss_bruteforce(cx: &Tensor, cy: &Tensor, n: usize) -> Result<f64> {
    check_inputs(cx, cy, n)?;
    let (h, w, _) = cx.shape();
    let r = (n / 2) as isize;
    let mut total = 0f64;
    for row in 0..h {
        for col in 0..w {
            let a = cx.pixel(row, col);
            let mut best = f64::INFINITY;
            for di in -r..=r {
                for dj in -r..=r {
                    let qr = row as isize + di;
                    let qc = col as isize + dj;
                    if qr < 0 || qc < 0 || qr >= h as isize || qc >= w as isize {
                        continue;
                    }
                    let b = cy.pixel(qr as usize, qc as usize);
                    let mut d = 0f64;
                    for (x, y) in a.iter().zip(b) {
                        d += (x - y).abs() as f64;
                    }
                    if d < best {
                        best = d;
                    }
                }
            }
            // the centre offset is always on the grid, so `best` is finite
            total += best;
        }
    }
    Ok(total)
}

/// `sum_c |a_c - b_c|` over one channel vector, in eight interleaved `f32`
/// partial sums folded in a fixed order.
#[inline(always)]
fn channel_l1(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, ta) = a.as_chunks::<8>();
    let (cb, tb) = b.as_chunks::<8>();
    for (x, y) in ca.iter().zip(cb) {
        for k in 0..8 {
            acc[k] += (x[k] - y[k]).abs();
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
    for (x, y) in ta.iter().zip(tb) {
        s += (x - y).abs();
    }
    s
}

/// Folds the distance maps of the offsets `(di, -r..=r)` into one row of
/// running minima. The column offsets share a source row, so they are taken
/// together while the `cx` vector and its `cy` neighbours are in cache.
/// Locations whose partner leaves the grid keep their current value.
#[inline(always)]
fn fold_row_offset(
    cx: &[f32],
    cy: &[f32],
    (h, w, c): (usize, usize, usize),
    row: usize,
    di: isize,
    r: isize,
    best: &mut [f32],
) {
    let src_row = row as isize + di;
    if src_row < 0 || src_row >= h as isize {
        return;
    }
    let a_row = &cx[row * w * c..(row + 1) * w * c];
    let b_row = &cy[src_row as usize * w * c..(src_row as usize + 1) * w * c];
    for (col, m) in best.iter_mut().enumerate() {
        let a = &a_row[col * c..(col + 1) * c];
        let lo = (col as isize - r).max(0) as usize;
        let hi = (col + r as usize).min(w - 1);
        let mut v = *m;
        for qc in lo..=hi {
            let d = channel_l1(a, &b_row[qc * c..(qc + 1) * c]);
            if d < v {
                v = d;
            }
        }
        *m = v;
    }
}

#[inline(always)]
fn fold_row_generic(
    cx: &[f32],
    cy: &[f32],
    shape: (usize, usize, usize),
    row: usize,
    r: isize,
    best: &mut [f32],
) {
    for di in -r..=r {
        fold_row_offset(cx, cy, shape, row, di, r, best);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn fold_row_avx2(
    cx: &[f32],
    cy: &[f32],
    shape: (usize, usize, usize),
    row: usize,
    r: isize,
    best: &mut [f32],
) {
    fold_row_generic(cx, cy, shape, row, r, best);
}

/// Same arithmetic either way; only the vector width changes.
fn fold_row(
    cx: &[f32],
    cy: &[f32],
    shape: (usize, usize, usize),
    row: usize,
    r: isize,
    best: &mut [f32],
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { fold_row_avx2(cx, cy, shape, row, r, best) };
        return;
    }
    fold_row_generic(cx, cy, shape, row, r, best);
}

/// Shifted-tensor implementation, equal to [`nn_loss_bruteforce`] up to
/// `f32` rounding of the per-location sums. Maps are produced one grid row
/// at a time so the neighbourhood stays in cache; rows run in parallel and
/// the final sum runs in row-major order.
pub fn nn_loss_fast(cx: &Tensor, cy: &Tensor, n: usize) -> Result<f64> {
    check_inputs(cx, cy, n)?;
    let shape = cx.shape();
    let (h, w, _) = shape;
    let r = (n / 2) as isize;

    let mut best = vec![BORDER_SENTINEL; h * w];
    best.par_chunks_mut(w).enumerate().for_each(|(row, best_row)| {
        fold_row(cx.data(), cy.data(), shape, row, r, best_row);
    });
    Ok(best.iter().map(|&v| v as f64).sum())
}

/// Default nearest-neighbour loss (the fast path).
pub fn nn_loss(cx: &Tensor, cy: &Tensor, n: usize) -> Result<f64> {
    nn_loss_fast(cx, cy, n)
}

/// Unnormalised L1 distance. Per-location sums are formed exactly as in
/// [`nn_loss_fast`], so `nn_loss_fast(x, y, 1) == l1_loss(x, y)`.
pub fn l1_loss(x: &Tensor, y: &Tensor) -> Result<f64> {
    x.ensure_same_shape(y, "l1 loss inputs")?;
    let c = x.channels();
    Ok(x.data()
        .chunks_exact(c)
        .zip(y.data().chunks_exact(c))
        .map(|(a, b)| channel_l1(a, b) as f64)
        .sum())
}

/// Which generator objective [`gan_losses`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorLoss {
    /// `-mean(log D(fake))`.
    #[default]
    NonSaturating,
    /// `mean(log(1 - D(fake)))`, the minimax form.
    Saturating,
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Domain(format!("{name} scores are empty")));
    }
    if let Some(s) = scores.iter().find(|&&s| !(s > 0.0 && s < 1.0)) {
        return Err(Error::Domain(format!(
            "{name} score {s} lies outside the open interval (0, 1)"
        )));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>, len: usize) -> f64 {
    values.sum::<f64>() / len as f64
}

/// Discriminator and generator losses from discriminator outputs on real and
/// generated pairs, averaged over the batch.
pub fn gan_losses(d_real: &[f64], d_fake: &[f64], generator: GeneratorLoss) -> Result<(f64, f64)> {
    check_scores("real", d_real)?;
    check_scores("fake", d_fake)?;
    let d_loss = -mean(d_real.iter().map(|s| s.ln()), d_real.len())
        - mean(d_fake.iter().map(|s| (1.0 - s).ln()), d_fake.len());
    let g_loss = match generator {
        GeneratorLoss::NonSaturating => -mean(d_fake.iter().map(|s| s.ln()), d_fake.len()),
        GeneratorLoss::Saturating => mean(d_fake.iter().map(|s| (1.0 - s).ln()), d_fake.len()),
    };
    Ok((d_loss, g_loss))
}

/// `gan_term + lambda * nn_term`.
pub fn combined_objective(gan_term: f64, nn_term: f64, lambda: f64) -> f64 {
    gan_term + lambda * nn_term
}

/// Named loss values for one generated / target pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub nn: f64,
    pub gan_d: f64,
    pub gan_g: f64,
    /// `gan_g + lambda * nn`.
    pub combined: f64,
    pub lambda: f64,
    pub n: usize,
}

impl LossReport {
    /// Evaluates every term. `generated`/`target` are images for the L1 term;
    /// `features_generated`/`features_target` feed the nearest-neighbour term
    /// (pass the images again for a pixel-space comparison).
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        generated: &Tensor,
        target: &Tensor,
        features_generated: &Tensor,
        features_target: &Tensor,
        d_real: &[f64],
        d_fake: &[f64],
        n: usize,
        lambda: f64,
        generator: GeneratorLoss,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Domain(format!("lambda must be non-negative, got {lambda}")));
        }
        let l1 = l1_loss(generated, target)?;
        let nn = nn_loss_fast(features_generated, features_target, n)?;
        let (gan_d, gan_g) = gan_losses(d_real, d_fake, generator)?;
        Ok(Self {
            l1,
            nn,
            gan_d,
            gan_g,
            combined: combined_objective(gan_g, nn, lambda),
            lambda,
            n,
        })
    }
}
