//! Six-parameter affine maps `p -> A p + t` between body-part rectangles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Largest accepted 1-norm condition number of the normal matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Smallest accepted `|det A|` when inverting.
pub const MIN_DETERMINANT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        a11: 1.0,
        a12: 0.0,
        a21: 0.0,
        a22: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64, tx: f64, ty: f64) -> Self {
        Self {
            a11,
            a12,
            a21,
            a22,
            tx,
            ty,
        }
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0, tx, ty)
    }

    /// Parameters as `[a11, a12, a21, a22, tx, ty]`.
    pub fn params(&self) -> [f64; 6] {
        [self.a11, self.a12, self.a21, self.a22, self.tx, self.ty]
    }

    pub fn from_params(p: [f64; 6]) -> Self {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5])
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(
            self.a11 * p.x + self.a12 * p.y + self.tx,
            self.a21 * p.x + self.a22 * p.y + self.ty,
        )
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &AffineTransform) -> AffineTransform {
        AffineTransform::new(
            self.a11 * inner.a11 + self.a12 * inner.a21,
            self.a11 * inner.a12 + self.a12 * inner.a22,
            self.a21 * inner.a11 + self.a22 * inner.a21,
            self.a21 * inner.a12 + self.a22 * inner.a22,
            self.a11 * inner.tx + self.a12 * inner.ty + self.tx,
            self.a21 * inner.tx + self.a22 * inner.ty + self.ty,
        )
    }

    pub fn invert(&self) -> Result<AffineTransform> {
        invert_affine(self)
    }
}

pub fn apply_affine(t: &AffineTransform, p: Point2) -> Point2 {
    t.apply(p)
}

pub fn invert_affine(t: &AffineTransform) -> Result<AffineTransform> {
    let det = t.det();
    if !det.is_finite() || det.abs() <= MIN_DETERMINANT {
        return Err(Error::Singular(format!("|det A| = {:e}", det.abs())));
    }
    let i11 = t.a22 / det;
    let i12 = -t.a12 / det;
    let i21 = -t.a21 / det;
    let i22 = t.a11 / det;
    Ok(AffineTransform::new(
        i11,
        i12,
        i21,
        i22,
        -(i11 * t.tx + i12 * t.ty),
        -(i21 * t.tx + i22 * t.ty),
    ))
}

/// Least-squares affine map sending each `src[j]` as close as possible to
/// `dst[j]`.
///
/// The problem separates into two 3-unknown systems sharing the normal matrix
/// of the source points. Points are centred first, which makes that matrix
/// block diagonal: the linear part comes from the 2x2 scatter matrix and the
/// translation from the centroids.
pub fn fit_affine(src: &[Point2], dst: &[Point2]) -> Result<AffineTransform> {
    if src.len() != dst.len() {
        return Err(Error::Shape(format!(
            "{} source points but {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 correspondences, got {}",
            src.len()
        )));
    }
    if src.iter().chain(dst).any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Domain("correspondences must be finite".into()));
    }

    let n = src.len() as f64;
    let centroid = |pts: &[Point2]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point2::new(sx / n, sy / n)
    };
    let cs = centroid(src);
    let cd = centroid(dst);

    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut ux_x, mut ux_y, mut uy_x, mut uy_y) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let p = p.sub(cs);
        let q = q.sub(cd);
        sxx += p.x * p.x;
        sxy += p.x * p.y;
        syy += p.y * p.y;
        ux_x += q.x * p.x;
        ux_y += q.x * p.y;
        uy_x += q.y * p.x;
        uy_y += q.y * p.y;
    }

    // Normal matrix of the centred problem is diag(S, n) with S the scatter
    // matrix, so its 1-norm condition number is available in closed form.
    let det = sxx * syy - sxy * sxy;
    let norm = (sxx.abs() + sxy.abs()).max(sxy.abs() + syy.abs()).max(n);
    let inv_norm = if det > 0.0 {
        ((syy.abs() + sxy.abs()) / det).max((sxy.abs() + sxx.abs()) / det).max(1.0 / n)
    } else {
        f64::INFINITY
    };
    let condition = norm * inv_norm;
    if !(condition.is_finite() && condition <= MAX_CONDITION) {
        return Err(Error::Degenerate(format!(
            "source points are (nearly) collinear, condition number {condition:e}"
        )));
    }

    // A = U S^-1 with U the cross-scatter between target and source.
    let (s11, s12, s22) = (syy / det, -sxy / det, sxx / det);
    let a11 = ux_x * s11 + ux_y * s12;
    let a12 = ux_x * s12 + ux_y * s22;
    let a21 = uy_x * s11 + uy_y * s12;
    let a22 = uy_x * s12 + uy_y * s22;
    let tx = cd.x - (a11 * cs.x + a12 * cs.y);
    let ty = cd.y - (a21 * cs.x + a22 * cs.y);
    Ok(AffineTransform::new(a11, a12, a21, a22, tx, ty))
}

/// Sum of squared residuals `|dst_j - t(src_j)|^2`.
pub fn residual(t: &AffineTransform, src: &[Point2], dst: &[Point2]) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(p, q)| {
            let d = q.sub(t.apply(*p));
            d.dot(d)
        })
        .sum()
}

/// Re-expresses a transform fitted at resolution `from` (height, width) for a
/// grid of size `to`: `S f S^-1` with `S = diag(W'/W, H'/H)`.
pub fn rescale_affine(
    t: &AffineTransform,
    from: (usize, usize),
    to: (usize, usize),
) -> AffineTransform {
    if from == to {
        return *t;
    }
    let sx = to.1 as f64 / from.1 as f64;
    let sy = to.0 as f64 / from.0 as f64;
    AffineTransform::new(
        t.a11,
        t.a12 * sx / sy,
        t.a21 * sy / sx,
        t.a22,
        t.tx * sx,
        t.ty * sy,
    )
}
