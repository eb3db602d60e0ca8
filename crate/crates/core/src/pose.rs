//! Joint heatmaps and synthetic pose-estimator noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{joint, Joint, Keypoints, Tensor, NUM_JOINTS};

pub const DEFAULT_SIGMA: f32 = 6.0;

/// Exponent used by [`encode_heatmaps_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    /// `exp(-|p - p_j| / sigma^2)`, the default encoding.
    #[default]
    Euclidean,
    /// `exp(-|p - p_j|^2 / sigma^2)`, the usual Gaussian bump.
    Squared,
}

/// 18-channel stack of per-joint heatmaps.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    tensor: Tensor,
}

impl HeatmapStack {
    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    /// Heatmap value of joint `j` at pixel `(row, col)`.
    pub fn value(&self, j: usize, row: usize, col: usize) -> f32 {
        self.tensor.get(row, col, j)
    }
}

pub fn encode_heatmaps(
    kp: &Keypoints,
    height: usize,
    width: usize,
    sigma: f32,
) -> Result<HeatmapStack> {
    encode_heatmaps_with(kp, height, width, sigma, DistanceMode::Euclidean)
}

/// Evaluates one heatmap per joint at every integer pixel centre. Missing
/// joints give an all-zero channel.
pub fn encode_heatmaps_with(
    kp: &Keypoints,
    height: usize,
    width: usize,
    sigma: f32,
    mode: DistanceMode,
) -> Result<HeatmapStack> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Domain(format!(
            "heatmap size must be positive, got {height}x{width}"
        )));
    }
    let inv_var = 1.0 / (sigma as f64 * sigma as f64);
    let joints: Vec<Option<(f64, f64)>> = kp
        .joints()
        .iter()
        .map(|j| j.map(|j| (j.x as f64, j.y as f64)))
        .collect();

    let mut data = vec![0f32; height * width * NUM_JOINTS];
    for (loc, cell) in data.chunks_exact_mut(NUM_JOINTS).enumerate() {
        let row = (loc / width) as f64;
        let col = (loc % width) as f64;
        for (value, joint) in cell.iter_mut().zip(&joints) {
            if let Some((jx, jy)) = joint {
                let dx = col - jx;
                let dy = row - jy;
                let dist = match mode {
                    DistanceMode::Euclidean => dx.hypot(dy),
                    DistanceMode::Squared => dx * dx + dy * dy,
                };
                *value = (-dist * inv_var).exp() as f32;
            }
        }
    }
    Ok(HeatmapStack {
        tensor: Tensor::from_parts_unchecked(height, width, NUM_JOINTS, data),
    })
}

/// Joint groups that [`perturb_pose`] may displace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimbGroup {
    Head,
    Arms,
    Legs,
}

impl LimbGroup {
    pub fn joints(self) -> &'static [usize] {
        use joint::*;
        match self {
            LimbGroup::Head => &[NOSE, NECK, R_EYE, L_EYE, R_EAR, L_EAR],
            LimbGroup::Arms => &[R_SHOULDER, R_ELBOW, R_WRIST, L_SHOULDER, L_ELBOW, L_WRIST],
            LimbGroup::Legs => &[R_HIP, R_KNEE, R_ANKLE, L_HIP, L_KNEE, L_ANKLE],
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "head" => Ok(LimbGroup::Head),
            "arms" | "arm" => Ok(LimbGroup::Arms),
            "legs" | "leg" => Ok(LimbGroup::Legs),
            other => Err(Error::Domain(format!("unknown limb group {other:?}"))),
        }
    }
}

pub const DEFAULT_PERTURB_GROUPS: [LimbGroup; 2] = [LimbGroup::Arms, LimbGroup::Legs];

/// Adds isotropic zero-mean Gaussian noise to every present joint in the
/// selected groups. The random stream depends only on `seed`.
pub fn perturb_pose(
    kp: &Keypoints,
    sigma_noise: f32,
    groups: &[LimbGroup],
    seed: u64,
) -> Result<Keypoints> {
    if !(sigma_noise.is_finite() && sigma_noise >= 0.0) {
        return Err(Error::Domain(format!(
            "noise standard deviation must be non-negative, got {sigma_noise}"
        )));
    }
    if sigma_noise == 0.0 {
        return Ok(*kp);
    }
    let mut selected = [false; NUM_JOINTS];
    for g in groups {
        for &j in g.joints() {
            selected[j] = true;
        }
    }
    let normal = Normal::new(0.0f64, sigma_noise as f64)
        .map_err(|e| Error::Domain(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut joints = *kp.joints();
    // Draws happen for every selected slot, present or not, so that the noise
    // applied to one joint does not depend on which other joints are missing.
    for (j, slot) in joints.iter_mut().enumerate() {
        if !selected[j] {
            continue;
        }
        let dx = normal.sample(&mut rng);
        let dy = normal.sample(&mut rng);
        if let Some(p) = slot {
            *slot = Some(Joint::new(
                (p.x as f64 + dx) as f32,
                (p.y as f64 + dy) as f32,
            ));
        }
    }
    Keypoints::new(joints)
}
