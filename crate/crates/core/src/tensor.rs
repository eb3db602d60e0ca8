//! Dense HWC tensors, 18-joint keypoints and their file formats.
//!
//! DFT1 layout (little endian):
//!
//! ```text
//! 0..4    b"DFT1"
//! 4..16   height, width, channels as u32
//! 16      flags, always 0
//! 17..    height * width * channels f32 values, row-major HWC
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

pub const MAGIC: &[u8; 4] = b"DFT1";
pub const HEADER_LEN: usize = 17;

/// Number of joints produced by the pose estimator (OpenPose BODY-18 order).
pub const NUM_JOINTS: usize = 18;

/// Default confidence below which a detected joint is treated as missing.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f32 = 0.05;

/// BODY-18 joint indices.
pub mod joint {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_EYE: usize = 14;
    pub const L_EYE: usize = 15;
    pub const R_EAR: usize = 16;
    pub const L_EAR: usize = 17;

    pub const NAMES: [&str; super::NUM_JOINTS] = [
        "nose",
        "neck",
        "r_shoulder",
        "r_elbow",
        "r_wrist",
        "l_shoulder",
        "l_elbow",
        "l_wrist",
        "r_hip",
        "r_knee",
        "r_ankle",
        "l_hip",
        "l_knee",
        "l_ankle",
        "r_eye",
        "l_eye",
        "r_ear",
        "l_ear",
    ];

    /// Label of the joint on the other side of the body (identity for
    /// joints on the mid line).
    pub const MIRROR: [usize; super::NUM_JOINTS] = [
        NOSE, NECK, L_SHOULDER, L_ELBOW, L_WRIST, R_SHOULDER, R_ELBOW, R_WRIST, L_HIP, L_KNEE,
        L_ANKLE, R_HIP, R_KNEE, R_ANKLE, L_EYE, R_EYE, L_EAR, R_EAR,
    ];
}

/// Dense rank-3 `f32` array stored row-major as height x width x channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking the length and that every value is finite.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Shape("tensor size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Tensor filled with zeros. Panics on a zero dimension.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(
            height > 0 && width > 0 && channels > 0,
            "tensor dimensions must be positive"
        );
        assert!(value.is_finite());
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a tensor by evaluating `f(row, col, channel)` everywhere.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[self.index(row, col, channel)]
    }

    /// Channel vector at one location.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Single-channel tensor holding channel `c`.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        if c >= self.channels {
            return Err(Error::Shape(format!(
                "channel {c} out of range for {} channels",
                self.channels
            )));
        }
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Ok(Self::from_parts_unchecked(self.height, self.width, 1, data))
    }

    /// Stacks single-or-multi channel tensors of equal height/width along the
    /// channel axis.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("cannot concatenate an empty list".into()))?;
        let (h, w) = first.dims();
        if let Some(bad) = parts.iter().find(|t| t.dims() != (h, w)) {
            return Err(Error::Shape(format!(
                "expected {h}x{w}, found {}x{}",
                bad.height, bad.width
            )));
        }
        let channels: usize = parts.iter().map(Tensor::channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for loc in 0..h * w {
            for t in parts {
                data.extend_from_slice(&t.data[loc * t.channels..(loc + 1) * t.channels]);
            }
        }
        Ok(Self::from_parts_unchecked(h, w, channels, data))
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        Tensor::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Bytes of the DFT1 encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        for dim in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.push(0);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a DFT1 byte buffer.
    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"DFT1\"",
                &bytes[..4]
            )));
        }
        let dim = |i: usize| {
            let start = 4 + 4 * i;
            u32::from_le_bytes(bytes[start..start + 4].try_into().unwrap()) as usize
        };
        let (height, width, channels) = (dim(0), dim(1), dim(2));
        if bytes[16] != 0 {
            return Err(Error::Format(format!("unsupported flags byte {}", bytes[16])));
        }
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Format(format!(
                "header has a zero dimension: {height}x{width}x{channels}"
            )));
        }
        let count = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != count * 4 {
            return Err(Error::Format(format!(
                "header {height}x{width}x{channels} needs {} payload bytes, found {}",
                count * 4,
                payload.len()
            )));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Tensor::new(height, width, channels, data)
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

/// One detected joint location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub x: f32,
    pub y: f32,
}

impl Joint {
    pub fn new(x: f32, y: f32) -> Self {
        Self { x, y }
    }

    pub fn point(self) -> Point2 {
        Point2::new(self.x as f64, self.y as f64)
    }
}

/// The 18 joints of one person; `None` marks a missing detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoints {
    joints: [Option<Joint>; NUM_JOINTS],
}

impl Keypoints {
    pub fn new(joints: [Option<Joint>; NUM_JOINTS]) -> Result<Self> {
        for (i, j) in joints.iter().enumerate() {
            if let Some(j) = j {
                if !j.x.is_finite() || !j.y.is_finite() {
                    return Err(Error::Validation(format!(
                        "joint {i} has non-finite coordinates ({}, {})",
                        j.x, j.y
                    )));
                }
            }
        }
        Ok(Self { joints })
    }

    pub fn from_vec(joints: Vec<Option<Joint>>) -> Result<Self> {
        let len = joints.len();
        let arr: [Option<Joint>; NUM_JOINTS] = joints.try_into().map_err(|_| {
            Error::Format(format!("expected {NUM_JOINTS} joints, found {len}"))
        })?;
        Self::new(arr)
    }

    pub fn all_missing() -> Self {
        Self {
            joints: [None; NUM_JOINTS],
        }
    }

    pub fn joints(&self) -> &[Option<Joint>; NUM_JOINTS] {
        &self.joints
    }

    pub fn get(&self, index: usize) -> Option<Joint> {
        self.joints[index]
    }

    pub fn point(&self, index: usize) -> Option<Point2> {
        self.joints[index].map(Joint::point)
    }

    pub fn missing_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_none()).count()
    }

    pub fn is_missing(&self, index: usize) -> bool {
        self.joints[index].is_none()
    }

    /// Mirror about the vertical line `x = axis_x` and swap left/right labels.
    pub fn mirrored(&self, axis_x: f32) -> Self {
        let mut joints = [None; NUM_JOINTS];
        for (i, j) in self.joints.iter().enumerate() {
            joints[joint::MIRROR[i]] = j.map(|j| Joint::new(2.0 * axis_x - j.x, j.y));
        }
        Self { joints }
    }

    pub fn translated(&self, dx: f32, dy: f32) -> Self {
        let mut joints = self.joints;
        for j in joints.iter_mut().flatten() {
            j.x += dx;
            j.y += dy;
        }
        Self { joints }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFile {
    joints: Vec<Option<JointRecord>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JointRecord {
    x: Option<f32>,
    y: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f32>,
}

/// Parses pose JSON, dropping joints below `confidence_threshold`.
pub fn parse_pose(json: &str, confidence_threshold: f32) -> Result<Keypoints> {
    let file: PoseFile =
        serde_json::from_str(json).map_err(|e| Error::Format(format!("pose json: {e}")))?;
    if file.joints.len() != NUM_JOINTS {
        return Err(Error::Format(format!(
            "pose json has {} joints, expected {NUM_JOINTS}",
            file.joints.len()
        )));
    }
    let joints = file
        .joints
        .into_iter()
        .map(|rec| match rec {
            Some(JointRecord {
                x: Some(x),
                y: Some(y),
                c,
            }) if c.is_none_or(|c| c >= confidence_threshold) => Some(Joint::new(x, y)),
            _ => None,
        })
        .collect();
    Keypoints::from_vec(joints)
}

pub fn pose_to_json(kp: &Keypoints) -> String {
    let file = PoseFile {
        joints: kp
            .joints
            .iter()
            .map(|j| {
                j.map(|j| JointRecord {
                    x: Some(j.x),
                    y: Some(j.y),
                    c: None,
                })
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("pose serialization cannot fail")
}

pub fn read_pose(path: impl AsRef<Path>) -> Result<Keypoints> {
    read_pose_with_threshold(path, DEFAULT_CONFIDENCE_THRESHOLD)
}

pub fn read_pose_with_threshold(path: impl AsRef<Path>, threshold: f32) -> Result<Keypoints> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose(&text, threshold)
}

pub fn write_pose(kp: &Keypoints, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = pose_to_json(kp);
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
