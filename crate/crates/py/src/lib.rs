//! Python bindings for `deforma-core`.
//!
//! Poses cross the boundary as lists of 18 entries, each `None` or an
//! `(x, y)` tuple. Affine transforms are 6-tuples
//! `(a11, a12, a21, a22, tx, ty)`.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use deforma_core::affine::{self, AffineTransform};
use deforma_core::metrics::{self, SsimParams};
use deforma_core::nnloss::{self, GeneratorLoss};
use deforma_core::pose::{self, DistanceMode, LimbGroup};
use deforma_core::regions::{self, Mask, Part, Region, RegionConfig};
use deforma_core::tensor::{self, Joint, Keypoints, Tensor};
use deforma_core::warp::{self, MergeStrategy};
use deforma_core::{Error, Point2};

create_exception!(deforma, DeformaError, PyException, "Error raised by deforma operations.");

fn py_err(e: Error) -> PyErr {
    DeformaError::new_err(e.to_string())
}

type PoseList = Vec<Option<(f32, f32)>>;
type Params = (f64, f64, f64, f64, f64, f64);
type Corners = [(f64, f64); 4];

fn keypoints(joints: PoseList) -> PyResult<Keypoints> {
    Keypoints::from_vec(
        joints
            .into_iter()
            .map(|j| j.map(|(x, y)| Joint::new(x, y)))
            .collect(),
    )
    .map_err(py_err)
}

fn pose_list(kp: &Keypoints) -> PoseList {
    kp.joints().iter().map(|j| j.map(|j| (j.x, j.y))).collect()
}

fn to_affine(p: Params) -> AffineTransform {
    AffineTransform::new(p.0, p.1, p.2, p.3, p.4, p.5)
}

fn from_affine(t: &AffineTransform) -> Params {
    (t.a11, t.a12, t.a21, t.a22, t.tx, t.ty)
}

fn points(pts: Vec<(f64, f64)>) -> Vec<Point2> {
    pts.into_iter().map(Point2::from).collect()
}

fn region_list(regions: &[Region]) -> Vec<(String, Option<Corners>)> {
    regions
        .iter()
        .map(|r| {
            (
                r.part.name().to_string(),
                r.corners.map(|cs| cs.map(|p| (p.x, p.y))),
            )
        })
        .collect()
}

/// Dense float32 tensor in row-major height x width x channels layout.
#[pyclass(name = "Tensor", module = "deforma", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: Tensor::new(height, width, channels, data).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn zeros(height: usize, width: usize, channels: usize) -> PyResult<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: tensor::read_tensor(path).map_err(py_err)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        tensor::write_tensor(&self.inner, path).map_err(py_err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: Tensor::from_bytes(data).map_err(py_err)?,
        })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.inner.shape()
    }

    /// Flat row-major copy of the values.
    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn get(&self, row: usize, col: usize, channel: usize) -> PyResult<f32> {
        let (h, w, c) = self.inner.shape();
        if row >= h || col >= w || channel >= c {
            return Err(pyo3::exceptions::PyIndexError::new_err("tensor index out of range"));
        }
        Ok(self.inner.get(row, col, channel))
    }

    fn __len__(&self) -> usize {
        self.inner.data().len()
    }

    fn __eq__(&self, other: &PyTensor) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.inner.shape();
        format!("Tensor(height={h}, width={w}, channels={c})")
    }
}

fn wrap(t: Tensor) -> PyTensor {
    PyTensor { inner: t }
}

fn mask_of(t: &PyTensor) -> PyResult<Mask> {
    Mask::from_tensor(t.inner.clone()).map_err(py_err)
}

#[pyfunction]
fn read_pose(path: &str) -> PyResult<PoseList> {
    Ok(pose_list(&tensor::read_pose(path).map_err(py_err)?))
}

#[pyfunction]
fn write_pose(joints: PoseList, path: &str) -> PyResult<()> {
    tensor::write_pose(&keypoints(joints)?, path).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (joints, height, width, sigma = pose::DEFAULT_SIGMA, squared_distance = false))]
fn encode_heatmaps(
    joints: PoseList,
    height: usize,
    width: usize,
    sigma: f32,
    squared_distance: bool,
) -> PyResult<PyTensor> {
    let mode = if squared_distance {
        DistanceMode::Squared
    } else {
        DistanceMode::Euclidean
    };
    let maps = pose::encode_heatmaps_with(&keypoints(joints)?, height, width, sigma, mode)
        .map_err(py_err)?;
    Ok(wrap(maps.into_tensor()))
}

#[pyfunction]
#[pyo3(signature = (joints, sigma_noise, seed, groups = vec!["arms".to_string(), "legs".to_string()]))]
fn perturb_pose(
    joints: PoseList,
    sigma_noise: f32,
    seed: u64,
    groups: Vec<String>,
) -> PyResult<PoseList> {
    let groups = groups
        .iter()
        .map(|g| LimbGroup::parse(g))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let kp = pose::perturb_pose(&keypoints(joints)?, sigma_noise, &groups, seed).map_err(py_err)?;
    Ok(pose_list(&kp))
}

/// Ten `(part, corners)` pairs; corners is `None` for an empty part.
#[pyfunction]
fn decompose(joints: PoseList, height: usize, width: usize) -> PyResult<Vec<(String, Option<Corners>)>> {
    let regions = regions::decompose(&keypoints(joints)?, height, width, &RegionConfig::default());
    Ok(region_list(&regions))
}

/// Regions of both poses, with the symmetry fallback applied to pose A.
#[pyfunction]
#[pyo3(signature = (joints_a, joints_b, height, width, symmetry = true))]
#[allow(clippy::type_complexity)]
fn decompose_pair(
    joints_a: PoseList,
    joints_b: PoseList,
    height: usize,
    width: usize,
    symmetry: bool,
) -> PyResult<(Vec<(String, Option<Corners>)>, Vec<(String, Option<Corners>)>)> {
    let cfg = RegionConfig::default();
    let ra = regions::decompose(&keypoints(joints_a)?, height, width, &cfg);
    let rb = regions::decompose(&keypoints(joints_b)?, height, width, &cfg);
    let ra = if symmetry { regions::apply_symmetry(&ra, &rb) } else { ra };
    Ok((region_list(&ra), region_list(&rb)))
}

#[pyfunction]
#[pyo3(signature = (corners, height, width))]
fn rasterize_mask(corners: Option<Corners>, height: usize, width: usize) -> PyTensor {
    let region = Region {
        part: Part::Head,
        corners: corners.map(|cs| cs.map(Point2::from)),
        source_dims: (height, width),
    };
    wrap(regions::rasterize_mask(&region, height, width).into_tensor())
}

#[pyfunction]
fn fit_affine(src: Vec<(f64, f64)>, dst: Vec<(f64, f64)>) -> PyResult<Params> {
    let t = affine::fit_affine(&points(src), &points(dst)).map_err(py_err)?;
    Ok(from_affine(&t))
}

#[pyfunction]
fn rescale_affine(params: Params, from_dims: (usize, usize), to_dims: (usize, usize)) -> Params {
    from_affine(&affine::rescale_affine(&to_affine(params), from_dims, to_dims))
}

#[pyfunction]
fn invert_affine(params: Params) -> PyResult<Params> {
    Ok(from_affine(&to_affine(params).invert().map_err(py_err)?))
}

#[pyfunction]
fn apply_affine(params: Params, point: (f64, f64)) -> (f64, f64) {
    let p = to_affine(params).apply(point.into());
    (p.x, p.y)
}

#[pyfunction]
fn warp_feature(features: &PyTensor, mask: &PyTensor, params: Params) -> PyResult<PyTensor> {
    warp::warp_feature(&features.inner, &mask_of(mask)?, &to_affine(params))
        .map(wrap)
        .map_err(py_err)
}

fn unwrap_all(parts: Vec<PyTensor>) -> Vec<Tensor> {
    parts.into_iter().map(|t| t.inner).collect()
}

#[pyfunction]
fn merge_max(parts: Vec<PyTensor>) -> PyResult<PyTensor> {
    warp::merge_max(&unwrap_all(parts)).map(wrap).map_err(py_err)
}

#[pyfunction]
fn merge_average(parts: Vec<PyTensor>) -> PyResult<PyTensor> {
    warp::merge_average(&unwrap_all(parts)).map(wrap).map_err(py_err)
}

#[pyfunction]
fn merge_linear(parts: Vec<PyTensor>, weights: Vec<PyTensor>) -> PyResult<PyTensor> {
    warp::merge_linear(&unwrap_all(parts), &unwrap_all(weights))
        .map(wrap)
        .map_err(py_err)
}

/// Warps `features` from pose A to pose B. `image_size` is the (height,
/// width) the poses refer to and defaults to the feature size.
#[pyfunction]
#[pyo3(signature = (features, joints_a, joints_b, image_size = None, strategy = "max", weights = None, symmetry = true))]
#[allow(clippy::too_many_arguments)]
fn deform(
    features: &PyTensor,
    joints_a: PoseList,
    joints_b: PoseList,
    image_size: Option<(usize, usize)>,
    strategy: &str,
    weights: Option<Vec<PyTensor>>,
    symmetry: bool,
) -> PyResult<PyTensor> {
    let feature_dims = features.inner.dims();
    let image_dims = image_size.unwrap_or(feature_dims);
    let cfg = RegionConfig::default();
    let ra = regions::decompose(&keypoints(joints_a)?, image_dims.0, image_dims.1, &cfg);
    let rb = regions::decompose(&keypoints(joints_b)?, image_dims.0, image_dims.1, &cfg);
    let ra = if symmetry { regions::apply_symmetry(&ra, &rb) } else { ra };
    let plan = warp::build_plan(&ra, &rb, image_dims, feature_dims).map_err(py_err)?;
    let strategy = match strategy {
        "max" => MergeStrategy::Max,
        "average" => MergeStrategy::Average,
        "linear" => MergeStrategy::Linear(unwrap_all(weights.ok_or_else(|| {
            DeformaError::new_err("the linear strategy needs weights")
        })?)),
        other => {
            return Err(DeformaError::new_err(format!("unknown strategy {other:?}")));
        }
    };
    warp::deform(&features.inner, &plan, &strategy)
        .map(wrap)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, n = nnloss::DEFAULT_WINDOW, bruteforce = false))]
fn nn_loss(py: Python<'_>, a: &PyTensor, b: &PyTensor, n: usize, bruteforce: bool) -> PyResult<f64> {
    let (a, b) = (&a.inner, &b.inner);
    py.detach(|| {
        if bruteforce {
            nnloss::nn_loss_bruteforce(a, b, n)
        } else {
            nnloss::nn_loss_fast(a, b, n)
        }
    })
    .map_err(py_err)
}

#[pyfunction]
fn l1_loss(a: &PyTensor, b: &PyTensor) -> PyResult<f64> {
    nnloss::l1_loss(&a.inner, &b.inner).map_err(py_err)
}

/// `(discriminator_loss, generator_loss)` from discriminator scores.
#[pyfunction]
#[pyo3(signature = (d_real, d_fake, saturating = false))]
fn gan_losses(d_real: Vec<f64>, d_fake: Vec<f64>, saturating: bool) -> PyResult<(f64, f64)> {
    let form = if saturating {
        GeneratorLoss::Saturating
    } else {
        GeneratorLoss::NonSaturating
    };
    nnloss::gan_losses(&d_real, &d_fake, form).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (gan_term, nn_term, lam = nnloss::DEFAULT_LAMBDA))]
fn combined_objective(gan_term: f64, nn_term: f64, lam: f64) -> f64 {
    nnloss::combined_objective(gan_term, nn_term, lam)
}

#[pyfunction]
#[pyo3(signature = (a, b, mask = None, dynamic_range = 1.0))]
fn ssim(a: &PyTensor, b: &PyTensor, mask: Option<&PyTensor>, dynamic_range: f64) -> PyResult<f64> {
    let params = SsimParams {
        dynamic_range,
        ..SsimParams::default()
    };
    match mask {
        Some(m) => metrics::masked_ssim(&a.inner, &b.inner, &mask_of(m)?, &params),
        None => metrics::ssim(&a.inner, &b.inner, &params),
    }
    .map_err(py_err)
}

#[pymodule]
fn deforma(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DeformaError", m.py().get_type::<DeformaError>())?;
    m.add("PARTS", Part::ALL.iter().map(|p| p.name()).collect::<Vec<_>>())?;
    m.add_class::<PyTensor>()?;
    m.add_function(wrap_pyfunction!(read_pose, m)?)?;
    m.add_function(wrap_pyfunction!(write_pose, m)?)?;
    m.add_function(wrap_pyfunction!(encode_heatmaps, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_pose, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_pair, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize_mask, m)?)?;
    m.add_function(wrap_pyfunction!(fit_affine, m)?)?;
    m.add_function(wrap_pyfunction!(rescale_affine, m)?)?;
    m.add_function(wrap_pyfunction!(invert_affine, m)?)?;
    m.add_function(wrap_pyfunction!(apply_affine, m)?)?;
    m.add_function(wrap_pyfunction!(warp_feature, m)?)?;
    m.add_function(wrap_pyfunction!(merge_max, m)?)?;
    m.add_function(wrap_pyfunction!(merge_average, m)?)?;
    m.add_function(wrap_pyfunction!(merge_linear, m)?)?;
    m.add_function(wrap_pyfunction!(deform, m)?)?;
    m.add_function(wrap_pyfunction!(nn_loss, m)?)?;
    m.add_function(wrap_pyfunction!(l1_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gan_losses, m)?)?;
    m.add_function(wrap_pyfunction!(combined_objective, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    Ok(())
}
