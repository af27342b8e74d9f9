//! Python module `sparse_iclk`: poses, the pinhole camera, the Lie-group maps
//! and photometric alignment of two grayscale images.

use nalgebra::{Matrix4, Vector2, Vector3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sparse_iclk::geometry::{self, Twist};
use sparse_iclk::iclk::{self, AlignOptions, WeightKind};
use sparse_iclk::image::{build_pyramid, GrayImage};

fn value_error(e: sparse_iclk::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Rigid transform `x ↦ R·x + t`.
#[pyclass(name = "Se3Pose", module = "sparse_iclk", from_py_object)]
#[derive(Clone, Copy)]
pub struct PySe3Pose(pub sparse_iclk::Se3Pose);

#[pymethods]
impl PySe3Pose {
    /// From a 4×4 row-major homogeneous matrix; identity when omitted.
    #[new]
    #[pyo3(signature = (matrix = None))]
    fn new(matrix: Option<[[f64; 4]; 4]>) -> PyResult<Self> {
        match matrix {
            None => Ok(PySe3Pose(sparse_iclk::Se3Pose::identity())),
            Some(m) => sparse_iclk::Se3Pose::try_from(m)
                .map(PySe3Pose)
                .map_err(PyValueError::new_err),
        }
    }

    #[staticmethod]
    fn from_translation(t: [f64; 3]) -> Self {
        PySe3Pose(sparse_iclk::Se3Pose::from_translation(Vector3::from(t)))
    }

    #[staticmethod]
    fn from_rotation_vector(omega: [f64; 3]) -> Self {
        PySe3Pose(sparse_iclk::Se3Pose::from_rotation_vector(Vector3::from(omega)))
    }

    fn matrix(&self) -> [[f64; 4]; 4] {
        self.0.into()
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.0.translation.into()
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = self.0.rotation;
        std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))
    }

    fn inverse(&self) -> Self {
        PySe3Pose(self.0.inverse())
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        self.0.transform_point(&Vector3::from(p)).into()
    }

    fn rotation_angle(&self) -> f64 {
        self.0.rotation_angle()
    }

    fn __mul__(&self, other: &PySe3Pose) -> Self {
        PySe3Pose(self.0 * other.0)
    }

    fn __repr__(&self) -> String {
        let m: Matrix4<f64> = self.0.to_matrix();
        format!(
            "Se3Pose({:?})",
            m.row_iter()
                .map(|r| r.iter().copied().collect::<Vec<_>>())
                .collect::<Vec<_>>()
        )
    }
}

#[pyclass(name = "PinholeCamera", module = "sparse_iclk", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyPinholeCamera(pub sparse_iclk::PinholeCamera);

#[pymethods]
impl PyPinholeCamera {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> PyResult<Self> {
        sparse_iclk::PinholeCamera::new(fx, fy, cx, cy, width, height)
            .map(PyPinholeCamera)
            .map_err(value_error)
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.0.fx
    }

    #[getter]
    fn fy(&self) -> f64 {
        self.0.fy
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.0.cx
    }

    #[getter]
    fn cy(&self) -> f64 {
        self.0.cy
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    fn at_level(&self, level: usize) -> Self {
        PyPinholeCamera(self.0.at_level(level))
    }

    fn project(&self, point: [f64; 3]) -> PyResult<(f64, f64)> {
        let p = geometry::project(&self.0, &Vector3::from(point)).map_err(value_error)?;
        Ok((p.x, p.y))
    }

    fn backproject(&self, u: f64, v: f64, inverse_depth: f64) -> PyResult<[f64; 3]> {
        let x = geometry::backproject(&self.0, &Vector2::new(u, v), inverse_depth).map_err(value_error)?;
        Ok(x.into())
    }

    fn __repr__(&self) -> String {
        let c = &self.0;
        format!(
            "PinholeCamera(fx={}, fy={}, cx={}, cy={}, width={}, height={})",
            c.fx, c.fy, c.cx, c.cy, c.width, c.height
        )
    }
}

/// Twist `(tx, ty, tz, wx, wy, wz)` to a pose.
#[pyfunction]
fn se3_exp(xi: [f64; 6]) -> PySe3Pose {
    PySe3Pose(geometry::se3_exp(&Twist::from_slice(&xi)))
}

#[pyfunction]
fn se3_log(pose: &PySe3Pose) -> PyResult<[f64; 6]> {
    let xi = geometry::se3_log(&pose.0).map_err(value_error)?;
    Ok(xi.0.into())
}

fn gray_image(rows: Vec<Vec<f64>>) -> PyResult<GrayImage> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("image rows differ in length"));
    }
    GrayImage::new(width, height, rows.concat()).map_err(value_error)
}

fn weight_kind(name: &str) -> PyResult<WeightKind> {
    match name {
        "none" => Ok(WeightKind::None),
        "huber" => Ok(WeightKind::Huber),
        "tukey" => Ok(WeightKind::Tukey),
        _ => Err(PyValueError::new_err(format!("unknown weight kind {name:?}"))),
    }
}

/// Aligns `image1` to `image0` (row lists of intensities in `[0, 1]`) from
/// `initial_pose`. `features` are `(u, v, inverse_depth)` in `image0`.
#[pyfunction]
#[pyo3(signature = (image0, image1, features, camera, initial_pose = None, weights = "huber", max_iterations = 10))]
#[allow(clippy::too_many_arguments)]
fn align<'py>(
    py: Python<'py>,
    image0: Vec<Vec<f64>>,
    image1: Vec<Vec<f64>>,
    features: Vec<(f64, f64, f64)>,
    camera: &PyPinholeCamera,
    initial_pose: Option<PySe3Pose>,
    weights: &str,
    max_iterations: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let (i0, i1) = (gray_image(image0)?, gray_image(image1)?);
    let features: Vec<_> = features
        .into_iter()
        .map(|(u, v, rho)| iclk::SparseFeature::new(u, v, rho))
        .collect();
    let options = AlignOptions {
        weight_kind: weight_kind(weights)?,
        max_iterations,
        ..AlignOptions::default()
    };
    let init = initial_pose.map_or_else(sparse_iclk::Se3Pose::identity, |p| p.0);
    let result = py
        .detach(|| {
            let (p0, p1) = (build_pyramid(&i0)?, build_pyramid(&i1)?);
            iclk::align(&p0, &p1, &features, &camera.0, &init, &options)
        })
        .map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("pose", PySe3Pose(result.pose))?;
    out.set_item("converged", result.converged)?;
    out.set_item("iterations_per_level", result.iterations_per_level.to_vec())?;
    out.set_item("final_cost", result.final_cost)?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "sparse_iclk")]
fn sparse_iclk_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySe3Pose>()?;
    m.add_class::<PyPinholeCamera>()?;
    m.add_function(wrap_pyfunction!(se3_exp, m)?)?;
    m.add_function(wrap_pyfunction!(se3_log, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    Ok(())
}
