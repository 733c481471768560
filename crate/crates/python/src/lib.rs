//! Python bindings for the `pnpnet` crate.

use std::path::PathBuf;

use nalgebra::{Vector2, Vector3};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pnpnet::evalbench::{self, Method, OpsConfig, Solvers, SuccessCriteria};
use pnpnet::geometry::{self, CameraIntrinsics, Correspondence, Rotation};
use pnpnet::io::WeightFile;
use pnpnet::lm::LMConfig;
use pnpnet::pipeline;
use pnpnet::preprocess::ProblemInstance;
use pnpnet::ransac::RansacConfig;
use pnpnet::synthgen::{OutlierPolicy, PosePrior, ScenarioConfig, SyntheticStream};
use pnpnet::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::NonFiniteLoss { .. }
        | Error::SingularSystem
        | Error::DegenerateDepth { .. }
        | Error::DegenerateConfiguration(_)
        | Error::NoValidHypothesis
        | Error::ResampleLimitExceeded(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Rigid transform from world to camera coordinates.
#[pyclass(name = "Pose", module = "pnpnet", from_py_object)]
#[derive(Clone)]
struct PyPose(geometry::Pose);

#[pymethods]
impl PyPose {
    #[new]
    fn new(t: [f64; 3], omega: [f64; 3]) -> Self {
        Self(geometry::Pose::new(Vector3::from(t), Rotation::new(Vector3::from(omega))))
    }

    #[getter]
    fn t(&self) -> [f64; 3] {
        self.0.t.into()
    }

    /// Axis-angle vector with norm in `[0, pi]`.
    #[getter]
    fn omega(&self) -> [f64; 3] {
        self.0.rot.omega().into()
    }

    fn matrix(&self) -> [[f64; 3]; 3] {
        let m = self.0.rot.matrix();
        std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
    }

    /// Geodesic rotation distance in radians.
    fn rotation_error(&self, other: &PyPose) -> f64 {
        geometry::rotation_error(&self.0, &other.0)
    }

    fn translation_error(&self, other: &PyPose) -> f64 {
        geometry::translation_error(&self.0, &other.0)
    }

    fn __repr__(&self) -> String {
        format!("Pose(t={:?}, omega={:?})", self.t(), self.omega())
    }
}

/// One PnP problem: focal length, 3D points, image points relative to the
/// principal point and optional ground truth.
#[pyclass(name = "Instance", module = "pnpnet", from_py_object)]
#[derive(Clone)]
struct PyInstance(ProblemInstance);

#[pymethods]
impl PyInstance {
    #[new]
    #[pyo3(signature = (f, a, b, truth=None))]
    fn new(f: f64, a: Vec<[f64; 3]>, b: Vec<[f64; 2]>, truth: Option<PyPose>) -> PyResult<Self> {
        if a.len() != b.len() {
            return Err(PyValueError::new_err("a and b must have the same length"));
        }
        let inst = ProblemInstance {
            intrinsics: CameraIntrinsics::new(f).map_err(py_err)?,
            corrs: a
                .iter()
                .zip(&b)
                .map(|(a, b)| Correspondence::new(Vector3::from(*a), Vector2::from(*b)))
                .collect(),
            truth: truth.map(|p| p.0),
            outlier_mask: None,
        };
        inst.validate().map_err(py_err)?;
        Ok(Self(inst))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn f(&self) -> f64 {
        self.0.intrinsics.f
    }

    #[getter]
    fn a(&self) -> Vec<[f64; 3]> {
        self.0.corrs.iter().map(|c| c.a.into()).collect()
    }

    #[getter]
    fn b(&self) -> Vec<[f64; 2]> {
        self.0.corrs.iter().map(|c| c.b.into()).collect()
    }

    #[getter]
    fn truth(&self) -> Option<PyPose> {
        self.0.truth.map(PyPose)
    }

    #[getter]
    fn outlier_mask(&self) -> Option<Vec<bool>> {
        self.0.outlier_mask.clone()
    }

    fn __repr__(&self) -> String {
        format!("Instance(n={}, f={}, outliers={})", self.0.n(), self.0.intrinsics.f, self.0.outlier_count())
    }
}

/// A trained network with its refiner.
#[pyclass(name = "Model", module = "pnpnet", from_py_object)]
#[derive(Clone)]
struct PyModel(pipeline::PnpNet);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        WeightFile::load(&path).map(|w| Self(w.model)).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        WeightFile {
            model: self.0.clone(),
            state: None,
        }
        .save(&path)
        .map_err(py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    /// Per-layer refiner hyperparameters.
    #[getter]
    fn lm<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("alpha", self.0.lm.alpha.clone())?;
        d.set_item("gamma", self.0.lm.gamma.clone())?;
        d.set_item("lambda", self.0.lm.lambda.clone())?;
        d.set_item("weight_floor", self.0.lm.weight_floor)?;
        Ok(d)
    }

    fn solve(&self, inst: &PyInstance) -> PyResult<PyPose> {
        self.0.solve(&inst.0).map(PyPose).map_err(py_err)
    }

    /// Network estimate without refinement.
    fn solve_coarse(&self, inst: &PyInstance) -> PyResult<PyPose> {
        self.0.solve_coarse(&inst.0).map(PyPose).map_err(py_err)
    }
}

fn lm_config(model: Option<&PyModel>, layers: usize, alpha: f64, gamma: f64, lam: f64) -> LMConfig {
    model.map_or_else(|| LMConfig::uniform(layers, alpha, gamma, lam), |m| m.0.lm.clone())
}

#[pyfunction]
fn epnp(inst: &PyInstance) -> PyResult<PyPose> {
    pnpnet::epnp::epnp_solve(&inst.0).map(PyPose).map_err(py_err)
}

/// EPnP followed by the refiner: the model's when given, otherwise a uniform one.
#[pyfunction]
#[pyo3(signature = (inst, model=None, layers=10, alpha=1.0, gamma=0.5, lam=1e-3))]
fn epnp_lm(inst: &PyInstance, model: Option<&PyModel>, layers: usize, alpha: f64, gamma: f64, lam: f64) -> PyResult<PyPose> {
    let cfg = lm_config(model, layers, alpha, gamma, lam);
    pnpnet::epnp::epnp_lm(&inst.0, &cfg).map(PyPose).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (inst, seed=0, max_iterations=200, threshold=3.0, model=None))]
fn ransac(inst: &PyInstance, seed: u64, max_iterations: usize, threshold: f64, model: Option<&PyModel>) -> PyResult<PyPose> {
    let cfg = RansacConfig {
        seed,
        max_iterations,
        inlier_threshold: threshold,
        ..Default::default()
    };
    let lm = model.map_or_else(LMConfig::default, |m| m.0.lm.clone());
    pnpnet::ransac::ransac_solve(&inst.0, &cfg, &lm).map(PyPose).map_err(py_err)
}

/// Refines `pose` with the given uniform schedule.
#[pyfunction]
#[pyo3(signature = (pose, inst, layers=10, alpha=1.0, gamma=0.5, lam=1e-3))]
fn refine(pose: &PyPose, inst: &PyInstance, layers: usize, alpha: f64, gamma: f64, lam: f64) -> PyResult<PyPose> {
    let cfg = LMConfig::uniform(layers, alpha, gamma, lam);
    cfg.validate().map_err(py_err)?;
    Ok(PyPose(pnpnet::lm::refine_pose(&pose.0, &inst.0, &cfg)))
}

fn outlier_policy(s: &str) -> PyResult<OutlierPolicy> {
    match s {
        "off" => Ok(OutlierPolicy::Off),
        "on" | "uniform" => Ok(OutlierPolicy::Uniform),
        k => k
            .parse()
            .map(OutlierPolicy::Fixed)
            .map_err(|_| PyValueError::new_err(format!("outliers must be off, on or a count, got {k:?}"))),
    }
}

fn scenario(n: usize, outliers: &str, sigma2d: f64, sigma3d: f64, prior: &str, seed: u64) -> PyResult<ScenarioConfig> {
    let pose_prior = match prior {
        "uniform" => PosePrior::UniformBox,
        "gaussian" => PosePrior::Gaussian,
        p => return Err(PyValueError::new_err(format!("unknown pose prior {p:?}"))),
    };
    Ok(ScenarioConfig {
        n,
        outliers: outlier_policy(outliers)?,
        sigma2d,
        sigma3d,
        pose_prior,
        seed,
        ..Default::default()
    })
}

/// Synthetic instances from the default scenario with the given overrides.
#[pyfunction]
#[pyo3(signature = (count, n=9, outliers="on", sigma2d=1.0, sigma3d=0.05, prior="uniform", seed=0))]
fn generate(count: usize, n: usize, outliers: &str, sigma2d: f64, sigma3d: f64, prior: &str, seed: u64) -> PyResult<Vec<PyInstance>> {
    let sc = scenario(n, outliers, sigma2d, sigma3d, prior, seed)?;
    let insts = SyntheticStream::new(sc).and_then(|mut s| s.take_instances(count)).map_err(py_err)?;
    Ok(insts.into_iter().map(PyInstance).collect())
}

#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<Vec<PyInstance>> {
    pnpnet::io::load_dataset(&path)
        .map(|v| v.into_iter().map(PyInstance).collect())
        .map_err(py_err)
}

#[pyfunction]
fn save_dataset(path: PathBuf, instances: Vec<PyInstance>) -> PyResult<()> {
    let insts: Vec<ProblemInstance> = instances.into_iter().map(|i| i.0).collect();
    pnpnet::io::save_dataset(&path, &insts).map_err(py_err)
}

/// Joint, rotation and translation success rates per method.
#[pyfunction]
#[pyo3(signature = (methods, trials=1000, seed=0, model=None, n=9, outliers="on", prior="uniform", t_r_deg=1.0, t_t=0.2))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    methods: Vec<String>,
    trials: usize,
    seed: u64,
    model: Option<&PyModel>,
    n: usize,
    outliers: &str,
    prior: &str,
    t_r_deg: f64,
    t_t: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let methods: Vec<Method> = methods
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_, _>>()
        .map_err(py_err)?;
    let defaults = ScenarioConfig::default();
    let sc = scenario(n, outliers, defaults.sigma2d, defaults.sigma3d, prior, seed)?;
    let criteria = SuccessCriteria::degrees(t_r_deg, t_t).map_err(py_err)?;
    let solvers = Solvers::new(model.map(|m| &m.0), RansacConfig::default());
    let report = py
        .detach(|| evalbench::evaluate(&methods, &sc, &criteria, trials, seed, &solvers))
        .map_err(py_err)?;
    let out = PyDict::new(py);
    for s in &report.summaries {
        let d = PyDict::new(py);
        d.set_item("joint", s.joint)?;
        d.set_item("rotation", s.rotation)?;
        d.set_item("translation", s.translation)?;
        d.set_item("failures", s.failures)?;
        out.set_item(s.method.name(), d)?;
    }
    Ok(out)
}

/// Operation count of one solve; RANSAC is reported at its iteration cap.
#[pyfunction]
#[pyo3(signature = (method, n=9, layers=10))]
fn count_ops<'py>(py: Python<'py>, method: &str, n: usize, layers: usize) -> PyResult<Bound<'py, PyDict>> {
    let method: Method = method.parse().map_err(py_err)?;
    let cfg = OpsConfig {
        m: layers,
        ..Default::default()
    };
    let ops = evalbench::count_ops(method, n, &cfg).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("additions", ops.additions)?;
    d.set_item("multiplications", ops.multiplications)?;
    d.set_item("divisions", ops.divisions)?;
    d.set_item("transcendentals", ops.transcendentals)?;
    d.set_item("total", ops.total)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "pnpnet")]
fn pnpnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyInstance>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(epnp, m)?)?;
    m.add_function(wrap_pyfunction!(epnp_lm, m)?)?;
    m.add_function(wrap_pyfunction!(ransac, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(save_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(count_ops, m)?)?;
    Ok(())
}
