//! Python bindings: plant stepping, model training/loading, lifted-space
//! prediction, observer gain design, and closed-loop scenario runs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use koopcar::dataset::{collect_dataset, ExcitationSpec};
use koopcar::error::Error;
use koopcar::eso::{design_gains, EsoGains};
use koopcar::koopman::{
    load_checkpoint, save_checkpoint, train, KoopmanModel, TrainingConfig, TrajectoryDataset,
};
use koopcar::mpc::MpcConfig;
use koopcar::plant;
use koopcar::runner::{
    builtin_scenario, compute_metrics, run_closed_loop, ControllerKind, ControllerSetup,
};
use nalgebra::DVector;

fn py_err(e: Error) -> PyErr {
    PyRuntimeError::new_err(format!("{e}"))
}

type State = (f64, f64, f64);
type Input = (f64, f64);

#[pyclass(name = "VehicleParams")]
#[derive(Clone)]
struct PyVehicleParams {
    inner: plant::VehicleParams,
}

#[pymethods]
impl PyVehicleParams {
    #[new]
    #[pyo3(signature = (mass=None, yaw_inertia=None, lf=None, lr=None, track_width=None, wheel_radius=None, t_max=None))]
    fn new(
        mass: Option<f64>,
        yaw_inertia: Option<f64>,
        lf: Option<f64>,
        lr: Option<f64>,
        track_width: Option<f64>,
        wheel_radius: Option<f64>,
        t_max: Option<f64>,
    ) -> PyResult<Self> {
        let mut p = plant::VehicleParams::default();
        if let Some(v) = mass {
            p.mass = v;
        }
        if let Some(v) = yaw_inertia {
            p.yaw_inertia = v;
        }
        if let Some(v) = lf {
            p.lf = v;
        }
        if let Some(v) = lr {
            p.lr = v;
        }
        if let Some(v) = track_width {
            p.track_width = v;
        }
        if let Some(v) = wheel_radius {
            p.wheel_radius = v;
        }
        if let Some(v) = t_max {
            p.t_max = v;
        }
        p.validate().map_err(py_err)?;
        Ok(PyVehicleParams { inner: p })
    }

    #[getter]
    fn mass(&self) -> f64 {
        self.inner.mass
    }

    #[getter]
    fn wheel_radius(&self) -> f64 {
        self.inner.wheel_radius
    }

    fn __repr__(&self) -> String {
        format!(
            "VehicleParams(mass={}, lf={}, lr={})",
            self.inner.mass, self.inner.lf, self.inner.lr
        )
    }
}

/// One forward-Euler step of the planar vehicle dynamics.
#[pyfunction]
fn step_dynamics(
    state: State,
    input: Input,
    mu: f64,
    params: &PyVehicleParams,
    ts: f64,
) -> PyResult<State> {
    let s = plant::VehicleState::new(state.0, state.1, state.2);
    let u = plant::ControlInput::new(input.0, input.1);
    let next = plant::step_dynamics(&s, &u, mu, &params.inner, ts).map_err(py_err)?;
    Ok((next.vx, next.vy, next.wr))
}

/// Global-frame kinematic pose update.
#[pyfunction]
fn step_pose(pose: State, state: State, ts: f64) -> State {
    let p = plant::Pose::new(pose.0, pose.1, pose.2);
    let s = plant::VehicleState::new(state.0, state.1, state.2);
    let next = plant::step_pose(&p, &s, ts);
    (next.x, next.y, next.theta)
}

#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: TrajectoryDataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.sequences.len()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner
            .save_json(std::path::Path::new(path))
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: TrajectoryDataset::load_json(std::path::Path::new(path)).map_err(py_err)?,
        })
    }
}

/// Drive excitation maneuvers on the plant and return the dataset.
#[pyfunction]
#[pyo3(signature = (params, maneuvers=100, maneuver_secs=12.0, seed=1, seq_len=10))]
fn collect(
    params: &PyVehicleParams,
    maneuvers: usize,
    maneuver_secs: f64,
    seed: u64,
    seq_len: usize,
) -> PyResult<PyDataset> {
    let spec = ExcitationSpec {
        maneuvers,
        maneuver_secs,
        seq_len,
        ..Default::default()
    };
    Ok(PyDataset {
        inner: collect_dataset(&params.inner, &spec, seed).map_err(py_err)?,
    })
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: KoopmanModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (model, _) = load_checkpoint(std::path::Path::new(path)).map_err(py_err)?;
        Ok(PyModel { inner: model })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.inner, None, std::path::Path::new(path)).map_err(py_err)
    }

    /// (n, m, phi)
    fn dims(&self) -> (usize, usize, usize) {
        (self.inner.dims.n, self.inner.dims.m, self.inner.dims.phi)
    }

    fn q(&self) -> usize {
        self.inner.dims.q()
    }

    fn lift(&self, state: State) -> Vec<f64> {
        let z = self
            .inner
            .lift(&plant::VehicleState::new(state.0, state.1, state.2));
        z.as_slice().to_vec()
    }

    fn project(&self, z: Vec<f64>) -> PyResult<State> {
        let x = self
            .inner
            .project(&DVector::from_vec(z))
            .map_err(py_err)?;
        Ok((x.vx, x.vy, x.wr))
    }

    fn predict_one(&self, z: Vec<f64>, input: Input, w: Vec<f64>) -> PyResult<Vec<f64>> {
        if z.len() != self.inner.dims.q() || w.len() != self.inner.dims.q() {
            return Err(PyValueError::new_err("z and w must have length q"));
        }
        let next = self.inner.predict_one(
            &DVector::from_vec(z),
            &plant::ControlInput::new(input.0, input.1),
            &DVector::from_vec(w),
        );
        Ok(next.as_slice().to_vec())
    }

    fn rollout(&self, x0: State, inputs: Vec<Input>, w: Vec<f64>) -> PyResult<Vec<State>> {
        let us: Vec<plant::ControlInput> = inputs
            .iter()
            .map(|u| plant::ControlInput::new(u.0, u.1))
            .collect();
        let states = self
            .inner
            .rollout(
                &plant::VehicleState::new(x0.0, x0.1, x0.2),
                &us,
                &DVector::from_vec(w),
            )
            .map_err(py_err)?;
        Ok(states.iter().map(|s| (s.vx, s.vy, s.wr)).collect())
    }
}

/// Train a lifted-space model on a dataset.
#[pyfunction]
#[pyo3(signature = (dataset, p_phi=5, epochs=150, batch_size=64, learning_rate=1e-3, seed=1, use_momentum=false, hidden_layers=3, hidden_units=128))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    dataset: &PyDataset,
    p_phi: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    use_momentum: bool,
    hidden_layers: usize,
    hidden_units: usize,
) -> PyResult<PyModel> {
    let cfg = TrainingConfig {
        p_phi,
        epochs,
        batch_size,
        learning_rate,
        seed,
        use_momentum,
        hidden_layers,
        hidden_units,
        ..Default::default()
    };
    let (model, _) = train(&dataset.inner, &cfg).map_err(py_err)?;
    Ok(PyModel { inner: model })
}

/// Grid-design observer gains; returns (beta1, beta2, achieved_rho).
#[pyfunction]
fn design_eso_gains(model: &PyModel, target_rho: f64) -> PyResult<(f64, f64, f64)> {
    let (gains, rho) = design_gains(&model.inner, target_rho).map_err(py_err)?;
    Ok((gains.beta1(), gains.beta2(), rho))
}

/// Closed-loop run of a built-in scenario; returns a metrics dict.
#[pyfunction]
#[pyo3(signature = (scenario, controller, model=None, seed=1, duration=None))]
fn run_scenario(
    py: Python<'_>,
    scenario: &str,
    controller: &str,
    model: Option<&PyModel>,
    seed: u64,
    duration: Option<f64>,
) -> PyResult<PyObject> {
    let mut sc = builtin_scenario(scenario)
        .ok_or_else(|| PyValueError::new_err(format!("unknown scenario '{scenario}'")))?;
    if let Some(d) = duration {
        sc.duration = d;
    }
    let kind: ControllerKind = controller
        .parse()
        .map_err(|e: Error| PyValueError::new_err(format!("{e}")))?;
    let vehicle = plant::VehicleParams::default();
    let gains: Option<EsoGains> = match kind {
        ControllerKind::EsoDkmpc => {
            let m = model.ok_or_else(|| PyValueError::new_err("eso-dkmpc needs a model"))?;
            Some(design_gains(&m.inner, 0.9).map_err(py_err)?.0)
        }
        _ => None,
    };
    let setup = ControllerSetup {
        kind,
        model: model.map(|m| &m.inner),
        gains: gains.as_ref(),
        mpc: MpcConfig::default(),
        kp_long: 800.0,
        lmpc_mu: 0.47,
    };
    let trace = run_closed_loop(&sc, &setup, &vehicle, seed).map_err(py_err)?;
    let metrics = compute_metrics(&trace).map_err(py_err)?;
    let dict = pyo3::types::PyDict::new_bound(py);
    dict.set_item("controller", metrics.controller)?;
    dict.set_item("eY_max", metrics.ey_max)?;
    dict.set_item("eY_avg", metrics.ey_avg)?;
    dict.set_item("eY_rmse", metrics.ey_rmse)?;
    dict.set_item("dphi_max", metrics.dphi_max)?;
    dict.set_item("dphi_avg", metrics.dphi_avg)?;
    dict.set_item("dphi_rmse", metrics.dphi_rmse)?;
    dict.set_item("solve_ms_avg", metrics.solve_ms_avg)?;
    dict.set_item("diverged", metrics.diverged)?;
    dict.set_item("steps", trace.rows.len())?;
    Ok(dict.into())
}

#[pymodule]
fn koopcar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVehicleParams>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(step_dynamics, m)?)?;
    m.add_function(wrap_pyfunction!(step_pose, m)?)?;
    m.add_function(wrap_pyfunction!(collect, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(design_eso_gains, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
