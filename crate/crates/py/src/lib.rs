//! Python bindings: meshes, simulations, experiment drivers and a few
//! diagnostics helpers.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vvda_core::assembly;
use vvda_core::diagnostics::{self, Reference, StepRecord};
use vvda_core::experiments::{execute, Command, ExperimentSpec};
use vvda_core::femspace::{BcMode, FunctionSpace};
use vvda_core::mesh::{self, Rect};
use vvda_core::scheme::{InitialCondition, SchemeConfig, SchemeKind, SchemeState, Simulation as CoreSimulation};
use vvda_core::truth::{ManufacturedCase, Quiescent, Truth};
use vvda_core::Error;

create_exception!(vvda, SolverError, PyException);
create_exception!(vvda, BlowUpError, SolverError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Parse(_) | Error::Unsupported(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::BlowUp(_) => BlowUpError::new_err(e.to_string()),
        _ => SolverError::new_err(e.to_string()),
    }
}

fn bc_mode(s: &str) -> PyResult<BcMode> {
    s.parse().map_err(to_py)
}

/// Structured triangulation of the unit square, or of the `2 pi` box when periodic.
#[pyclass(frozen, skip_from_py_object, module = "vvda")]
#[derive(Clone)]
pub struct Mesh {
    inner: Arc<mesh::Mesh>,
}

#[pymethods]
impl Mesh {
    #[new]
    #[pyo3(signature = (n, periodic = false))]
    fn new(n: usize, periodic: bool) -> PyResult<Self> {
        let domain = if periodic { Rect::periodic_box() } else { Rect::unit_square() };
        let inner = mesh::generate_structured(n, domain, periodic).map_err(to_py)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    /// Reads the plain-text mesh format.
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(mesh::read_mesh(path).map_err(to_py)?) })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        mesh::write_mesh(&self.inner, path).map_err(to_py)
    }

    fn refined(&self) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(mesh::refine_uniform(&self.inner).map_err(to_py)?) })
    }

    #[getter]
    fn num_triangles(&self) -> usize {
        self.inner.num_triangles()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    #[getter]
    fn periodic(&self) -> bool {
        self.inner.is_periodic()
    }

    #[getter]
    fn vertices(&self) -> Vec<(f64, f64)> {
        self.inner.vertices().iter().map(|p| (p[0], p[1])).collect()
    }

    #[getter]
    fn triangles(&self) -> Vec<(usize, usize, usize)> {
        self.inner.triangles().iter().map(|t| (t[0], t[1], t[2])).collect()
    }

    fn total_area(&self) -> f64 {
        self.inner.total_area()
    }

    fn __repr__(&self) -> String {
        format!("Mesh(triangles={}, h={:.4}, periodic={})", self.inner.num_triangles(), self.inner.h(), self.inner.is_periodic())
    }
}

fn record_dict<'py>(py: Python<'py>, r: &StepRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("n", r.n)?;
    d.set_item("t", r.t)?;
    d.set_item("err_v_l2", r.err_v_l2)?;
    d.set_item("err_w_l2", r.err_w_l2)?;
    d.set_item("err_v_h1", r.err_v_h1)?;
    d.set_item("err_w_h1", r.err_w_h1)?;
    d.set_item("norm_v_l2", r.norm_v_l2)?;
    d.set_item("norm_w_l2", r.norm_w_l2)?;
    d.set_item("norm_v_h1", r.norm_v_h1)?;
    d.set_item("norm_w_h1", r.norm_w_h1)?;
    d.set_item("div_res", r.div_res)?;
    Ok(d)
}

/// One time-stepping run: velocity-vorticity scheme with optional nudging.
///
/// `problem` is "manufactured" (closed-form truth, also the observation
/// source) or "zero" (no forcing).
#[pyclass(unsendable, module = "vvda")]
pub struct Simulation {
    sim: CoreSimulation,
    state: SchemeState,
    problem: Arc<dyn Truth>,
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (mesh, scheme = "bdf2", dt = 0.001, nu = 1.0, final_time = 1.0, mu1 = 0.0, mu2 = 0.0, problem = "manufactured", initial = "zero"))]
    #[allow(clippy::too_many_arguments)]
    fn new(mesh: &Mesh, scheme: &str, dt: f64, nu: f64, final_time: f64, mu1: f64, mu2: f64, problem: &str, initial: &str) -> PyResult<Self> {
        let periodic = mesh.inner.is_periodic();
        let bc = if periodic { BcMode::Periodic } else { BcMode::Dirichlet };
        let scheme: SchemeKind = scheme.parse().map_err(to_py)?;
        let truth: Arc<dyn Truth> = match (problem, periodic) {
            ("zero", _) => Arc::new(Quiescent),
            ("manufactured", true) => Arc::new(ManufacturedCase::periodic(nu)),
            ("manufactured", false) => Arc::new(ManufacturedCase::unit_square(nu)),
            _ => return Err(PyValueError::new_err(format!("unknown problem '{problem}'"))),
        };
        let ic = match initial {
            "zero" => InitialCondition::Zero,
            "truth" => InitialCondition::Truth,
            _ => return Err(PyValueError::new_err(format!("unknown initial condition '{initial}'"))),
        };
        let cfg = SchemeConfig::new(scheme, dt, nu, final_time, bc).with_nudging(mu1, mu2);
        let sim = CoreSimulation::new(mesh.inner.clone(), cfg, truth.clone()).map_err(to_py)?;
        let state = sim.initial_state(&ic).map_err(to_py)?;
        Ok(Self { sim, state, problem: truth })
    }

    /// Advances one step.
    fn step(&mut self) -> PyResult<()> {
        let next = self.sim.step(&self.state).map_err(to_py)?;
        if next.v_now.coeffs.iter().chain(&next.w_now.coeffs).any(|x| !x.is_finite()) {
            return Err(BlowUpError::new_err(format!("non-finite state at t = {}", next.t)));
        }
        self.state = next;
        Ok(())
    }

    /// Runs to the final time from the current state; returns one dict per recorded step.
    #[pyo3(signature = (stride = 1))]
    fn run<'py>(&mut self, py: Python<'py>, stride: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        if stride == 0 {
            return Err(PyValueError::new_err("stride must be at least 1"));
        }
        let steps = self.sim.num_steps();
        let mut rows = Vec::new();
        while self.state.n < steps {
            self.step()?;
            if self.state.n % stride == 0 || self.state.n == steps {
                rows.push(self.measure(py)?);
            }
        }
        Ok(rows)
    }

    /// Error and norm record of the current state.
    fn measure<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let reference = Reference::Analytic(self.problem.clone());
        let div = self.sim.divergence_residual(&self.state.v_now);
        let r = diagnostics::measure(&self.state, &reference, div).map_err(to_py)?;
        record_dict(py, &r)
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn n(&self) -> usize {
        self.state.n
    }

    #[getter]
    fn num_steps(&self) -> usize {
        self.sim.num_steps()
    }

    /// Velocity coefficients, component-interleaved per node.
    fn velocity(&self) -> Vec<f64> {
        self.state.v_now.coeffs.clone()
    }

    fn vorticity(&self) -> Vec<f64> {
        self.state.w_now.coeffs.clone()
    }

    fn pressure(&self) -> Vec<f64> {
        self.state.p_now.coeffs.clone()
    }

    /// Velocity value at a point, or `None` outside the mesh.
    fn velocity_at(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self.state.v_now.eval([x, y]).map(|v| (v[0], v[1]))
    }

    fn divergence_residual(&self) -> f64 {
        self.sim.divergence_residual(&self.state.v_now)
    }
}

/// Runs a command-line experiment (`convergence`, `decay`, `stability` or
/// `twin`) with `key=value` settings as keyword arguments; returns its summary.
#[pyfunction]
#[pyo3(signature = (command, **settings))]
fn run_experiment(command: &str, settings: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let command: Command = command.parse().map_err(to_py)?;
    let mut map = BTreeMap::new();
    if let Some(s) = settings {
        for (k, v) in s.iter() {
            let key: String = k.extract()?;
            map.insert(key.replace('_', "-").replace("final-time", "T"), v.str()?.to_string());
        }
    }
    let spec = ExperimentSpec::from_map(command, &map).map_err(to_py)?;
    execute(&spec).map_err(to_py)
}

/// Pairwise `log2` convergence rates from `(h, err_v, err_w)` rows; `None` marks an undefined rate.
#[pyfunction]
fn fit_rates(levels: Vec<(f64, f64, f64)>) -> PyResult<Vec<(f64, f64, Option<f64>, f64, Option<f64>)>> {
    let t = diagnostics::fit_rates(&levels).map_err(to_py)?;
    Ok(t.rows.iter().map(|r| (r.h, r.err_v, r.rate_v, r.err_w, r.rate_w)).collect())
}

/// Closed-form manufactured flow at a point: velocity, pressure, vorticity and forcing.
#[pyfunction]
#[pyo3(signature = (x, y, t, nu = 1.0, periodic = false))]
fn manufactured<'py>(py: Python<'py>, x: f64, y: f64, t: f64, nu: f64, periodic: bool) -> PyResult<Bound<'py, PyDict>> {
    let c = if periodic { ManufacturedCase::periodic(nu) } else { ManufacturedCase::unit_square(nu) };
    let d = PyDict::new(py);
    let u = c.velocity(x, y, t);
    let f = c.forcing(x, y, t);
    d.set_item("velocity", (u[0], u[1]))?;
    d.set_item("pressure", c.pressure(x, y, t))?;
    d.set_item("vorticity", c.vorticity(x, y, t))?;
    d.set_item("forcing", (f[0], f[1]))?;
    d.set_item("rot_forcing", c.rot_forcing(x, y, t))?;
    Ok(d)
}

/// Assembled operator in CSR form `(indptr, indices, data, (rows, cols))`.
type Csr = (Vec<usize>, Vec<usize>, Vec<f64>, (usize, usize));

fn csr(m: &vvda_core::sparse::SparseMatrix) -> Csr {
    let p = m.pattern();
    (p.row_ptr.clone(), p.col_idx.clone(), m.values.clone(), (m.nrows(), m.ncols()))
}

/// Mass, stiffness or divergence matrix on `mesh`.
///
/// `kind` is "mass" or "stiffness" (with `degree`, `components`) or
/// "divergence" (P2 velocity against P1 pressure).
#[pyfunction]
#[pyo3(signature = (mesh, kind, degree = 2, components = 1))]
fn assemble(mesh: &Mesh, kind: &str, degree: usize, components: usize) -> PyResult<Csr> {
    let bc = if mesh.inner.is_periodic() { "periodic" } else { "none" };
    let space = |d, c| FunctionSpace::new(mesh.inner.clone(), d, c, bc_mode(bc)?, false).map_err(to_py);
    let m = match kind {
        "mass" => assembly::assemble_mass(&space(degree, components)?),
        "stiffness" => assembly::assemble_stiffness(&space(degree, components)?),
        "divergence" => assembly::assemble_divergence(&space(2, 2)?, &space(1, 1)?).map_err(to_py)?,
        _ => return Err(PyValueError::new_err(format!("unknown operator '{kind}'"))),
    };
    Ok(csr(&m))
}

#[pymodule(name = "vvda")]
pub fn vvda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rates, m)?)?;
    m.add_function(wrap_pyfunction!(manufactured, m)?)?;
    m.add_function(wrap_pyfunction!(assemble, m)?)?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add("BlowUpError", m.py().get_type::<BlowUpError>())?;
    Ok(())
}
