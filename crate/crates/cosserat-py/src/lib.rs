//! Python bindings for the cosserat laboratory: the covering map, the
//! inequality-constant helpers, the closed-form singular pair, the equator
//! quadrature, and a `State` class wrapping grid states with energy,
//! minimization, monotonicity, and (de)serialization.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use cosserat::algebra::{MaterialParams, Mat3, UnitQuat};
use cosserat::analysis;
use cosserat::energy::{total_energy, LoadSpec};
use cosserat::fields::{
    read_state, sample_state, write_state, DomainShape, Grid, GridSpec, GridState, PhiField,
    RotField, UnitQuatRepr,
};
use cosserat::optimize::{minimize as run_minimize, OptimizerParams, StopReason};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn mat_rows(m: &Mat3) -> [[f64; 3]; 3] {
    m.0
}

fn material(mu_e: f64, mu_c: f64, mu_0: f64, p: f64) -> PyResult<MaterialParams> {
    MaterialParams::new(mu_e, mu_c, mu_0, p).map_err(value_err)
}

fn parse_shape(shape: &str) -> PyResult<DomainShape> {
    match shape {
        "cube" => Ok(DomainShape::Cube),
        "ball" => Ok(DomainShape::Ball),
        other => Err(PyValueError::new_err(format!(
            "shape {other:?}: expected \"cube\" or \"ball\""
        ))),
    }
}

fn build_grid(n: usize, extent: f64, shape: &str, puncture_cells: f64) -> PyResult<Grid> {
    if !(puncture_cells.is_finite() && puncture_cells >= 0.0) {
        return Err(PyValueError::new_err(format!(
            "puncture_cells = {puncture_cells} must be finite and >= 0"
        )));
    }
    let mut spec = GridSpec {
        n,
        extent,
        shape: parse_shape(shape)?,
        puncture_radius: 0.0,
    };
    spec.validate().map_err(value_err)?;
    spec.puncture_radius = puncture_cells * spec.spacing();
    Grid::build(spec).map_err(value_err)
}

/// The covering map: quaternion components `[w, x, y, z]` (normalized
/// internally) to a rotation matrix as three rows.
#[pyfunction]
fn cover(q: [f64; 4]) -> PyResult<[[f64; 3]; 3]> {
    let quat = UnitQuat::normalized(q[0], q[1], q[2], q[3]).map_err(value_err)?;
    Ok(mat_rows(cosserat::algebra::cover(&quat).matrix()))
}

/// The inequality constant `kappa(m, p, eps)`.
#[pyfunction]
fn kato_kappa(m: u32, p: f64, eps: f64) -> PyResult<f64> {
    analysis::kato_kappa(m, p, eps).map_err(value_err)
}

/// The closed-form epsilon choice for `kappa(m, p, .)`, clamped to (0, 1].
#[pyfunction]
fn optimal_eps(m: u32, p: f64) -> PyResult<f64> {
    analysis::optimal_eps(m, p).map_err(value_err)
}

/// The pair `(A, B)` whose signs decide admissibility at exponent `p`.
#[pyfunction]
fn nonexistence_coefficients(p: f64, eps: f64) -> PyResult<(f64, f64)> {
    analysis::nonexistence_coefficients(p, eps).map_err(value_err)
}

/// Scan `[p_min, p_max]` and return `{"rows": [...], "threshold": float}`.
#[pyfunction]
fn scan_nonexistence(
    py: Python<'_>,
    p_min: f64,
    p_max: f64,
    step: f64,
) -> PyResult<Py<PyDict>> {
    let report = analysis::scan_nonexistence(p_min, p_max, step).map_err(value_err)?;
    let rows = PyList::empty(py);
    for row in &report.rows {
        let d = PyDict::new(py);
        d.set_item("p", row.p)?;
        d.set_item("eps_star", row.eps_star)?;
        d.set_item("kappa", row.kappa)?;
        d.set_item("coeff_a", row.coeff_a)?;
        d.set_item("coeff_b", row.coeff_b)?;
        d.set_item("admissible", row.admissible)?;
        rows.append(d)?;
    }
    let out = PyDict::new(py);
    out.set_item("rows", rows)?;
    out.set_item("threshold", report.threshold)?;
    Ok(out.unbind())
}

/// Quadrature vs closed form for the equator map's p-energy on the punctured
/// unit ball (`r0 = puncture_cells * h`).
#[pyfunction]
fn equator_energy(py: Python<'_>, n: usize, p: f64, puncture_cells: usize) -> PyResult<Py<PyDict>> {
    let report = analysis::equator_energy(n, p, puncture_cells).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("n", report.n)?;
    out.set_item("p", report.p)?;
    out.set_item("r0", report.r0)?;
    out.set_item("numeric", report.numeric)?;
    out.set_item("closed_form", report.closed_form)?;
    out.set_item("rel_error", report.rel_error)?;
    Ok(out.unbind())
}

/// Closed-form singular pair and its derived fields at a point `x != 0`.
#[pyfunction]
fn singular_bundle(py: Python<'_>, x: [f64; 3], p: f64) -> PyResult<Py<PyDict>> {
    let bundle = analysis::singular_bundle(&x, p).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("phi", bundle.phi)?;
    out.set_item("rot", mat_rows(&bundle.rot))?;
    out.set_item("d_phi", mat_rows(&bundle.d_phi))?;
    let d_rot = PyList::empty(py);
    for k in 0..3 {
        d_rot.append(mat_rows(&bundle.d_rot[k]))?;
    }
    out.set_item("d_rot", d_rot)?;
    out.set_item("lap_phi", bundle.lap_phi)?;
    out.set_item("div_rot", bundle.div_rot)?;
    out.set_item(
        "div_stress_half_frobenius",
        mat_rows(&bundle.div_stress_half_frobenius),
    )?;
    Ok(out.unbind())
}

/// Two-grid residual study of the singular pair; returns the report as a
/// dict with residual norms, observed orders, and the orthogonality defect.
#[pyfunction]
fn verify_singular(py: Python<'_>, n_coarse: usize, p: f64, seed: u64) -> PyResult<Py<PyDict>> {
    let report = analysis::verify_singular(n_coarse, p, seed).map_err(value_err)?;
    let norms = |a: &analysis::AnnulusNorms| -> PyResult<Py<PyDict>> {
        let d = PyDict::new(py);
        d.set_item("phi_max", a.phi_max)?;
        d.set_item("phi_l2", a.phi_l2)?;
        d.set_item("rot_max", a.rot_max)?;
        d.set_item("rot_l2", a.rot_l2)?;
        d.set_item("nodes", a.nodes)?;
        Ok(d.unbind())
    };
    let out = PyDict::new(py);
    out.set_item("n_coarse", report.n_coarse)?;
    out.set_item("n_fine", report.n_fine)?;
    out.set_item("p", report.p)?;
    out.set_item("r0", report.r0)?;
    out.set_item("annulus", report.annulus)?;
    out.set_item("coarse", norms(&report.coarse)?)?;
    out.set_item("fine", norms(&report.fine)?)?;
    out.set_item("order_phi_max", report.order_phi_max)?;
    out.set_item("order_phi_l2", report.order_phi_l2)?;
    out.set_item("order_rot_max", report.order_rot_max)?;
    out.set_item("order_rot_l2", report.order_rot_l2)?;
    out.set_item("min_order", report.min_order())?;
    out.set_item("ortho_max", report.ortho_max)?;
    Ok(out.unbind())
}

/// A discrete configuration (displacement + microrotation on a grid).
#[pyclass]
struct State {
    inner: GridState,
}

#[pymethods]
impl State {
    /// The stress-free configuration `phi(x) = x`, identity rotations.
    #[staticmethod]
    #[pyo3(signature = (n, extent=1.0, shape="ball", puncture_cells=0.0))]
    fn stress_free(n: usize, extent: f64, shape: &str, puncture_cells: f64) -> PyResult<Self> {
        let grid = build_grid(n, extent, shape, puncture_cells)?;
        Ok(State {
            inner: GridState::stress_free(grid),
        })
    }

    /// Sample named closed-form fields: `phi` in {"zero", "identity",
    /// "singular"}, `rot` in {"identity", "singular", "equator"}.
    #[staticmethod]
    #[pyo3(signature = (n, phi, rot, extent=1.0, shape="ball", puncture_cells=3.0))]
    fn sample(
        n: usize,
        phi: &str,
        rot: &str,
        extent: f64,
        shape: &str,
        puncture_cells: f64,
    ) -> PyResult<Self> {
        let grid = build_grid(n, extent, shape, puncture_cells)?;
        let phi_field = match phi {
            "zero" => PhiField::Zero,
            "identity" => PhiField::Identity,
            "singular" => PhiField::Singular,
            other => {
                return Err(PyValueError::new_err(format!(
                    "phi = {other:?}: expected \"zero\", \"identity\", or \"singular\""
                )))
            }
        };
        let rot_field = match rot {
            "identity" => RotField::Constant(UnitQuatRepr([1.0, 0.0, 0.0, 0.0])),
            "singular" => RotField::Singular,
            "equator" => RotField::Equator,
            other => {
                return Err(PyValueError::new_err(format!(
                    "rot = {other:?}: expected \"identity\", \"singular\", or \"equator\""
                )))
            }
        };
        let inner = sample_state(&grid, &phi_field, &rot_field).map_err(value_err)?;
        Ok(State { inner })
    }

    /// Read a state written by `save` (or by the command-line `minimize`).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = read_state(std::path::Path::new(path)).map_err(value_err)?;
        Ok(State { inner })
    }

    /// Write the state as JSON.
    fn save(&self, path: &str) -> PyResult<()> {
        write_state(&self.inner, std::path::Path::new(path)).map_err(runtime_err)
    }

    /// Nodes per axis.
    #[getter]
    fn n(&self) -> usize {
        self.inner.grid.n()
    }

    /// Grid spacing.
    #[getter]
    fn h(&self) -> f64 {
        self.inner.grid.h()
    }

    /// Number of active (in-domain) nodes.
    #[getter]
    fn active_count(&self) -> usize {
        self.inner.grid.active_count()
    }

    /// Energy breakdown under the given constants, as a dict with keys
    /// translational / curvature / force / moment / total.
    #[pyo3(signature = (mu_e=1.0, mu_c=1.0, mu_0=1.0/9.0, p=2.0))]
    fn energy(
        &self,
        py: Python<'_>,
        mu_e: f64,
        mu_c: f64,
        mu_0: f64,
        p: f64,
    ) -> PyResult<Py<PyDict>> {
        let c = material(mu_e, mu_c, mu_0, p)?;
        let breakdown = total_energy(&self.inner, &c, &LoadSpec::default()).map_err(value_err)?;
        let out = PyDict::new(py);
        out.set_item("translational", breakdown.translational)?;
        out.set_item("curvature", breakdown.curvature)?;
        out.set_item("force", breakdown.force)?;
        out.set_item("moment", breakdown.moment)?;
        out.set_item("total", breakdown.total)?;
        Ok(out.unbind())
    }

    /// Run projected gradient descent from this state; returns a new `State`
    /// and a summary dict (reason, iterations, initial/final energy).
    #[pyo3(signature = (mu_e=1.0, mu_c=1.0, mu_0=1.0/9.0, p=2.0, max_iters=500, grad_tol=1e-8))]
    #[allow(clippy::too_many_arguments)]
    fn minimize(
        &self,
        py: Python<'_>,
        mu_e: f64,
        mu_c: f64,
        mu_0: f64,
        p: f64,
        max_iters: usize,
        grad_tol: f64,
    ) -> PyResult<(State, Py<PyDict>)> {
        let c = material(mu_e, mu_c, mu_0, p)?;
        let params = OptimizerParams {
            max_iters,
            grad_tol,
            ..OptimizerParams::default()
        };
        let result =
            run_minimize(&self.inner, &c, &LoadSpec::default(), &params).map_err(value_err)?;
        let summary = PyDict::new(py);
        summary.set_item(
            "reason",
            match result.reason {
                StopReason::Converged => "converged",
                StopReason::MaxIters => "max_iters",
                StopReason::LineSearchFailed => "line_search_failed",
            },
        )?;
        summary.set_item("iterations", result.trace.len().saturating_sub(1))?;
        summary.set_item("initial_energy", result.trace.first().map(|r| r.energy))?;
        summary.set_item("final_energy", result.final_energy.total)?;
        Ok((
            State {
                inner: result.state,
            },
            summary.unbind(),
        ))
    }

    /// Scaled energy profile around `center`: dict with radii, profile,
    /// deficits, and the pointwise density minimum `q_min`.
    #[pyo3(signature = (radii, center=[0.0, 0.0, 0.0], mu_e=1.0, mu_c=1.0, mu_0=1.0/9.0, p=2.0))]
    #[allow(clippy::too_many_arguments)]
    fn monotonicity(
        &self,
        py: Python<'_>,
        radii: Vec<f64>,
        center: [f64; 3],
        mu_e: f64,
        mu_c: f64,
        mu_0: f64,
        p: f64,
    ) -> PyResult<Py<PyDict>> {
        let c = material(mu_e, mu_c, mu_0, p)?;
        let report = analysis::monotonicity_profile(&self.inner, &c, &center, &radii)
            .map_err(value_err)?;
        let out = PyDict::new(py);
        out.set_item("radii", report.radii)?;
        out.set_item("profile", report.phi_profile)?;
        out.set_item("deficits", report.deficits)?;
        out.set_item("q_min", report.q_min)?;
        Ok(out.unbind())
    }

    fn __repr__(&self) -> String {
        format!(
            "State(n={}, active={}, h={})",
            self.inner.grid.n(),
            self.inner.grid.active_count(),
            self.inner.grid.h()
        )
    }
}

#[pymodule]
fn cosserat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cover, m)?)?;
    m.add_function(wrap_pyfunction!(kato_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_eps, m)?)?;
    m.add_function(wrap_pyfunction!(nonexistence_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(scan_nonexistence, m)?)?;
    m.add_function(wrap_pyfunction!(equator_energy, m)?)?;
    m.add_function(wrap_pyfunction!(singular_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(verify_singular, m)?)?;
    m.add_class::<State>()?;
    Ok(())
}
