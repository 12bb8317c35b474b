//! Python bindings.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::rotorbit::dual::{DescentOptions, DualProblem};
use ::rotorbit::hamiltonian::{Ellipsoid, GaugeProblem, HamiltonianFn, Opaque, PlaneQuartic, RawHamiltonian};
use ::rotorbit::io::{matrix_from_rows, matrix_to_rows};
use ::rotorbit::loops::{analyze, build_grid, RotatingLoop};
use ::rotorbit::runner::{self, exit_code, NormalFormReport, ProblemSpec};
use ::rotorbit::symplectic::{parse_preset, tilde_angles, SymplecticRotation, C64, DEFAULT_TOL};

fn py_err(e: ::rotorbit::Error) -> PyErr {
    if exit_code(&e) == 2 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for ::rotorbit::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_python<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    matrix_from_rows(&rows).py()
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn list(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// A validated symplectic-orthogonal matrix with its rotation normal form.
#[pyclass(name = "SymplecticRotation", frozen)]
struct PyRotation {
    inner: Arc<SymplecticRotation>,
}

#[pymethods]
impl PyRotation {
    #[new]
    #[pyo3(signature = (q, tol = DEFAULT_TOL))]
    fn new(q: Vec<Vec<f64>>, tol: f64) -> PyResult<Self> {
        let inner = SymplecticRotation::with_tolerance(&matrix(q)?, tol).py()?;
        Ok(Self { inner: Arc::new(inner) })
    }

    /// `identity`, `neg-identity` or `rotation:[θ₁,…]`.
    #[staticmethod]
    #[pyo3(signature = (name, n = None))]
    fn from_preset(name: &str, n: Option<usize>) -> PyResult<Self> {
        let q = parse_preset(name, n).py()?;
        Ok(Self {
            inner: Arc::new(SymplecticRotation::new(&q).py()?),
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta().to_vec()
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.q())
    }

    #[getter]
    fn p(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.p())
    }

    /// `(θ̃ values ascending, plane of each)`.
    fn tilde_angles(&self) -> (Vec<f64>, Vec<usize>) {
        let t = tilde_angles(&self.inner);
        (t.values, t.planes)
    }

    fn frames(&self) -> Vec<Vec<C64>> {
        self.inner.frames().iter().map(|v| v.iter().copied().collect()).collect()
    }

    fn defects(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_python(py, &self.inner.defects())
    }

    fn rotation_path(&self, t: f64, period: f64) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.rotation_path(t, period))
    }

    /// `(𝒫v, L_𝒫⁻¹(v − 𝒫v))`
    fn fixed_projection(&self, v: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = self.inner.fixed_projection(&vector(v));
        (list(&a), list(&b))
    }

    fn __repr__(&self) -> String {
        format!("SymplecticRotation(n={}, theta={:?})", self.inner.n(), self.inner.theta())
    }
}

/// The q-homogeneous gauge Hamiltonian of a convex energy surface and its conjugate.
#[pyclass(name = "Gauge", frozen)]
struct PyGauge {
    inner: Arc<GaugeProblem>,
}

fn gauge_from(func: Arc<dyn HamiltonianFn>, q: Vec<Vec<f64>>, beta: f64, q_exp: f64) -> PyResult<PyGauge> {
    let raw = RawHamiltonian::new(func, beta, matrix(q)?).py()?;
    Ok(PyGauge {
        inner: Arc::new(GaugeProblem::new(raw, q_exp).py()?),
    })
}

#[pymethods]
impl PyGauge {
    /// `H = ½ Σ zᵢ²/aᵢ²` with `n` or `2n` axes; `generic` hides the closed forms.
    #[staticmethod]
    #[pyo3(signature = (axes, q, beta = 0.5, q_exp = 4.0 / 3.0, generic = false))]
    fn ellipsoid(axes: Vec<f64>, q: Vec<Vec<f64>>, beta: f64, q_exp: f64, generic: bool) -> PyResult<Self> {
        let n = q.len() / 2;
        let e = Ellipsoid::new(&axes, n).py()?;
        let func: Arc<dyn HamiltonianFn> = if generic { Arc::new(Opaque(e)) } else { Arc::new(e) };
        gauge_from(func, q, beta, q_exp)
    }

    /// `H = Σ ½ωⱼρⱼ² + ερⱼ⁴` with `ρⱼ` the radius in plane `j`.
    #[staticmethod]
    #[pyo3(signature = (omega, epsilon, q, beta = 0.5, q_exp = 4.0 / 3.0))]
    fn plane_quartic(omega: Vec<f64>, epsilon: f64, q: Vec<Vec<f64>>, beta: f64, q_exp: f64) -> PyResult<Self> {
        gauge_from(Arc::new(PlaneQuartic::new(omega, epsilon).py()?), q, beta, q_exp)
    }

    #[getter]
    fn q_exp(&self) -> f64 {
        self.inner.q()
    }

    #[getter]
    fn p_exp(&self) -> f64 {
        self.inner.p()
    }

    fn value(&self, z: Vec<f64>) -> PyResult<f64> {
        self.inner.value(&vector(z)).py()
    }

    fn gradient(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(list(&self.inner.gauge_eval(&vector(z)).py()?.1))
    }

    /// `(H*(y), ∇H*(y))`
    fn legendre(&self, y: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let (v, g) = self.inner.legendre(&vector(y)).py()?;
        Ok((v, list(&g)))
    }

    /// `(h_C(y), maximizer)`
    fn support(&self, y: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let (v, g) = self.inner.support(&vector(y)).py()?;
        Ok((v, list(&g)))
    }

    fn radial(&self, direction: Vec<f64>) -> PyResult<f64> {
        self.inner.radial(&vector(direction)).py()
    }

    #[pyo3(signature = (samples = 256, seed = 0))]
    fn pinch(&self, py: Python<'_>, samples: usize, seed: u64) -> PyResult<Py<PyAny>> {
        to_python(py, &self.inner.pinch_estimate(samples, seed).py()?)
    }

    #[pyo3(signature = (samples = 64, tol_sym = 1e-8, seed = 0))]
    fn check_hypotheses(&self, py: Python<'_>, samples: usize, tol_sym: f64, seed: u64) -> PyResult<Py<PyAny>> {
        to_python(py, &self.inner.check_hypotheses(samples, tol_sym, seed).py()?)
    }
}

/// A Q-rotating loop stored by its twisted Fourier coefficients.
#[pyclass(name = "Loop", frozen)]
struct PyLoop {
    inner: RotatingLoop,
}

#[pymethods]
impl PyLoop {
    /// Zero loop (or the given coefficients) on the grid `|k| ≤ k_max`.
    #[new]
    #[pyo3(signature = (rotation, period, k_max, coeffs = None))]
    fn new(rotation: &PyRotation, period: f64, k_max: usize, coeffs: Option<Vec<C64>>) -> PyResult<Self> {
        let grid = build_grid(&rotation.inner, period, k_max).py()?;
        let inner = match coeffs {
            Some(c) => RotatingLoop::from_coeffs(grid, c).py()?,
            None => RotatingLoop::zeros(grid),
        };
        Ok(Self { inner })
    }

    /// Project uniform samples `z(mT/N)` (one row each) onto the grid.
    #[staticmethod]
    fn analyze(samples: Vec<Vec<f64>>, rotation: &PyRotation, period: f64, k_max: usize) -> PyResult<Self> {
        let grid = build_grid(&rotation.inner, period, k_max).py()?;
        Ok(Self {
            inner: analyze(&matrix(samples)?, &grid).py()?,
        })
    }

    /// `(plane, k, ω)` of every coefficient.
    fn entries(&self) -> Vec<(usize, i64, f64)> {
        self.inner.grid().entries().iter().map(|e| (e.plane, e.k, e.omega)).collect()
    }

    #[getter]
    fn coeffs(&self) -> Vec<C64> {
        self.inner.coeffs().to_vec()
    }

    #[getter]
    fn period(&self) -> f64 {
        self.inner.grid().period()
    }

    fn synthesize(&self, samples: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&self.inner.synthesize(samples).py()?))
    }

    fn eval_at(&self, t: f64) -> Vec<f64> {
        list(&self.inner.eval_at(t))
    }

    fn apply_k(&self) -> Self {
        Self {
            inner: self.inner.apply_k(),
        }
    }

    fn shift(&self, s: f64) -> Self {
        Self {
            inner: self.inner.shift(s),
        }
    }

    fn scale(&self, a: f64) -> Self {
        Self {
            inner: self.inner.scale(a),
        }
    }

    /// `self + a·other`
    fn axpy(&self, a: f64, other: &PyLoop) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.axpy(a, &other.inner).py()?,
        })
    }

    fn pairing(&self, other: &PyLoop) -> PyResult<f64> {
        self.inner.pairing(&other.inner).py()
    }

    fn quadratic_form(&self) -> f64 {
        self.inner.quadratic_form()
    }

    fn l2_norm(&self) -> f64 {
        self.inner.l2_norm()
    }

    fn __len__(&self) -> usize {
        self.inner.coeffs().len()
    }
}

/// The discretized dual action of a gauge on a frequency grid.
#[pyclass(name = "DualProblem", frozen)]
struct PyDual {
    inner: DualProblem,
}

#[pymethods]
impl PyDual {
    #[new]
    fn new(gauge: &PyGauge, rotation: &PyRotation, period: f64, k_max: usize, samples: usize) -> PyResult<Self> {
        let grid = build_grid(&rotation.inner, period, k_max).py()?;
        Ok(Self {
            inner: DualProblem::new(gauge.inner.clone(), grid, samples).py()?,
        })
    }

    fn energy(&self, y: &PyLoop) -> PyResult<f64> {
        self.inner.energy(&y.inner).py()
    }

    fn gradient(&self, y: &PyLoop) -> PyResult<PyLoop> {
        Ok(PyLoop {
            inner: self.inner.gradient(&y.inner).py()?,
        })
    }

    /// Single-mode seed in `plane`, scaled to the critical radius.
    fn seed(&self, plane: usize) -> PyResult<PyLoop> {
        Ok(PyLoop {
            inner: self.inner.seed(plane).py()?,
        })
    }

    /// Descend from `y`; returns the final loop and a summary dict.
    #[pyo3(signature = (y, gtol = 1e-9, max_iter = 5000))]
    fn descend(&self, py: Python<'_>, y: &PyLoop, gtol: f64, max_iter: usize) -> PyResult<(PyLoop, Py<PyAny>)> {
        let opts = DescentOptions {
            gtol,
            max_iter,
            ..DescentOptions::default()
        };
        let st = self.inner.descend(&y.inner, &opts).py()?;
        let info = serde_json::json!({
            "status": st.status,
            "energy": st.energy,
            "grad_norm": st.grad_norm,
            "iterations": st.iterations,
            "accepted_steps": st.accepted_steps,
        });
        Ok((PyLoop { inner: st.y }, to_python(py, &info)?))
    }

    /// Orbit `z = ∇H*(y) (+ z₀)` sampled on the quadrature grid.
    #[pyo3(signature = (y, rtol = 1e-6))]
    fn recover(&self, py: Python<'_>, y: &PyLoop, rtol: f64) -> PyResult<Py<PyAny>> {
        let r = self.inner.recover(&y.inner, rtol).py()?;
        let out = serde_json::json!({
            "samples": matrix_to_rows(&r.samples),
            "z0": list(&r.z0),
            "residual": r.residual,
            "period": r.period,
            "energy": r.energy,
            "energy_spread": r.energy_spread,
            "critical": r.critical,
        });
        to_python(py, &out)
    }
}

/// Normal form of a preset name or dense matrix rows.
#[pyfunction]
#[pyo3(signature = (q, n = None, tol = DEFAULT_TOL))]
fn normal_form(py: Python<'_>, q: &Bound<'_, PyAny>, n: Option<usize>, tol: f64) -> PyResult<Py<PyAny>> {
    let m = if let Ok(name) = q.extract::<String>() {
        parse_preset(&name, n).py()?
    } else {
        matrix(q.extract()?)?
    };
    let sr = SymplecticRotation::with_tolerance(&m, tol).py()?;
    to_python(py, &NormalFormReport::new(&sr))
}

/// Run the pipeline in memory on a JSON problem description; returns the report.
#[pyfunction]
fn solve(py: Python<'_>, spec_json: &str) -> PyResult<Py<PyAny>> {
    let spec = ProblemSpec::from_json(spec_json).py()?;
    let out = py.detach(|| runner::solve(&spec)).py()?;
    to_python(py, &out.report)
}

/// Run the pipeline and write all output files into `output_dir`.
#[pyfunction]
fn run_solve(py: Python<'_>, spec_json: &str, output_dir: &str) -> PyResult<Py<PyAny>> {
    let spec = ProblemSpec::from_json(spec_json).py()?;
    let dir = Path::new(output_dir).to_path_buf();
    let out = py.detach(|| runner::run_solve(&spec, &dir)).py()?;
    to_python(py, &out.report)
}

/// Re-check a solve output directory.
#[pyfunction]
fn run_verify(py: Python<'_>, output_dir: &str) -> PyResult<Py<PyAny>> {
    let dir = Path::new(output_dir).to_path_buf();
    let report = py.detach(|| runner::run_verify(&dir)).py()?;
    to_python(py, &report)
}

#[pymodule]
#[pyo3(name = "rotorbit")]
fn rotorbit_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRotation>()?;
    m.add_class::<PyGauge>()?;
    m.add_class::<PyLoop>()?;
    m.add_class::<PyDual>()?;
    m.add_function(wrap_pyfunction!(normal_form, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
