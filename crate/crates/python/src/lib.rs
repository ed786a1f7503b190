//! Python bindings: ground a template, lift it, and compute TRW bounds.

// pyo3 0.22 macro expansion trips this lint on every PyResult method
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

use lifted_trw::model::{ground, parse_model, PairwiseGroundModel, TemplatedModel};
use lifted_trw::polytope::OuterBound;
use lifted_trw::spanning::{init_rho_uniform, lifted_kruskal, lifted_tree_value, optimize_rho};
use lifted_trw::symmetry::{compute_orbits, LiftedGraph};
use lifted_trw::trw::{entropy_coefficients, frank_wolfe, FwOptions, TrwResult};
use lifted_trw::{fixtures, oracle, validate};

fn err(e: lifted_trw::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn outer_bound(name: &str) -> PyResult<OuterBound> {
    name.parse().map_err(err)
}

/// A templated model (or the fixed ten-node ring), ready to ground.
#[pyclass(name = "Model", module = "lifted_trw")]
#[derive(Clone)]
struct PyModel {
    template: Option<TemplatedModel>,
}

#[pymethods]
impl PyModel {
    /// Parses model text.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { template: Some(parse_model(text).map_err(err)?) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyFileNotFoundError::new_err(format!("{path}: {e}")))?;
        Self::parse(&text)
    }

    /// `complete-graph`, `friends-smokers`, `clique-cycle` or `ring`.
    #[staticmethod]
    fn bundled(name: &str) -> PyResult<Self> {
        if name == "ring" {
            return Ok(Self { template: None });
        }
        let text = fixtures::model_text(name).ok_or_else(|| PyValueError::new_err(format!("unknown bundled model `{name}`")))?;
        Self::parse(text)
    }

    /// Grounds over `n` constants with parametric weight `w` (`n` is ignored by the ring).
    #[pyo3(signature = (n, w = 0.0))]
    fn ground(&self, n: usize, w: f64) -> PyResult<PyGroundModel> {
        let g = match &self.template {
            None => fixtures::ring(w),
            Some(m) => ground(m, n, w).map_err(err)?,
        };
        Ok(PyGroundModel { g })
    }
}

#[pyclass(name = "GroundModel", module = "lifted_trw")]
#[derive(Clone)]
struct PyGroundModel {
    g: PairwiseGroundModel,
}

#[pymethods]
impl PyGroundModel {
    #[getter]
    fn num_nodes(&self) -> usize {
        self.g.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.g.num_edges()
    }

    fn node_labels(&self) -> Vec<String> {
        (0..self.g.num_nodes()).map(|i| self.g.node_label(i)).collect()
    }

    /// Orbit partition and lifted parameters.
    fn lift(&self) -> PyResult<PyLiftedGraph> {
        Ok(PyLiftedGraph { lg: compute_orbits(&self.g).map_err(err)?, g: self.g.clone() })
    }

    /// Exact `(log Z, [Pr(x_i = 1)])` by enumeration.
    fn brute_force(&self) -> PyResult<(f64, Vec<f64>)> {
        let exact = oracle::brute_force(&self.g).map_err(err)?;
        Ok((exact.log_z, exact.node_marginals.iter().map(|m| m.get(1).copied().unwrap_or(0.0)).collect()))
    }

    /// Ground TRW bound with per-ground-edge appearances `rho` (local or cycle only).
    #[pyo3(signature = (rho, outer = "local", tol = 1e-4, max_iters = 1000, away_steps = false))]
    fn trw(&self, rho: Vec<f64>, outer: &str, tol: f64, max_iters: usize, away_steps: bool) -> PyResult<PyTrwResult> {
        if rho.len() != self.g.num_edges() {
            return Err(PyValueError::new_err(format!("expected {} edge appearances, got {}", self.g.num_edges(), rho.len())));
        }
        let opts = FwOptions { tol, max_iters, away_steps, ..FwOptions::default() };
        let res = oracle::ground_trw(&self.g, &rho, outer_bound(outer)?, &opts).map_err(err)?;
        Ok(PyTrwResult::new(res, rho))
    }
}

#[pyclass(name = "LiftedGraph", module = "lifted_trw")]
struct PyLiftedGraph {
    lg: LiftedGraph,
    g: PairwiseGroundModel,
}

#[pymethods]
impl PyLiftedGraph {
    #[getter]
    fn num_vars(&self) -> usize {
        self.lg.num_vars()
    }

    /// `(pattern, size, is_aux)` per node orbit.
    fn node_orbits(&self) -> Vec<(String, usize, bool)> {
        self.lg.nodes.iter().map(|v| (v.pattern.clone(), v.size, v.is_aux)).collect()
    }

    /// `(pattern, size, (tail orbit, head orbit))` per edge orbit.
    fn edge_orbits(&self) -> Vec<(String, usize, (usize, usize))> {
        self.lg.edges.iter().map(|e| (e.pattern.clone(), e.size, (e.ends[0], e.ends[1]))).collect()
    }

    /// Symmetric edge appearances closest to uniform.
    fn uniform_rho(&self) -> PyResult<Vec<f64>> {
        init_rho_uniform(&self.lg, &self.g).map_err(err)
    }

    /// Edge appearances of a maximum spanning tree for orbit weights `w`,
    /// with the tree's total weight.
    fn kruskal(&self, w: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        if w.len() != self.lg.edges.len() {
            return Err(PyValueError::new_err(format!("expected {} orbit weights, got {}", self.lg.edges.len(), w.len())));
        }
        let rho = lifted_kruskal(&self.lg, &self.g, &w).map_err(err)?;
        let value = lifted_tree_value(&self.lg, &rho, &w);
        Ok((rho, value))
    }

    /// Node and edge entropy coefficients of the lifted bound.
    fn entropy_coefficients(&self, rho: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        entropy_coefficients(&self.lg, &rho)
    }

    /// Per-ground-edge appearances of a lifted `rho`.
    fn expand_rho(&self, rho: Vec<f64>) -> Vec<f64> {
        oracle::expand_rho(&self.lg, &rho)
    }

    /// Lifted TRW bound. `rho` defaults to `uniform_rho()`; `optimize_rho`
    /// additionally descends the bound over edge appearances.
    #[pyo3(signature = (outer = "local", rho = None, tol = 1e-4, max_iters = 1000, away_steps = false, optimize_rho = false))]
    fn infer(&self, outer: &str, rho: Option<Vec<f64>>, tol: f64, max_iters: usize, away_steps: bool, optimize_rho: bool) -> PyResult<PyTrwResult> {
        let outer = outer_bound(outer)?;
        let opts = FwOptions { tol, max_iters, away_steps, ..FwOptions::default() };
        let rho = match rho {
            Some(r) if r.len() != self.lg.edges.len() => {
                return Err(PyValueError::new_err(format!("expected {} orbit appearances, got {}", self.lg.edges.len(), r.len())));
            }
            Some(r) => r,
            None => self.uniform_rho()?,
        };
        let (rho, res) = if optimize_rho {
            self::optimize_rho(&self.lg, &self.g, outer, &rho, 20, &opts).map_err(err)?
        } else {
            let res = frank_wolfe(&self.lg, &self.g, outer, &rho, &opts).map_err(err)?;
            (rho, res)
        };
        Ok(PyTrwResult::new(res, rho))
    }
}

#[pyclass(name = "TrwResult", module = "lifted_trw", get_all)]
struct PyTrwResult {
    bound: f64,
    gap: f64,
    iterations: usize,
    termination: String,
    /// `Pr(x = 1)` per node orbit (per ground node for ground runs).
    marginals: Vec<f64>,
    objectives: Vec<f64>,
    gaps: Vec<f64>,
    rho: Vec<f64>,
    tau: Vec<f64>,
}

impl PyTrwResult {
    fn new(res: TrwResult, rho: Vec<f64>) -> Self {
        Self {
            bound: res.bound,
            gap: res.final_gap(),
            iterations: res.iterations,
            termination: format!("{:?}", res.termination).to_lowercase(),
            marginals: res.node_marginals.iter().map(|m| m.get(1).copied().unwrap_or(0.0)).collect(),
            objectives: res.objectives,
            gaps: res.gaps,
            rho,
            tau: res.tau,
        }
    }
}

#[pymethods]
impl PyTrwResult {
    fn __repr__(&self) -> String {
        format!("TrwResult(bound={:.6}, gap={:.2e}, iterations={}, termination={})", self.bound, self.gap, self.iterations, self.termination)
    }
}

/// Exact `(log Z, Pr(x = 1))` of the complete-graph Ising model.
#[pyfunction]
#[pyo3(signature = (n, w, w_e = -0.1))]
fn counting_elimination(n: usize, w: f64, w_e: f64) -> (f64, f64) {
    let exact = oracle::counting_elimination_complete(n, w, w_e);
    (exact.log_z, exact.node_marginals.first().map_or(0.5, |m| m[1]))
}

/// The built-in cross-check suite as `(name, passed, detail)`.
#[pyfunction]
fn validate_suite() -> Vec<(String, bool, String)> {
    validate::run_suite().into_iter().map(|c| (c.name.to_string(), c.passed, c.detail)).collect()
}

#[pymodule]
#[pyo3(name = "lifted_trw")]
fn py_lifted_trw(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyGroundModel>()?;
    m.add_class::<PyLiftedGraph>()?;
    m.add_class::<PyTrwResult>()?;
    m.add_function(wrap_pyfunction!(counting_elimination, m)?)?;
    m.add_function(wrap_pyfunction!(validate_suite, m)?)?;
    m.add("OUTER_BOUNDS", OuterBound::ALL.iter().map(|o| o.to_string()).collect::<Vec<_>>())?;
    Ok(())
}
