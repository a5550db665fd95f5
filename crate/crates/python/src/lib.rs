//! Python bindings. Symbols cross the boundary as objects; grid values cross
//! as flat lists in row-major order.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use sg::covariant::{christoffel, covariant_star_pullback};
use sg::grid::{self, Axis, Boundary, GridOperator, GridSpec, GridState, Numeric, Scheme};
use sg::parametrized::{fixture_coupled_particles, ExtendedSystem as CoreSystem, DEFAULT_MAX_ORDER};

create_exception!(stargen, StargenError, PyException);
create_exception!(stargen, NumericalAbort, StargenError);

fn err(e: sg::Error) -> PyErr {
    match e {
        sg::Error::NumericalAbort { .. } => NumericalAbort::new_err(e.to_string()),
        _ => StargenError::new_err(e.to_string()),
    }
}

#[pyclass(name = "PhaseSpace", module = "stargen", frozen, from_py_object)]
#[derive(Clone)]
struct PyPhaseSpace(Arc<sg::PhaseSpace>);

#[pymethods]
impl PyPhaseSpace {
    /// `pairs` lists canonical (q, p) names; `coords` fixes the layout.
    #[new]
    #[pyo3(signature = (coords, pairs, params = Vec::new()))]
    fn new(coords: Vec<String>, pairs: Vec<(String, String)>, params: Vec<String>) -> PyResult<Self> {
        let coords: Vec<&str> = coords.iter().map(String::as_str).collect();
        let pairs: Vec<(&str, &str)> = pairs.iter().map(|(q, p)| (q.as_str(), p.as_str())).collect();
        let params: Vec<&str> = params.iter().map(String::as_str).collect();
        sg::PhaseSpace::new(&coords, &pairs, &params).map(Self).map_err(err)
    }

    /// `q1..qn, p1..pn`.
    #[staticmethod]
    #[pyo3(signature = (n, params = Vec::new()))]
    fn canonical(n: usize, params: Vec<String>) -> PyResult<Self> {
        let params: Vec<&str> = params.iter().map(String::as_str).collect();
        sg::PhaseSpace::canonical(n, &params).map(Self).map_err(err)
    }

    #[getter]
    fn coords(&self) -> Vec<String> {
        self.0.coords().to_vec()
    }

    /// Includes the generators `hbar` and `pi`.
    #[getter]
    fn params(&self) -> Vec<String> {
        self.0.params().to_vec()
    }

    fn symbol(&self, text: &str) -> PyResult<PySymbol> {
        sg::Symbol::parse(&self.0, text).map(PySymbol).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("PhaseSpace(coords={:?}, params={:?})", self.0.coords(), self.0.params())
    }
}

#[pyclass(name = "Symbol", module = "stargen", frozen, eq, hash, from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PySymbol(sg::Symbol);

impl PySymbol {
    /// Accepts another symbol, an int, or text parsed over this symbol's space.
    fn coerce(&self, other: &Bound<'_, PyAny>) -> PyResult<sg::Symbol> {
        if let Ok(s) = other.cast::<PySymbol>() {
            return Ok(s.get().0.clone());
        }
        if let Ok(n) = other.extract::<i64>() {
            return Ok(sg::Symbol::int(self.0.space(), n));
        }
        if let Ok(t) = other.extract::<String>() {
            return sg::Symbol::parse(self.0.space(), &t).map_err(err);
        }
        Err(StargenError::new_err("expected a Symbol, an int or an expression string"))
    }
}

#[pymethods]
impl PySymbol {
    #[staticmethod]
    fn parse(space: &PyPhaseSpace, text: &str) -> PyResult<Self> {
        space.symbol(text)
    }

    #[getter]
    fn space(&self) -> PyPhaseSpace {
        PyPhaseSpace(self.0.space().clone())
    }

    /// Total coordinate degree; -1 for zero.
    #[getter]
    fn degree(&self) -> i32 {
        self.0.degree()
    }

    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    fn partial(&self, name: &str) -> PyResult<Self> {
        self.0.partial_by_name(name).map(Self).map_err(err)
    }

    fn poisson(&self, other: &Bound<'_, PyAny>) -> PyResult<Self> {
        self.0.poisson(&self.coerce(other)?).map(Self).map_err(err)
    }

    /// Replaces a parameter (or `hbar`) by an expression.
    fn subs(&self, name: &str, value: &Bound<'_, PyAny>) -> PyResult<Self> {
        self.0.substitute_param(name, &self.coerce(value)?).map(Self).map_err(err)
    }

    fn __add__(&self, other: &Bound<'_, PyAny>) -> PyResult<Self> {
        self.0.try_add(&self.coerce(other)?).map(Self).map_err(err)
    }

    fn __radd__(&self, other: &Bound<'_, PyAny>) -> PyResult<Self> {
        self.__add__(other)
    }

    fn __sub__(&self, other: &Bound<'_, PyAny>) -> PyResult<Self> {
        self.0.try_sub(&self.coerce(other)?).map(Self).map_err(err)
    }

    fn __rsub__(&self, other: &Bound<'_, PyAny>) -> PyResult<Self> {
        self.coerce(other)?.try_sub(&self.0).map(Self).map_err(err)
    }

    /// Pointwise product; use `star` for the Moyal product.
    fn __mul__(&self, other: &Bound<'_, PyAny>) -> PyResult<Self> {
        self.0.try_mul(&self.coerce(other)?).map(Self).map_err(err)
    }

    fn __rmul__(&self, other: &Bound<'_, PyAny>) -> PyResult<Self> {
        self.__mul__(other)
    }

    fn __neg__(&self) -> Self {
        Self(-self.0.clone())
    }

    fn __pow__(&self, e: u32, _modulo: Option<u32>) -> Self {
        Self(self.0.pow(e))
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Symbol('{}')", self.0)
    }
}

/// Moyal product `a ⋆ b`.
#[pyfunction]
fn star(a: &PySymbol, b: &Bound<'_, PyAny>) -> PyResult<PySymbol> {
    sg::moyal::star(&a.0, &a.coerce(b)?).map(PySymbol).map_err(err)
}

/// `(a ⋆ b - b ⋆ a) / (i hbar)`.
#[pyfunction]
fn moyal_bracket(a: &PySymbol, b: &Bound<'_, PyAny>) -> PyResult<PySymbol> {
    sg::moyal::moyal_bracket(&a.0, &a.coerce(b)?).map(PySymbol).map_err(err)
}

/// A Hamiltonian lifted to the extended space `(t, Pt, q, p)`.
#[pyclass(name = "ExtendedSystem", module = "stargen", frozen)]
struct PyExtendedSystem {
    inner: CoreSystem,
    max_order: usize,
}

#[pymethods]
impl PyExtendedSystem {
    #[new]
    #[pyo3(signature = (h0, max_order = DEFAULT_MAX_ORDER))]
    fn new(h0: &PySymbol, max_order: usize) -> PyResult<Self> {
        Ok(Self { inner: CoreSystem::parametrize(&h0.0).map_err(err)?, max_order })
    }

    /// Two particles coupled through `k q1 p2^2`.
    #[staticmethod]
    fn coupled() -> PyResult<Self> {
        Ok(Self { inner: fixture_coupled_particles(None).map_err(err)?, max_order: DEFAULT_MAX_ORDER })
    }

    #[getter]
    fn h0(&self) -> PySymbol {
        PySymbol(self.inner.h0().clone())
    }

    #[getter]
    fn constraint(&self) -> PySymbol {
        PySymbol(self.inner.constraint().clone())
    }

    #[getter]
    fn extended_space(&self) -> PyPhaseSpace {
        PyPhaseSpace(self.inner.extended().clone())
    }

    #[getter]
    fn history_space(&self) -> PyPhaseSpace {
        PyPhaseSpace(self.inner.history().clone())
    }

    /// `{"A1": ..., "B1": ...}` from the Moyal flow, or the Poisson flow
    /// with `classical=True`.
    #[pyo3(signature = (classical = false))]
    fn histories(&self, classical: bool) -> PyResult<BTreeMap<String, PySymbol>> {
        let h = if classical {
            self.inner.classical_histories(self.max_order)
        } else {
            self.inner.quantum_histories(self.max_order)
        }
        .map_err(err)?;
        let mut out = BTreeMap::new();
        for (j, (a, b)) in h.a.into_iter().zip(h.b).enumerate() {
            out.insert(format!("A{}", j + 1), PySymbol(a));
            out.insert(format!("B{}", j + 1), PySymbol(b));
        }
        Ok(out)
    }

    /// `(forward, inverse)`: extended coordinates in terms of history
    /// coordinates, and back.
    fn causal_map(&self) -> PyResult<(BTreeMap<String, PySymbol>, BTreeMap<String, PySymbol>)> {
        let d = self.inner.causal_map().map_err(err)?;
        let table = |space: &Arc<sg::PhaseSpace>, images: &[sg::Symbol]| {
            space.coords().iter().cloned().zip(images.iter().cloned().map(PySymbol)).collect()
        };
        Ok((table(d.target(), d.forward()), table(d.source(), d.inverse())))
    }

    /// Nonzero `(i, j, k, value)` of the causal connection, named by
    /// extended coordinates.
    fn christoffel(&self) -> PyResult<Vec<(String, String, String, PySymbol)>> {
        let g = christoffel(&self.inner.causal_map().map_err(err)?).map_err(err)?;
        let c = self.inner.extended().coords();
        Ok(g.nonzero().into_iter().map(|(i, j, k, s)| (c[i].clone(), c[j].clone(), c[k].clone(), PySymbol(s.clone()))).collect())
    }

    /// Covariant product of two extended-space symbols through the causal map.
    fn covariant_star(&self, a: &PySymbol, b: &Bound<'_, PyAny>) -> PyResult<PySymbol> {
        let d = self.inner.causal_map().map_err(err)?;
        covariant_star_pullback(&a.0, &a.coerce(b)?, &d).map(PySymbol).map_err(err)
    }
}

/// Rectangular grid over named axes `(name, min, max, points)`.
#[pyclass(name = "Grid", module = "stargen", frozen)]
struct PyGrid(GridSpec);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (axes, boundary = "periodic", scheme = "spectral"))]
    fn new(axes: Vec<(String, f64, f64, usize)>, boundary: &str, scheme: &str) -> PyResult<Self> {
        let boundary = match boundary {
            "periodic" => Boundary::Periodic,
            "zero-padded" => Boundary::ZeroPadded,
            other => return Err(StargenError::new_err(format!("unknown boundary `{other}`"))),
        };
        let scheme = match scheme {
            "spectral" => Scheme::Spectral,
            "fd4" => Scheme::Fd4,
            other => return Err(StargenError::new_err(format!("unknown scheme `{other}`"))),
        };
        let axes = axes.into_iter().map(|(n, lo, hi, p)| Axis::new(n, lo, hi, p)).collect();
        GridSpec::new(axes, boundary, scheme).map(Self).map_err(err)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape()
    }

    fn coordinates(&self, axis: usize) -> PyResult<Vec<f64>> {
        if axis >= self.0.ndim() {
            return Err(StargenError::new_err(format!("axis {axis} out of range")));
        }
        Ok(self.0.coordinates(axis))
    }

    /// Normalized product Gaussian `Π exp(-(x - c)^2/w^2) / (√π w)`.
    fn gaussian(&self, center: Vec<f64>, width: Vec<f64>) -> PyResult<Vec<f64>> {
        if center.len() != self.0.ndim() || width.len() != self.0.ndim() {
            return Err(StargenError::new_err("center and width need one entry per axis"));
        }
        let root_pi = std::f64::consts::PI.sqrt();
        Ok(self.0.sample(|x| x.iter().zip(&center).zip(&width).map(|((x, c), w)| (-((x - c) / w).powi(2)).exp() / (root_pi * w)).product()))
    }

    /// `∫ f dV` with the grid quadrature.
    fn integrate(&self, values: Vec<f64>) -> PyResult<f64> {
        Ok(grid::normalize_check(&self.state(values, 0.0)?))
    }

    /// RK4 under `∂f/∂t = [h, f]` (Moyal) or `{h, f}` (Liouville). Axes are
    /// matched to the coordinates of `h` by name.
    #[pyo3(signature = (h, values, dt, steps, hbar = 1.0, params = BTreeMap::new(), evolution = "moyal"))]
    #[allow(clippy::too_many_arguments)]
    fn evolve(
        &self,
        py: Python<'_>,
        h: &PySymbol,
        values: Vec<f64>,
        dt: f64,
        steps: usize,
        hbar: f64,
        params: BTreeMap<String, f64>,
        evolution: &str,
    ) -> PyResult<Vec<f64>> {
        let params: Vec<(&str, f64)> = params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let numeric = Numeric::new(hbar, &params);
        let op = match evolution {
            "moyal" => GridOperator::moyal(&h.0, &self.0, &numeric),
            "liouville" => GridOperator::liouville(&h.0, &self.0, &numeric),
            other => return Err(StargenError::new_err(format!("unknown evolution `{other}`"))),
        }
        .map_err(err)?;
        let f = self.state(values, 0.0)?;
        py.detach(|| grid::evolve(&op, &f, dt, steps, |_| ())).map(|s| s.values).map_err(err)
    }

    fn __repr__(&self) -> String {
        let axes: Vec<String> = self.0.axes().iter().map(|a| format!("{}:{}", a.name, a.points)).collect();
        format!("Grid({})", axes.join(", "))
    }
}

impl PyGrid {
    fn state(&self, values: Vec<f64>, time: f64) -> PyResult<GridState> {
        GridState::new(self.0.clone(), values, time).map_err(err)
    }
}

#[pymodule]
fn stargen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("StargenError", m.py().get_type::<StargenError>())?;
    m.add("NumericalAbort", m.py().get_type::<NumericalAbort>())?;
    m.add_class::<PyPhaseSpace>()?;
    m.add_class::<PySymbol>()?;
    m.add_class::<PyExtendedSystem>()?;
    m.add_class::<PyGrid>()?;
    m.add_function(wrap_pyfunction!(star, m)?)?;
    m.add_function(wrap_pyfunction!(moyal_bracket, m)?)?;
    Ok(())
}
