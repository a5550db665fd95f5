//! Quasidistributions on rectangular grids.
//!
//! Values are stored row-major (last axis fastest). Derivatives of order `n`
//! along an axis are the `n`-fold application of the scheme's first-derivative
//! operator: exact powers of `ik` for the spectral scheme, repeated
//! fourth-order central differences for `fd4`. Hamiltonian coefficients come
//! from the symbolic bracket expansion and are sampled analytically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
pub use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::distributions::DeltaSymbol;
use crate::error::{Error, Result};
use crate::moyal::{bracket_operator, BracketTerm};
use crate::symbol::{PhaseSpace, Symbol};

const MAGIC: &[u8; 4] = b"SGWG";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    ZeroPadded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Spectral,
    Fd4,
}

/// One grid axis. Periodic axes exclude `max`; zero-padded axes include it.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, min: f64, max: f64, points: usize) -> Self {
        Axis { name: name.into(), min, max, points }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    axes: Vec<Axis>,
    boundary: Boundary,
    scheme: Scheme,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>, boundary: Boundary, scheme: Scheme) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Grid("a grid needs at least one axis".into()));
        }
        for a in &axes {
            if a.points < 8 {
                return Err(Error::Grid(format!("axis `{}` has {} points, need at least 8", a.name, a.points)));
            }
            if !(a.max > a.min) || !a.min.is_finite() || !a.max.is_finite() {
                return Err(Error::Grid(format!("axis `{}` has an empty domain [{}, {}]", a.name, a.min, a.max)));
            }
        }
        if scheme == Scheme::Spectral && boundary != Boundary::Periodic {
            return Err(Error::Grid("spectral derivatives need periodic boundaries".into()));
        }
        Ok(GridSpec { axes, boundary, scheme })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, axis: usize) -> f64 {
        let a = &self.axes[axis];
        match self.boundary {
            Boundary::Periodic => (a.max - a.min) / a.points as f64,
            Boundary::ZeroPadded => (a.max - a.min) / (a.points - 1) as f64,
        }
    }

    pub fn coordinates(&self, axis: usize) -> Vec<f64> {
        let h = self.step(axis);
        (0..self.axes[axis].points).map(|i| self.axes[axis].min + i as f64 * h).collect()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.ndim()];
        for k in (0..self.ndim().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.axes[k + 1].points;
        }
        s
    }

    pub fn axis_index(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    /// Samples `f` at every grid point.
    pub fn sample(&self, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let coords: Vec<Vec<f64>> = (0..self.ndim()).map(|k| self.coordinates(k)).collect();
        let mut idx = vec![0usize; self.ndim()];
        let mut x: Vec<f64> = coords.iter().map(|c| c[0]).collect();
        let mut out = Vec::with_capacity(self.len());
        loop {
            out.push(f(&x));
            let mut k = self.ndim();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < self.axes[k].points {
                    x[k] = coords[k][idx[k]];
                    break;
                }
                idx[k] = 0;
                x[k] = coords[k][0];
            }
        }
    }

    /// Quadrature weights along one axis: rectangle rule on periodic axes,
    /// trapezoid on zero-padded ones.
    pub fn weights(&self, axis: usize) -> Vec<f64> {
        let h = self.step(axis);
        let n = self.axes[axis].points;
        let mut w = vec![h; n];
        if self.boundary == Boundary::ZeroPadded {
            w[0] *= 0.5;
            w[n - 1] *= 0.5;
        }
        w
    }

    /// Largest resolvable wavenumber of the first-derivative operator.
    pub fn max_wavenumber(&self, axis: usize) -> f64 {
        let h = self.step(axis);
        match self.scheme {
            Scheme::Spectral => std::f64::consts::PI / h,
            // max over θ of (8 sin θ - sin 2θ)/6
            Scheme::Fd4 => 1.3722 / h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub time: f64,
    /// `(det J')^(-1/2)` samples multiplying `f` in every integral.
    pub measure_weight: Option<Vec<f64>>,
}

impl GridState {
    pub fn new(spec: GridSpec, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Grid(format!("expected {} values, got {}", spec.len(), values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Grid(format!("non-finite value at index {i}")));
        }
        Ok(GridState { spec, values, time, measure_weight: None })
    }

    pub fn from_fn(spec: GridSpec, time: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = spec.sample(f);
        GridState::new(spec, values, time)
    }

    pub fn with_measure(mut self, weight: Vec<f64>) -> Result<Self> {
        if weight.len() != self.values.len() {
            return Err(Error::Grid("measure weight has the wrong length".into()));
        }
        self.measure_weight = Some(weight);
        Ok(self)
    }

    /// `sqrt(Σ v^2 dV)` with the grid quadrature weights.
    pub fn l2_norm(&self) -> f64 {
        l2(&self.spec, &self.values)
    }
}

fn l2(spec: &GridSpec, v: &[f64]) -> f64 {
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    integrate(spec, &sq).sqrt()
}

/// Relative L2 distance `|a - b| / |b|`.
pub fn relative_l2(a: &GridState, b: &GridState) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::Grid("relative_l2 on different grids".into()));
    }
    let d: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    Ok(l2(&a.spec, &d) / b.l2_norm())
}

fn integrate(spec: &GridSpec, v: &[f64]) -> f64 {
    let w: Vec<Vec<f64>> = (0..spec.ndim()).map(|k| spec.weights(k)).collect();
    let shape = spec.shape();
    let mut idx = vec![0usize; spec.ndim()];
    let mut acc = 0.0;
    for &x in v {
        let mut wt = 1.0;
        for (k, &i) in idx.iter().enumerate() {
            wt *= w[k][i];
        }
        acc += wt * x;
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    acc
}

/// Iterates over the 1D lines of `spec` along `axis`: yields (start, stride).
fn lines(spec: &GridSpec, axis: usize) -> impl Iterator<Item = usize> {
    let stride = spec.strides()[axis];
    let block = stride * spec.axes[axis].points;
    let nblocks = spec.len() / block;
    (0..nblocks).flat_map(move |b| (0..stride).map(move |r| b * block + r))
}

/// Reusable work buffers for derivative chains.
#[derive(Debug, Default)]
pub struct Scratch {
    bufs: [Vec<f64>; 3],
}

/// First-derivative operators of a grid, with FFT plans cached.
pub struct Differentiator {
    spec: GridSpec,
    plans: Vec<Option<SpectralAxis>>,
}

struct SpectralAxis {
    fwd: Arc<dyn RealToComplex<f64>>,
    inv: Arc<dyn ComplexToReal<f64>>,
    wave: Vec<f64>,
}

impl Differentiator {
    pub fn new(spec: &GridSpec) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        let plans = (0..spec.ndim())
            .map(|k| {
                (spec.scheme == Scheme::Spectral).then(|| {
                    let n = spec.axes[k].points;
                    let len = spec.axes[k].max - spec.axes[k].min;
                    // Nyquist mode dropped so every order is a power of D1.
                    let wave = (0..=n / 2)
                        .map(|m| if 2 * m == n { 0.0 } else { 2.0 * std::f64::consts::PI * m as f64 / len })
                        .collect();
                    SpectralAxis { fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n), wave }
                })
            })
            .collect();
        Differentiator { spec: spec.clone(), plans }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// `∂^order/∂x_axis^order`.
    pub fn derivative(&self, v: &[f64], axis: usize, order: u32) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        let mut tmp = Vec::new();
        self.derivative_into(v, axis, order, &mut out, &mut tmp);
        out
    }

    /// As [`Self::derivative`], writing into `out`; `tmp` is scratch space.
    pub fn derivative_into(&self, v: &[f64], axis: usize, order: u32, out: &mut [f64], tmp: &mut Vec<f64>) {
        match (&self.plans[axis], order) {
            (_, 0) => out.copy_from_slice(v),
            (Some(sp), _) => self.spectral_into(v, out, axis, order, sp),
            (None, 1) => self.fd4_into(v, out, axis),
            (None, _) => {
                tmp.resize(v.len(), 0.0);
                // Ping-pong so the last pass lands in `out`.
                let (mut src, mut dst): (&mut [f64], &mut [f64]) = if order % 2 == 1 { (out, tmp) } else { (tmp, out) };
                self.fd4_into(v, src, axis);
                for _ in 1..order {
                    self.fd4_into(src, dst, axis);
                    std::mem::swap(&mut src, &mut dst);
                }
            }
        }
    }

    /// Mixed derivative with one order per axis.
    pub fn multi(&self, v: &[f64], orders: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.multi_into(v, orders, &mut out, &mut Scratch::default());
        out
    }

    /// As [`Self::multi`], writing into `out`.
    pub fn multi_into(&self, v: &[f64], orders: &[u32], out: &mut [f64], ws: &mut Scratch) {
        let axes: Vec<(usize, u32)> = orders.iter().copied().enumerate().filter(|&(_, o)| o > 0).collect();
        let Some((&(last, last_order), rest)) = axes.split_last() else {
            out.copy_from_slice(v);
            return;
        };
        let [a, b, t] = &mut ws.bufs;
        let mut started = false;
        for &(k, o) in rest {
            if started {
                b.resize(v.len(), 0.0);
                self.derivative_into(a, k, o, b, t);
                std::mem::swap(a, b);
            } else {
                a.resize(v.len(), 0.0);
                self.derivative_into(v, k, o, a, t);
                started = true;
            }
        }
        self.derivative_into(if started { a } else { v }, last, last_order, out, t);
    }

    /// Data viewed as `[outer][n][stride]`; strided lines are gathered in
    /// tiles of adjacent columns.
    fn spectral_into(&self, v: &[f64], out: &mut [f64], axis: usize, order: u32, sp: &SpectralAxis) {
        const TILE: usize = 16;
        let n = self.spec.axes[axis].points;
        let stride = self.spec.strides()[axis];
        let block = n * stride;
        let factor: Vec<Complex64> = sp.wave.iter().map(|&k| Complex64::new(0.0, k).powu(order) / n as f64).collect();
        let mut tile = vec![0.0; n * TILE.min(stride)];
        let mut line = vec![0.0; n];
        let mut spectrum = sp.fwd.make_output_vec();
        let mut scratch = vec![Complex64::new(0.0, 0.0); sp.fwd.get_scratch_len().max(sp.inv.get_scratch_len())];
        let mut transform = |buf: &mut [f64]| {
            line.copy_from_slice(buf);
            sp.fwd.process_with_scratch(&mut line, &mut spectrum, &mut scratch).expect("fft sizes");
            spectrum.iter_mut().zip(&factor).for_each(|(c, f)| *c *= f);
            sp.inv.process_with_scratch(&mut spectrum, buf, &mut scratch).expect("fft sizes");
        };
        for (src, dst) in v.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
            if stride == 1 {
                dst.copy_from_slice(src);
                transform(dst);
                continue;
            }
            for r0 in (0..stride).step_by(TILE) {
                let w = TILE.min(stride - r0);
                for i in 0..n {
                    for c in 0..w {
                        tile[c * n + i] = src[i * stride + r0 + c];
                    }
                }
                for chunk in tile[..w * n].chunks_exact_mut(n) {
                    transform(chunk);
                }
                for i in 0..n {
                    for c in 0..w {
                        dst[i * stride + r0 + c] = tile[c * n + i];
                    }
                }
            }
        }
    }

    /// `(f[i-2] - 8 f[i-1] + 8 f[i+1] - f[i+2]) / 12h`, applied to rows of
    /// `stride` contiguous values at once.
    fn fd4_into(&self, v: &[f64], out: &mut [f64], axis: usize) {
        let n = self.spec.axes[axis].points;
        let stride = self.spec.strides()[axis];
        let block = n * stride;
        let c = 1.0 / (12.0 * self.spec.step(axis));
        let periodic = self.spec.boundary == Boundary::Periodic;
        if stride == 1 {
            let ni = n as isize;
            for (src, dst) in v.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                let at = |i: isize| -> f64 {
                    if periodic {
                        src[i.rem_euclid(ni) as usize]
                    } else if (0..ni).contains(&i) {
                        src[i as usize]
                    } else {
                        0.0
                    }
                };
                for i in (0..2).chain(n - 2..n) {
                    let i = i as isize;
                    dst[i as usize] = c * ((at(i - 2) - at(i + 2)) + 8.0 * (at(i + 1) - at(i - 1)));
                }
                for (d, w) in dst[2..n - 2].iter_mut().zip(src.windows(5)) {
                    *d = c * ((w[0] - w[4]) + 8.0 * (w[3] - w[1]));
                }
            }
            return;
        }
        let zero = vec![0.0; stride];
        for (src, dst) in v.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
            let row = |i: isize| -> &[f64] {
                let j = if periodic {
                    i.rem_euclid(n as isize)
                } else if (0..n as isize).contains(&i) {
                    i
                } else {
                    return &zero;
                };
                &src[j as usize * stride..(j as usize + 1) * stride]
            };
            for i in 0..n as isize {
                let (m2, m1, p1, p2) = (row(i - 2), row(i - 1), row(i + 1), row(i + 2));
                let d = &mut dst[i as usize * stride..(i as usize + 1) * stride];
                for ((((d, a), b), e), g) in d.iter_mut().zip(m2).zip(m1).zip(p1).zip(p2) {
                    *d = c * ((a - g) + 8.0 * (e - b));
                }
            }
        }
    }
}

/// Numerical values of `hbar` and the symbolic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Numeric {
    pub hbar: f64,
    pub params: Vec<(String, f64)>,
}

impl Numeric {
    pub fn new(hbar: f64, params: &[(&str, f64)]) -> Self {
        Numeric { hbar, params: params.iter().map(|(n, v)| (n.to_string(), *v)).collect() }
    }

    /// Generator values in the order of `space`. Only generators that occur
    /// in `used` must be bound; the rest are set to zero.
    pub fn generator_values<'a>(&self, space: &PhaseSpace, used: impl IntoIterator<Item = &'a Symbol>) -> Result<Vec<f64>> {
        let used: Vec<&Symbol> = used.into_iter().collect();
        let nc = space.ncoords();
        space
            .params()
            .iter()
            .enumerate()
            .map(|(j, name)| match name.as_str() {
                "hbar" => Ok(self.hbar),
                "pi" => Ok(std::f64::consts::PI),
                _ => match self.params.iter().find(|(n, _)| n == name) {
                    Some((_, v)) => Ok(*v),
                    None if used.iter().any(|s| s.uses_var(nc + j)) => Err(Error::Unbound(name.clone())),
                    None => Ok(0.0),
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Field {
    Constant(f64),
    Sampled(Vec<f64>),
}

impl Field {
    fn max_abs(&self) -> f64 {
        match self {
            Field::Constant(c) => c.abs(),
            Field::Sampled(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// `f ↦ Σ c(x) ∂^orders f` on a grid, from a symbolic bracket expansion.
pub struct GridOperator {
    diff: Differentiator,
    terms: Vec<(u32, Vec<u32>, Field)>,
}

impl GridOperator {
    /// `f ↦ [H, f]_M`, all orders.
    pub fn moyal(h: &Symbol, spec: &GridSpec, numeric: &Numeric) -> Result<Self> {
        Self::from_bracket_terms(&bracket_operator(h, u32::MAX), h.space(), spec, numeric)
    }

    /// `f ↦ {H, f}`.
    pub fn liouville(h: &Symbol, spec: &GridSpec, numeric: &Numeric) -> Result<Self> {
        Self::from_bracket_terms(&bracket_operator(h, 1), h.space(), spec, numeric)
    }

    /// `f ↦ [H, f]_M - {H, f}`.
    pub fn moyal_correction(h: &Symbol, spec: &GridSpec, numeric: &Numeric) -> Result<Self> {
        let terms: Vec<BracketTerm> = bracket_operator(h, u32::MAX).into_iter().filter(|t| t.order > 1).collect();
        Self::from_bracket_terms(&terms, h.space(), spec, numeric)
    }

    pub fn from_bracket_terms(terms: &[BracketTerm], space: &Arc<PhaseSpace>, spec: &GridSpec, numeric: &Numeric) -> Result<Self> {
        if space.coords().len() != spec.ndim() || space.coords().iter().zip(spec.axes()).any(|(c, a)| *c != a.name) {
            return Err(Error::Grid(format!(
                "grid axes [{}] do not match the coordinates [{}]",
                spec.axes().iter().map(|a| a.name.as_str()).collect::<Vec<_>>().join(", "),
                space.coords().join(", ")
            )));
        }
        let gens = numeric.generator_values(space, terms.iter().map(|t| &t.coefficient))?;
        let terms = terms
            .iter()
            .map(|t| {
                let field = sample_coefficient(&t.coefficient, spec, &gens)?;
                Ok((t.order, t.f_orders.clone(), field))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridOperator { diff: Differentiator::new(spec), terms })
    }

    pub fn spec(&self) -> &GridSpec {
        self.diff.spec()
    }

    pub fn max_order(&self) -> u32 {
        self.terms.iter().map(|t| t.0).max().unwrap_or(0)
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut out, &mut Scratch::default(), &mut Vec::new());
        out
    }

    /// As [`Self::apply`], writing into `out`; `d` holds one derivative.
    pub fn apply_into(&self, f: &[f64], out: &mut [f64], ws: &mut Scratch, d: &mut Vec<f64>) {
        out.fill(0.0);
        d.resize(f.len(), 0.0);
        for (_, orders, field) in &self.terms {
            self.diff.multi_into(f, orders, d, ws);
            match field {
                Field::Constant(c) => out.iter_mut().zip(d.iter()).for_each(|(o, x)| *o += c * x),
                Field::Sampled(c) => out.iter_mut().zip(c.iter().zip(d.iter())).for_each(|(o, (c, x))| *o += c * x),
            }
        }
    }

    /// `dt * Σ_terms max|c| Π k_max^order`; RK4 is stable on the imaginary
    /// axis up to about 2.8.
    pub fn cfl_number(&self, dt: f64) -> f64 {
        let spec = self.spec();
        dt * self
            .terms
            .iter()
            .map(|(_, orders, field)| {
                field.max_abs() * orders.iter().enumerate().map(|(k, &o)| spec.max_wavenumber(k).powi(o as i32)).product::<f64>()
            })
            .sum::<f64>()
    }
}

fn sample_coefficient(c: &Symbol, spec: &GridSpec, gens: &[f64]) -> Result<Field> {
    let check = |(re, im): (f64, f64)| -> Result<f64> {
        if im.abs() > 1e-12 * (1.0 + re.abs()) {
            return Err(Error::Grid(format!("bracket coefficient `{c}` is not real")));
        }
        Ok(re)
    };
    if c.is_coordinate_free() {
        return Ok(Field::Constant(check(c.eval(&[], gens))?));
    }
    let mut err = None;
    let v = spec.sample(|x| {
        let (re, im) = c.eval(x, gens);
        if im.abs() > 1e-12 * (1.0 + re.abs()) {
            err = Some(Error::Grid(format!("bracket coefficient `{c}` is not real")));
        }
        re
    });
    match err {
        Some(e) => Err(e),
        None => Ok(Field::Sampled(v)),
    }
}

/// `[H, f]_M` sampled on the grid of `f`.
pub fn moyal_rhs(h: &Symbol, f: &GridState, numeric: &Numeric) -> Result<GridState> {
    let op = GridOperator::moyal(h, &f.spec, numeric)?;
    Ok(GridState { spec: f.spec.clone(), values: op.apply(&f.values), time: f.time, measure_weight: None })
}

/// `{H, f}` sampled on the grid of `f`.
pub fn liouville_rhs(h: &Symbol, f: &GridState, numeric: &Numeric) -> Result<GridState> {
    let op = GridOperator::liouville(h, &f.spec, numeric)?;
    Ok(GridState { spec: f.spec.clone(), values: op.apply(&f.values), time: f.time, measure_weight: None })
}

/// One classical Runge-Kutta step of `df/dt = rhs(f)`.
pub fn step_rk4(rhs: &dyn Fn(&[f64]) -> Vec<f64>, f: &GridState, dt: f64) -> Result<GridState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let axpy = |a: f64, x: &[f64]| -> Vec<f64> { f.values.iter().zip(x).map(|(v, d)| v + a * d).collect() };
    let k1 = rhs(&f.values);
    let k2 = rhs(&axpy(0.5 * dt, &k1));
    let k3 = rhs(&axpy(0.5 * dt, &k2));
    let k4 = rhs(&axpy(dt, &k3));
    let values: Vec<f64> = (0..f.values.len())
        .map(|i| f.values[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    let time = f.time + dt;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalAbort { time, msg: format!("non-finite value at flat index {i}") });
    }
    Ok(GridState { spec: f.spec.clone(), values, time, measure_weight: f.measure_weight.clone() })
}

/// `steps` RK4 steps under `op`; `observe` sees every intermediate state.
pub fn evolve(op: &GridOperator, f: &GridState, dt: f64, steps: usize, mut observe: impl FnMut(&GridState)) -> Result<GridState> {
    if op.spec() != &f.spec {
        return Err(Error::Grid("operator and state live on different grids".into()));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let len = f.values.len();
    let mut cur = f.clone();
    let mut k = [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    let mut stage = vec![0.0; len];
    let mut ws = Scratch::default();
    let mut d = Vec::new();
    for _ in 0..steps {
        let [k1, k2, k3, k4] = &mut k;
        op.apply_into(&cur.values, k1, &mut ws, &mut d);
        axpy_into(&mut stage, &cur.values, 0.5 * dt, k1);
        op.apply_into(&stage, k2, &mut ws, &mut d);
        axpy_into(&mut stage, &cur.values, 0.5 * dt, k2);
        op.apply_into(&stage, k3, &mut ws, &mut d);
        axpy_into(&mut stage, &cur.values, dt, k3);
        op.apply_into(&stage, k4, &mut ws, &mut d);
        let w = dt / 6.0;
        for (i, v) in cur.values.iter_mut().enumerate() {
            *v += w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        cur.time += dt;
        if let Some(i) = cur.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort { time: cur.time, msg: format!("non-finite value at flat index {i}") });
        }
        observe(&cur);
    }
    Ok(cur)
}

fn axpy_into(out: &mut [f64], x: &[f64], a: f64, y: &[f64]) {
    out.iter_mut().zip(x.iter().zip(y)).for_each(|(o, (x, y))| *o = x + a * y);
}

/// `∫ f dμ`, with the measure weight when present.
pub fn normalize_check(f: &GridState) -> f64 {
    match &f.measure_weight {
        Some(w) => {
            let v: Vec<f64> = f.values.iter().zip(w).map(|(a, b)| a * b).collect();
            integrate(&f.spec, &v)
        }
        None => integrate(&f.spec, &f.values),
    }
}

/// Integrates out every axis not in `keep`; the result keeps axis order.
pub fn marginal(f: &GridState, keep: &[usize]) -> Result<GridState> {
    let spec = &f.spec;
    if keep.is_empty() || keep.iter().any(|&k| k >= spec.ndim()) {
        return Err(Error::Grid("marginal needs at least one valid axis to keep".into()));
    }
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    let values = match &f.measure_weight {
        Some(w) => f.values.iter().zip(w).map(|(a, b)| a * b).collect(),
        None => f.values.clone(),
    };
    let out_spec = GridSpec::new(keep.iter().map(|&k| spec.axes[k].clone()).collect(), spec.boundary, spec.scheme)?;
    let out_strides = out_spec.strides();
    let w: Vec<Vec<f64>> = (0..spec.ndim()).map(|k| spec.weights(k)).collect();
    let shape = spec.shape();
    let mut out = vec![0.0; out_spec.len()];
    let mut idx = vec![0usize; spec.ndim()];
    for &x in &values {
        let mut wt = 1.0;
        let mut target = 0;
        let mut kk = 0;
        for (k, &i) in idx.iter().enumerate() {
            if kk < keep.len() && keep[kk] == k {
                target += i * out_strides[kk];
                kk += 1;
            } else {
                wt *= w[k][i];
            }
        }
        out[target] += wt * x;
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(GridState { spec: out_spec, values: out, time: f.time, measure_weight: None })
}

/// Four-point Lagrange interpolation of samples `v` (spacing `h`, origin `x0`) at `x`.
fn interpolate(v: &[f64], x0: f64, h: f64, x: f64) -> Option<f64> {
    let n = v.len();
    let s = (x - x0) / h;
    if s < -1e-9 || s > (n - 1) as f64 + 1e-9 {
        return None;
    }
    let i = s.round();
    if (s - i).abs() < 1e-9 {
        return Some(v[i as usize]);
    }
    let base = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let t = s - base as f64;
    let mut acc = 0.0;
    for j in 0..4 {
        let mut l = 1.0;
        for m in 0..4 {
            if m != j {
                l *= (t - m as f64) / (j as f64 - m as f64);
            }
        }
        acc += l * v[base + j];
    }
    Some(acc)
}

/// Observable stargenfunction for [`probability`].
pub enum Observable<'a> {
    /// `ρ = 1`.
    Unit,
    /// `Π δ(x_axis - value)`.
    Slice(Vec<(usize, f64)>),
    /// Sum of separable delta products with numeric prefactors.
    Delta(&'a DeltaSymbol, &'a Numeric),
}

/// `∫ dμ f ρ`.
pub fn probability(f: &GridState, obs: &Observable<'_>) -> Result<f64> {
    match obs {
        Observable::Unit => Ok(normalize_check(f)),
        Observable::Slice(fixed) => slice_integral(f, fixed),
        Observable::Delta(rho, numeric) => {
            let used = rho.terms().iter().flat_map(|t| std::iter::once(&t.poly).chain(std::iter::once(&t.phase)).chain(t.deltas.iter().map(|d| &d.arg)));
            let gens = numeric.generator_values(rho.space(), used)?;
            let mut acc = 0.0;
            for t in rho.terms() {
                if !t.phase.is_zero() {
                    return Err(Error::Distribution("oscillating factors cannot be sliced".into()));
                }
                if !t.poly.is_coordinate_free() {
                    return Err(Error::Distribution(format!("non-separable prefactor `{}`", t.poly)));
                }
                let (w, _) = t.poly.eval(&[], &gens);
                let mut fixed = Vec::new();
                for d in &t.deltas {
                    fixed.push(separable_delta(d.arg.clone(), d.order, &f.spec, &gens)?);
                }
                acc += w * slice_integral(f, &fixed)?;
            }
            Ok(acc)
        }
    }
}

fn separable_delta(arg: Symbol, order: u32, spec: &GridSpec, gens: &[f64]) -> Result<(usize, f64)> {
    let space = arg.space().clone();
    let used: Vec<usize> = arg.coords_used().iter().enumerate().filter(|(_, &u)| u).map(|(i, _)| i).collect();
    let non_separable = || Error::Distribution(format!("non-separable delta `{arg}`"));
    if order != 0 || used.len() != 1 {
        return Err(non_separable());
    }
    let x = used[0];
    let (coef, rest) = arg.split_linear(x).ok_or_else(non_separable)?;
    if !coef.is_coordinate_free() || !rest.is_coordinate_free() {
        return Err(non_separable());
    }
    let (a, _) = coef.eval(&[], gens);
    let (r, _) = rest.eval(&[], gens);
    let axis = spec
        .axis_index(&space.coords()[x])
        .ok_or_else(|| Error::Grid(format!("no grid axis named `{}`", space.coords()[x])))?;
    // δ(a x + r) = δ(x + r/a)/|a|; the 1/|a| factor is folded in by returning a scaled slice.
    if (a.abs() - 1.0).abs() > 1e-15 {
        return Err(Error::Distribution(format!("delta `{arg}` is not normalized")));
    }
    Ok((axis, -r / a))
}

fn slice_integral(f: &GridState, fixed: &[(usize, f64)]) -> Result<f64> {
    let spec = &f.spec;
    let mut axes: Vec<usize> = fixed.iter().map(|&(a, _)| a).collect();
    axes.sort_unstable();
    if axes.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Distribution("two deltas on the same axis".into()));
    }
    if fixed.len() == spec.ndim() {
        let single = GridState { spec: spec.clone(), values: f.values.clone(), time: f.time, measure_weight: f.measure_weight.clone() };
        return interpolate_point(&single, fixed);
    }
    let m = marginal(f, &axes)?;
    let local: Vec<(usize, f64)> = fixed.iter().map(|&(a, v)| (axes.iter().position(|&b| b == a).expect("kept"), v)).collect();
    interpolate_point(&m, &local)
}

/// Value at a point given by one coordinate per axis (tensor-product interpolation).
fn interpolate_point(f: &GridState, at: &[(usize, f64)]) -> Result<f64> {
    let spec = &f.spec;
    let values = match &f.measure_weight {
        Some(w) => f.values.iter().zip(w).map(|(a, b)| a * b).collect(),
        None => f.values.clone(),
    };
    let mut cur = values;
    let mut cur_spec = spec.clone();
    let mut order: Vec<(usize, f64)> = at.to_vec();
    order.sort_by(|a, b| b.0.cmp(&a.0));
    for (axis, x) in order {
        let n = cur_spec.axes[axis].points;
        let stride = cur_spec.strides()[axis];
        let h = cur_spec.step(axis);
        let x0 = cur_spec.axes[axis].min;
        let outer = cur.len() / (n * stride);
        let mut next = Vec::with_capacity(outer * stride);
        for o in 0..outer {
            for r in 0..stride {
                let line: Vec<f64> = (0..n).map(|i| cur[o * n * stride + i * stride + r]).collect();
                next.push(interpolate(&line, x0, h, x).ok_or_else(|| Error::Grid(format!("{x} lies outside axis `{}`", cur_spec.axes[axis].name)))?);
            }
        }
        cur = next;
        let mut axes = cur_spec.axes.clone();
        axes.remove(axis);
        if axes.is_empty() {
            break;
        }
        cur_spec = GridSpec { axes, boundary: cur_spec.boundary, scheme: cur_spec.scheme };
    }
    Ok(cur[0])
}

/// History amplitude `C(a)` on a periodic-style grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Amplitude {
    axes: Vec<Axis>,
    values: Vec<Complex64>,
}

impl Amplitude {
    pub fn new(axes: Vec<Axis>, values: Vec<Complex64>) -> Result<Self> {
        GridSpec::new(axes.clone(), Boundary::Periodic, Scheme::Spectral)?;
        let amp = Amplitude { axes, values };
        if amp.values.len() != amp.spec().len() {
            return Err(Error::Grid("amplitude has the wrong number of samples".into()));
        }
        let n = amp.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Grid(format!("amplitude norm is {n}, expected 1")));
        }
        Ok(amp)
    }

    /// Samples `c` and normalizes.
    pub fn from_fn(axes: Vec<Axis>, c: impl Fn(&[f64]) -> Complex64) -> Result<Self> {
        let spec = GridSpec::new(axes.clone(), Boundary::Periodic, Scheme::Spectral)?;
        let mut values = Vec::with_capacity(spec.len());
        spec.sample(|x| {
            values.push(c(x));
            0.0
        });
        let norm = integrate(&spec, &values.iter().map(|v| v.norm_sqr()).collect::<Vec<_>>()).sqrt();
        if !(norm > 0.0) {
            return Err(Error::Grid("amplitude vanishes".into()));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Amplitude::new(axes, values)
    }

    fn spec(&self) -> GridSpec {
        GridSpec { axes: self.axes.clone(), boundary: Boundary::Periodic, scheme: Scheme::Spectral }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `∫ |C|^2 da`.
    pub fn norm(&self) -> f64 {
        integrate(&self.spec(), &self.density())
    }

    /// `|C(a)|^2` samples.
    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }
}

/// `f(A, B) = (2πħ)^-d ∫ dy e^{-i y·B/ħ} C(A + y/2) C*(A - y/2)`, with `y`
/// sampled at twice the amplitude spacing so that `A ± y/2` are grid points.
/// Momentum axes `B_j` carry `N_j` points spaced `πħ/(N_j h_j)`.
pub fn wigner_of_amplitude(c: &Amplitude, hbar: f64) -> Result<GridState> {
    if !(hbar > 0.0) {
        return Err(Error::InvalidArgument("hbar must be positive".into()));
    }
    let aspec = c.spec();
    let d = aspec.ndim();
    let shape = aspec.shape();
    let strides = aspec.strides();
    let h: Vec<f64> = (0..d).map(|k| aspec.step(k)).collect();
    let mut planner = FftPlanner::new();
    let plans: Vec<Arc<dyn Fft<f64>>> = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
    let prefactor: f64 = h.iter().map(|hk| 2.0 * hk / (2.0 * std::f64::consts::PI * hbar)).product();

    // Output axes: A (as given) then B.
    let mut axes: Vec<Axis> = (0..d).map(|k| Axis { name: format!("A{}", k + 1), ..c.axes[k].clone() }).collect();
    for k in 0..d {
        let db = std::f64::consts::PI * hbar / (shape[k] as f64 * h[k]);
        let half = (shape[k] / 2) as f64;
        axes.push(Axis::new(format!("B{}", k + 1), -half * db, (shape[k] as f64 - half) * db, shape[k]));
    }
    let spec = GridSpec::new(axes, Boundary::Periodic, Scheme::Spectral)?;
    let nb: usize = shape.iter().product();
    let mut out = vec![0.0; aspec.len() * nb];
    let mut max_re: f64 = 0.0;
    let mut max_im: f64 = 0.0;
    let shifts = |m: usize, n: usize| -> Option<isize> {
        // FFT-ordered index to shift; the unpaired -N/2 shift is dropped.
        let s = if m < n.div_ceil(2) { m as isize } else { m as isize - n as isize };
        (!(n % 2 == 0 && s == -(n as isize / 2))).then_some(s)
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); nb];
    let bspec = GridSpec { axes: spec.axes[d..].to_vec(), boundary: Boundary::Periodic, scheme: Scheme::Spectral };
    let bstrides = bspec.strides();
    for ia in 0..aspec.len() {
        let ai: Vec<usize> = (0..d).map(|k| (ia / strides[k]) % shape[k]).collect();
        for (jb, b) in buf.iter_mut().enumerate() {
            let mut plus = 0usize;
            let mut minus = 0usize;
            let mut ok = true;
            for k in 0..d {
                let m = (jb / bstrides[k]) % shape[k];
                let Some(s) = shifts(m, shape[k]) else {
                    ok = false;
                    break;
                };
                let (p, q) = (ai[k] as isize + s, ai[k] as isize - s);
                if p < 0 || q < 0 || p >= shape[k] as isize || q >= shape[k] as isize {
                    ok = false;
                    break;
                }
                plus += p as usize * strides[k];
                minus += q as usize * strides[k];
            }
            *b = if ok { c.values[plus] * c.values[minus].conj() } else { Complex64::new(0.0, 0.0) };
        }
        for (k, plan) in plans.iter().enumerate() {
            let mut line = vec![Complex64::new(0.0, 0.0); shape[k]];
            for start in lines(&bspec, k) {
                for (i, l) in line.iter_mut().enumerate() {
                    *l = buf[start + i * bstrides[k]];
                }
                plan.process(&mut line);
                for (i, l) in line.iter().enumerate() {
                    buf[start + i * bstrides[k]] = *l;
                }
            }
        }
        // B index m (increasing B) reads FFT bin (m - N/2) mod N.
        for ob in 0..nb {
            let mut src = 0;
            for k in 0..d {
                let m = (ob / bstrides[k]) % shape[k];
                let bin = (m + shape[k] - shape[k] / 2) % shape[k];
                src += bin * bstrides[k];
            }
            let v = buf[src] * prefactor;
            max_re = max_re.max(v.re.abs());
            max_im = max_im.max(v.im.abs());
            out[ia * nb + ob] = v.re;
        }
    }
    if max_im > 1e-10 * max_re.max(1e-300) {
        return Err(Error::Grid(format!("Wigner transform has an imaginary residue {max_im:e}")));
    }
    GridState::new(spec, out, 0.0)
}

/// Flat binary snapshot: magic, version, boundary, scheme, axes (name, min,
/// max, points, spacing), time, measure flag, then little-endian `f64`
/// values (and measure weights when present).
pub fn write_snapshot(path: &Path, f: &GridState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&[matches!(f.spec.boundary, Boundary::ZeroPadded) as u8, matches!(f.spec.scheme, Scheme::Fd4) as u8])?;
    w.write_all(&(f.spec.ndim() as u32).to_le_bytes())?;
    for (k, a) in f.spec.axes.iter().enumerate() {
        w.write_all(&(a.name.len() as u32).to_le_bytes())?;
        w.write_all(a.name.as_bytes())?;
        w.write_all(&a.min.to_le_bytes())?;
        w.write_all(&a.max.to_le_bytes())?;
        w.write_all(&(a.points as u64).to_le_bytes())?;
        w.write_all(&f.spec.step(k).to_le_bytes())?;
    }
    w.write_all(&f.time.to_le_bytes())?;
    w.write_all(&[f.measure_weight.is_some() as u8])?;
    for v in f.values.iter().chain(f.measure_weight.iter().flatten()) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<GridState> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Grid(format!("{} is not a grid snapshot", path.display())));
    }
    let u32_ = |r: &mut BufReader<File>| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let f64_ = |r: &mut BufReader<File>| -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let version = u32_(&mut r)?;
    if version != 1 {
        return Err(Error::Grid(format!("unsupported snapshot version {version}")));
    }
    let mut flags = [0u8; 2];
    r.read_exact(&mut flags)?;
    let boundary = if flags[0] == 1 { Boundary::ZeroPadded } else { Boundary::Periodic };
    let scheme = if flags[1] == 1 { Scheme::Fd4 } else { Scheme::Spectral };
    let ndim = u32_(&mut r)? as usize;
    let mut axes = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let len = u32_(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Grid(e.to_string()))?;
        let min = f64_(&mut r)?;
        let max = f64_(&mut r)?;
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let points = u64::from_le_bytes(b) as usize;
        let _spacing = f64_(&mut r)?;
        axes.push(Axis { name, min, max, points });
    }
    let spec = GridSpec::new(axes, boundary, scheme)?;
    let time = f64_(&mut r)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let values = (0..spec.len()).map(|_| f64_(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut state = GridState::new(spec, values, time)?;
    if flag[0] == 1 {
        let w = (0..state.values.len()).map(|_| f64_(&mut r)).collect::<Result<Vec<_>>>()?;
        state = state.with_measure(w)?;
    }
    Ok(state)
}

/// Gnuplot `splot` data for the plane of axes `(x, y)`; other axes sit at
/// the indices in `fixed` (one entry per axis, ignored for `x` and `y`).
pub fn write_gnuplot_slice(path: &Path, f: &GridState, x: usize, y: usize, fixed: &[usize]) -> Result<()> {
    let spec = &f.spec;
    if x == y || x >= spec.ndim() || y >= spec.ndim() || fixed.len() != spec.ndim() {
        return Err(Error::Grid("invalid slice axes".into()));
    }
    let strides = spec.strides();
    let base: usize = fixed.iter().enumerate().filter(|(k, _)| *k != x && *k != y).map(|(k, &i)| i * strides[k]).sum();
    let (xs, ys) = (spec.coordinates(x), spec.coordinates(y));
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {} {} f  t={}", spec.axes[x].name, spec.axes[y].name, f.time)?;
    for (i, xv) in xs.iter().enumerate() {
        for (j, yv) in ys.iter().enumerate() {
            writeln!(w, "{xv:.12e} {yv:.12e} {:.12e}", f.values[base + i * strides[x] + j * strides[y]])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
