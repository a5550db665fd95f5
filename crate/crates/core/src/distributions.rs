//! Closed distributional calculus for stargenfunctions.
//!
//! A [`DeltaSymbol`] is a finite sum of terms
//!
//! ```text
//! poly * exp((i/hbar) * phase) * Π delta^(k)(arg)
//! ```
//!
//! with polynomial `poly`, `phase` and `arg`. Star products against
//! polynomial symbols are terminating bidifferential series; derivatives act
//! on the exponential (bringing down `(i/hbar) ∂phase`) and on deltas
//! (raising their order).
//!
//! Canonical form:
//! * each delta argument is rescaled so a chosen variable has coefficient 1
//!   (`delta^(k)(c u) = sgn(c)^k |c|^(-k-1) delta^(k)(u)`);
//! * a delta whose argument is `x + r`, with `x` a coordinate absent from all
//!   other delta arguments, absorbs the `x` dependence of the rest of the term:
//!   `F(x) delta^(k)(x + r) = Σ_m (-1)^m C(k, m) F^(m)(-r) delta^(k-m)(x + r)`;
//! * like terms are merged and zero terms dropped.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::covariant::Diffeomorphism;
use crate::error::{Error, Result};
use crate::moyal::star_exp_classical_check;
use crate::parametrized::{Dynamics, ExtendedSystem, CONSTRAINT, DEFAULT_MAX_ORDER};
use crate::rational::{Coefficient, Rational};
use crate::symbol::{same_space, PhaseSpace, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Delta {
    pub arg: Symbol,
    pub order: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaTerm {
    pub poly: Symbol,
    /// Exponent divided by `i/hbar`; zero means no exponential factor.
    pub phase: Symbol,
    pub deltas: Vec<Delta>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaSymbol {
    space: Arc<PhaseSpace>,
    terms: Vec<DeltaTerm>,
}

fn i_over_hbar(space: &Arc<PhaseSpace>) -> Symbol {
    Symbol::hbar_pow(space, -1).scale(&Coefficient::I)
}

fn binomial(n: u32, k: u32) -> i64 {
    (0..k as i64).fold(1i64, |acc, j| acc * (n as i64 - j) / (j + 1))
}

impl DeltaTerm {
    fn key(&self) -> (Symbol, Vec<Delta>) {
        (self.phase.clone(), self.deltas.clone())
    }

    /// `∂_x` of a single term, as a list of terms; `x` may be a generator slot.
    fn partial(&self, x: usize) -> Vec<DeltaTerm> {
        let mut out = Vec::new();
        let dp = self.poly.partial_var(x);
        if !dp.is_zero() {
            out.push(DeltaTerm { poly: dp, phase: self.phase.clone(), deltas: self.deltas.clone() });
        }
        let dphase = self.phase.partial_var(x);
        if !dphase.is_zero() {
            let space = self.poly.space();
            out.push(DeltaTerm {
                poly: &(&self.poly * &dphase) * &i_over_hbar(space),
                phase: self.phase.clone(),
                deltas: self.deltas.clone(),
            });
        }
        for (j, d) in self.deltas.iter().enumerate() {
            let darg = d.arg.partial_var(x);
            if !darg.is_zero() {
                let mut deltas = self.deltas.clone();
                deltas[j].order += 1;
                out.push(DeltaTerm { poly: &self.poly * &darg, phase: self.phase.clone(), deltas });
            }
        }
        out
    }

    fn mul(&self, other: &DeltaTerm) -> DeltaTerm {
        let mut deltas = self.deltas.clone();
        deltas.extend(other.deltas.iter().cloned());
        deltas.sort();
        DeltaTerm { poly: &self.poly * &other.poly, phase: &self.phase + &other.phase, deltas }
    }

    fn map_symbols(&self, f: &dyn Fn(&Symbol) -> Result<Symbol>) -> Result<DeltaTerm> {
        Ok(DeltaTerm {
            poly: f(&self.poly)?,
            phase: f(&self.phase)?,
            deltas: self.deltas.iter().map(|d| Ok(Delta { arg: f(&d.arg)?, order: d.order })).collect::<Result<_>>()?,
        })
    }

    fn symbols(&self) -> impl Iterator<Item = &Symbol> {
        std::iter::once(&self.poly).chain(std::iter::once(&self.phase)).chain(self.deltas.iter().map(|d| &d.arg))
    }

    /// No negative power of `v` anywhere, so `v` can be evaluated.
    fn polynomial_in(&self, v: usize) -> bool {
        self.symbols().all(|s| s.min_exp(v) >= 0)
    }

    fn uses_var(&self, v: usize) -> bool {
        self.poly.uses_var(v) || self.phase.uses_var(v) || self.deltas.iter().any(|d| d.arg.uses_var(v))
    }
}

/// Sums terms with identical phase and deltas, dropping zeros.
fn merge(terms: impl IntoIterator<Item = DeltaTerm>) -> Vec<DeltaTerm> {
    let mut map: HashMap<(Symbol, Vec<Delta>), Symbol> = HashMap::new();
    let mut order: Vec<(Symbol, Vec<Delta>)> = Vec::new();
    for t in terms {
        if t.poly.is_zero() {
            continue;
        }
        let key = t.key();
        match map.get_mut(&key) {
            Some(p) => *p = &*p + &t.poly,
            None => {
                order.push(key.clone());
                map.insert(key, t.poly);
            }
        }
    }
    order
        .into_iter()
        .filter_map(|k| {
            let poly = map.remove(&k).expect("present");
            (!poly.is_zero()).then(|| DeltaTerm { poly, phase: k.0, deltas: k.1 })
        })
        .collect()
}

/// Rational `α` with `arg = α x + r`, `r` free of `x`.
fn linear_coefficient(arg: &Symbol, x: usize) -> Option<Rational> {
    if arg.degree_in(x) != 1 {
        return None;
    }
    let c = arg.partial_var(x).as_constant()?;
    (c.is_real() && !c.is_zero()).then_some(c.re)
}

/// `delta^(k)(arg)` rewritten as `f * delta^(k)(arg / c)`; returns `f`.
fn rescale(d: &mut Delta, c: &Rational) -> Rational {
    if c.is_one() {
        return Rational::ONE;
    }
    d.arg = d.arg.scale(&Coefficient::real(c.recip()));
    // delta^(k)(c u) = sgn(c)^k |c|^(-k-1) delta^(k)(u)
    let f = c.abs().recip().pow(d.order as i32 + 1);
    if c.signum() < 0 && d.order % 2 == 1 {
        -f
    } else {
        f
    }
}

/// Leading real coefficient of the argument scaled to 1.
fn normalize_leading(t: &mut DeltaTerm) {
    let mut factor = Rational::ONE;
    for d in &mut t.deltas {
        if let Some(c) = d.arg.terms().first().and_then(|(_, c)| c.is_real().then(|| c.re.clone())) {
            factor = &factor * &rescale(d, &c);
        }
    }
    if !factor.is_one() {
        t.poly = t.poly.scale(&Coefficient::real(factor));
    }
    t.deltas.sort();
}

/// `x` occurs in delta `j` only.
fn is_pivot(t: &DeltaTerm, j: usize, x: usize) -> bool {
    linear_coefficient(&t.deltas[j].arg, x).is_some_and(|c| c.is_one())
        && !t.poly.uses_var(x)
        && !t.phase.uses_var(x)
        && t.deltas.iter().enumerate().all(|(i, d)| i == j || !d.arg.uses_var(x))
}

/// Pivot slots in visiting order: coordinates, then generators other than
/// `hbar` and `pi`.
fn pivot_slots(space: &PhaseSpace) -> Vec<usize> {
    (0..space.nvars()).filter(|&v| v != space.hbar_var() && v != space.pi_var()).collect()
}

/// Reduced echelon form: slots are visited in order; each takes as pivot the
/// first delta, not yet pivoted on an earlier slot, that is linear in it with
/// constant coefficient, and is then sifted out of the rest of the term.
fn canonicalize_term(t: DeltaTerm) -> Vec<DeltaTerm> {
    let slots = pivot_slots(t.poly.space());
    let mut t = t;
    normalize_leading(&mut t);
    let mut work = vec![t];
    for (xi, &x) in slots.iter().enumerate() {
        let mut next = Vec::new();
        for mut term in work {
            if !term.polynomial_in(x) {
                next.push(term);
                continue;
            }
            let pivoted = |term: &DeltaTerm, j: usize| slots[..xi].iter().any(|&y| is_pivot(term, j, y));
            let choice = (0..term.deltas.len())
                .filter(|&j| !pivoted(&term, j))
                .find_map(|j| linear_coefficient(&term.deltas[j].arg, x).map(|c| (j, c)));
            match choice {
                Some((j, c)) => {
                    let f = rescale(&mut term.deltas[j], &c);
                    term.poly = term.poly.scale(&Coefficient::real(f));
                    next.extend(reduce_on(term, j, x));
                }
                None => next.push(term),
            }
        }
        work = merge(next);
    }
    work.into_iter()
        .map(|mut t| {
            let pivots: Vec<bool> = (0..t.deltas.len()).map(|j| slots.iter().any(|&y| is_pivot(&t, j, y))).collect();
            // Only free deltas are renormalized; pivoted ones already have a unit coefficient.
            let mut factor = Rational::ONE;
            for (d, &p) in t.deltas.iter_mut().zip(&pivots) {
                if !p {
                    if let Some(c) = d.arg.terms().first().and_then(|(_, c)| c.is_real().then(|| c.re.clone())) {
                        factor = &factor * &rescale(d, &c);
                    }
                }
            }
            t.poly = t.poly.scale(&Coefficient::real(factor));
            t.deltas.sort();
            t
        })
        .collect()
}

/// Sifts `x` through delta `j` (unit coefficient on `x`):
/// `F(x) delta^(k)(x + r) = Σ_m (-1)^m C(k,m) F^(m)(-r) delta^(k-m)(x + r)`,
/// where `F` collects every other factor of the term, other deltas included.
fn reduce_on(term: DeltaTerm, j: usize, x: usize) -> Vec<DeltaTerm> {
    let d = term.deltas[j].clone();
    let mut rest_deltas = term.deltas.clone();
    rest_deltas.remove(j);
    let f0 = DeltaTerm { poly: term.poly, phase: term.phase, deltas: rest_deltas };
    if !f0.uses_var(x) {
        let mut deltas = f0.deltas;
        deltas.push(d);
        deltas.sort();
        return vec![DeltaTerm { poly: f0.poly, phase: f0.phase, deltas }];
    }
    let (_, rest) = d.arg.split_linear(x).expect("linear in x");
    let at = -&rest;
    let mut f = vec![f0];
    let mut out = Vec::new();
    for m in 0..=d.order {
        if m > 0 {
            f = merge(f.iter().flat_map(|t| t.partial(x)));
        }
        let w = Coefficient::from_int(if m % 2 == 0 { 1 } else { -1 } * binomial(d.order, m));
        for t in &f {
            let sub = t.map_symbols(&|s| s.substitute_var(x, &at)).expect("same space");
            let mut deltas = sub.deltas;
            deltas.push(Delta { arg: d.arg.clone(), order: d.order - m });
            deltas.sort();
            out.push(DeltaTerm { poly: sub.poly.scale(&w), phase: sub.phase, deltas });
        }
    }
    out
}

impl DeltaSymbol {
    pub fn zero(space: &Arc<PhaseSpace>) -> Self {
        DeltaSymbol { space: space.clone(), terms: Vec::new() }
    }

    pub fn from_poly(p: &Symbol) -> Self {
        let space = p.space().clone();
        let terms = if p.is_zero() {
            Vec::new()
        } else {
            vec![DeltaTerm { poly: p.clone(), phase: Symbol::zero(&space), deltas: Vec::new() }]
        };
        DeltaSymbol { space, terms }
    }

    /// `delta(arg)`
    pub fn delta(arg: &Symbol) -> Self {
        Self::delta_k(arg, 0)
    }

    pub fn delta_k(arg: &Symbol, order: u32) -> Self {
        let space = arg.space().clone();
        DeltaSymbol::from_terms(
            &space,
            vec![DeltaTerm { poly: Symbol::one(&space), phase: Symbol::zero(&space), deltas: vec![Delta { arg: arg.clone(), order }] }],
        )
    }

    /// `exp((i/hbar) * phase)`
    pub fn exp_i_over_hbar(phase: &Symbol) -> Self {
        let space = phase.space().clone();
        DeltaSymbol { space: space.clone(), terms: vec![DeltaTerm { poly: Symbol::one(&space), phase: phase.clone(), deltas: Vec::new() }] }
    }

    /// Builds and canonicalizes.
    pub fn from_terms(space: &Arc<PhaseSpace>, terms: Vec<DeltaTerm>) -> Self {
        DeltaSymbol { space: space.clone(), terms }.canonicalize()
    }

    pub fn space(&self) -> &Arc<PhaseSpace> {
        &self.space
    }

    pub fn terms(&self) -> &[DeltaTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn canonicalize(&self) -> Self {
        let raw = self.terms.iter().cloned().flat_map(canonicalize_term);
        let mut terms = merge(raw);
        terms.sort_by(|a, b| a.deltas.cmp(&b.deltas).then_with(|| a.phase.cmp(&b.phase)).then_with(|| a.poly.cmp(&b.poly)));
        DeltaSymbol { space: self.space.clone(), terms }
    }

    pub fn try_add(&self, other: &DeltaSymbol) -> Result<Self> {
        same_space(&self.space, &other.space)?;
        let mut t = self.terms.clone();
        t.extend(other.terms.iter().cloned());
        Ok(DeltaSymbol::from_terms(&self.space, t))
    }

    pub fn try_sub(&self, other: &DeltaSymbol) -> Result<Self> {
        self.try_add(&other.scale(&Coefficient::from_int(-1)))
    }

    pub fn scale(&self, c: &Coefficient) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| DeltaTerm { poly: t.poly.scale(c), phase: t.phase.clone(), deltas: t.deltas.clone() })
            .filter(|t| !t.poly.is_zero())
            .collect();
        DeltaSymbol { space: self.space.clone(), terms }
    }

    pub fn mul_poly(&self, p: &Symbol) -> Result<Self> {
        same_space(&self.space, p.space())?;
        let terms = self
            .terms
            .iter()
            .map(|t| DeltaTerm { poly: &t.poly * p, phase: t.phase.clone(), deltas: t.deltas.clone() })
            .collect();
        Ok(DeltaSymbol::from_terms(&self.space, terms))
    }

    /// Pointwise product; meaningful when the two factors share no delta argument.
    pub fn try_mul(&self, other: &DeltaSymbol) -> Result<Self> {
        same_space(&self.space, &other.space)?;
        let mut terms = Vec::new();
        for a in &self.terms {
            for b in &other.terms {
                if a.deltas.iter().any(|d| b.deltas.iter().any(|e| e.arg == d.arg)) {
                    return Err(Error::Distribution(format!("product of deltas with a common argument `{}`", a.deltas[0].arg)));
                }
                terms.push(a.mul(b));
            }
        }
        Ok(DeltaSymbol::from_terms(&self.space, terms))
    }

    /// `∂/∂x` (not canonicalized further than a merge).
    pub fn partial(&self, x: usize) -> Self {
        DeltaSymbol { space: self.space.clone(), terms: merge(self.terms.iter().flat_map(|t| t.partial(x))) }
    }

    /// Derivative then canonical form.
    pub fn derivative(&self, x: usize) -> Self {
        self.partial(x).canonicalize()
    }

    /// Smallest power of `hbar` appearing in any coefficient polynomial.
    pub fn min_hbar_power(&self) -> Option<i16> {
        self.terms.iter().filter_map(|t| t.poly.hbar_range().map(|r| r.0)).min()
    }

    /// Coordinates that occur anywhere.
    pub fn coords_used(&self) -> Vec<bool> {
        let mut used = vec![false; self.space.ncoords()];
        for t in &self.terms {
            for s in std::iter::once(&t.poly).chain(std::iter::once(&t.phase)).chain(t.deltas.iter().map(|d| &d.arg)) {
                for (u, v) in used.iter_mut().zip(s.coords_used()) {
                    *u |= v;
                }
            }
        }
        used
    }

    /// Composition with per-coordinate images over `target`.
    pub fn substitute_slots(&self, slots: &[Option<&Symbol>], target: &Arc<PhaseSpace>) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .map(|t| t.map_symbols(&|s| s.substitute_slots(slots, target)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DeltaSymbol::from_terms(target, terms))
    }

    /// Expresses a distribution over the flat source of `d` in target coordinates.
    pub fn pull(&self, d: &Diffeomorphism) -> Result<Self> {
        same_space(&self.space, d.source())?;
        let slots: Vec<Option<&Symbol>> = d.inverse().iter().map(Some).collect();
        self.substitute_slots(&slots, d.target())
    }

    pub fn transfer(&self, target: &Arc<PhaseSpace>) -> Result<Self> {
        let terms = self.terms.iter().map(|t| t.map_symbols(&|s| s.transfer(target))).collect::<Result<Vec<_>>>()?;
        Ok(DeltaSymbol::from_terms(target, terms))
    }

    /// Replaces a generator (label) by a symbol of the same space.
    pub fn substitute_param(&self, name: &str, value: &Symbol) -> Result<Self> {
        let terms = self.terms.iter().map(|t| t.map_symbols(&|s| s.substitute_param(name, value))).collect::<Result<Vec<_>>>()?;
        Ok(DeltaSymbol::from_terms(&self.space, terms))
    }
}

impl fmt::Display for DeltaSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            let mut parts: Vec<String> = Vec::new();
            if !t.poly.as_constant().is_some_and(|c| c.is_one()) || (t.phase.is_zero() && t.deltas.is_empty()) {
                parts.push(if t.poly.len() > 1 { format!("({})", t.poly) } else { t.poly.to_string() });
            }
            if !t.phase.is_zero() {
                parts.push(format!("exp((i/hbar)*({}))", t.phase));
            }
            for d in &t.deltas {
                if d.order == 0 {
                    parts.push(format!("delta({})", d.arg));
                } else {
                    parts.push(format!("delta^{}({})", d.order, d.arg));
                }
            }
            f.write_str(&parts.join(" * "))?;
        }
        Ok(())
    }
}

/// Memoized multi-derivatives of a distribution.
struct DerivCache<'a> {
    base: &'a DeltaSymbol,
    cache: HashMap<Vec<u32>, DeltaSymbol>,
}

impl<'a> DerivCache<'a> {
    fn new(base: &'a DeltaSymbol) -> Self {
        DerivCache { base, cache: HashMap::new() }
    }

    fn get(&mut self, orders: &[u32]) -> DeltaSymbol {
        if let Some(v) = self.cache.get(orders) {
            return v.clone();
        }
        let v = match orders.iter().position(|&o| o > 0) {
            None => self.base.clone(),
            Some(x) => {
                let mut lower = orders.to_vec();
                lower[x] -= 1;
                self.get(&lower).partial(x)
            }
        };
        self.cache.insert(orders.to_vec(), v.clone());
        v
    }
}

/// `Σ_{min <= |α|+|β| <= max} (iħ/2)^n (-1)^{|β|}/(α!β!) (∂q^α ∂p^β x)(∂p^α ∂q^β y)`.
fn bidifferential(x: &DeltaSymbol, y: &DeltaSymbol, min_order: u32, max_order: u32) -> Result<DeltaSymbol> {
    same_space(&x.space, &y.space)?;
    let space = x.space.clone();
    let n = space.ncoords();
    let pairs = space.pairs().to_vec();
    let mut cx = DerivCache::new(x);
    let mut cy = DerivCache::new(y);
    let mut idx = vec![0u32; 2 * pairs.len()];
    let mut terms = Vec::new();
    loop {
        let order: u32 = idx.iter().sum();
        if order >= min_order && order <= max_order {
            let mut ox = vec![0u32; n];
            let mut oy = vec![0u32; n];
            let mut w = Rational::ONE;
            let mut odd = false;
            for (k, &(q, p)) in pairs.iter().enumerate() {
                let (a, b) = (idx[2 * k], idx[2 * k + 1]);
                ox[q] += a;
                ox[p] += b;
                oy[p] += a;
                oy[q] += b;
                w = &w * &(&Rational::factorial(a) * &Rational::factorial(b)).recip();
                odd ^= b % 2 == 1;
            }
            let dx = cx.get(&ox);
            if !dx.is_zero() {
                let dy = cy.get(&oy);
                if !dy.is_zero() {
                    let mut c = Coefficient::i_pow(order).scale(&w).scale(&Rational::new(1, 1i64 << order));
                    if odd {
                        c = -c;
                    }
                    let h = Symbol::hbar_pow(&space, order as i16).scale(&c);
                    for a in &dx.terms {
                        for b in &dy.terms {
                            let mut t = a.mul(b);
                            t.poly = &t.poly * &h;
                            terms.push(t);
                        }
                    }
                }
            }
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(DeltaSymbol::from_terms(&space, terms));
            }
            idx[k] += 1;
            if idx.iter().sum::<u32>() <= max_order {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `p * D` for a polynomial `p`; the series stops at the degree of `p`.
pub fn star_poly_left(p: &Symbol, d: &DeltaSymbol) -> Result<DeltaSymbol> {
    let deg = p.degree();
    if deg < 0 {
        return Ok(DeltaSymbol::zero(&d.space));
    }
    bidifferential(&DeltaSymbol::from_poly(p), d, 0, deg as u32)
}

/// `D * p` for a polynomial `p`.
pub fn star_poly_right(d: &DeltaSymbol, p: &Symbol) -> Result<DeltaSymbol> {
    let deg = p.degree();
    if deg < 0 {
        return Ok(DeltaSymbol::zero(&d.space));
    }
    bidifferential(d, &DeltaSymbol::from_poly(p), 0, deg as u32)
}

/// Star product of distributions whose dependencies never pair a coordinate
/// with its conjugate; every bidifferential term beyond the product vanishes.
pub fn star_disjoint(x: &DeltaSymbol, y: &DeltaSymbol) -> Result<DeltaSymbol> {
    same_space(&x.space, &y.space)?;
    let (ux, uy) = (x.coords_used(), y.coords_used());
    for i in 0..x.space.ncoords() {
        let (j, _) = x.space.partner(i);
        if ux[i] && uy[j] {
            return Err(Error::Unsupported(format!(
                "star product of distributions depending on the conjugate pair ({}, {})",
                x.space.coords()[i],
                x.space.coords()[j]
            )));
        }
    }
    x.try_mul(y)
}

/// `[D, p]_M = (D * p - p * D) / (iħ)`.
pub fn moyal_bracket_right(d: &DeltaSymbol, p: &Symbol) -> Result<DeltaSymbol> {
    let diff = star_poly_right(d, p)?.try_sub(&star_poly_left(p, d)?)?;
    let inv = Symbol::hbar_pow(&d.space, -1).scale(&Coefficient::I.inv());
    diff.mul_poly(&inv)
}

/// `{D, p}` for a polynomial `p`.
pub fn poisson_right(d: &DeltaSymbol, p: &Symbol) -> Result<DeltaSymbol> {
    same_space(&d.space, p.space())?;
    let mut acc = DeltaSymbol::zero(&d.space);
    for &(q, pp) in d.space.pairs() {
        acc = acc.try_add(&d.partial(q).mul_poly(&p.partial(pp))?)?;
        acc = acc.try_sub(&d.partial(pp).mul_poly(&p.partial(q))?)?;
    }
    Ok(acc)
}

/// `exp((i/ħ) Σ (b_j - a_j) B_j) * Π delta(A_j - b_j)`, evaluated order by order
/// up to `check_order`. Each order must equal the Taylor term of the shifted
/// delta with no surviving negative power of `hbar`; the resummed closed form
/// `exp(...) Π delta(A_j - (a_j + b_j)/2)` is returned.
pub fn exp_shift_star_delta(
    a_forms: &[Symbol],
    b_forms: &[Symbol],
    a: &[Symbol],
    b: &[Symbol],
    check_order: u32,
) -> Result<DeltaSymbol> {
    let n = a_forms.len();
    if b_forms.len() != n || a.len() != n || b.len() != n || n == 0 {
        return Err(Error::InvalidArgument("exp_shift_star_delta needs matching non-empty form and label lists".into()));
    }
    let space = a_forms[0].space().clone();
    let beta: Vec<Symbol> = b.iter().zip(a).map(|(bj, aj)| bj - aj).collect();
    let phase = beta.iter().zip(b_forms).fold(Symbol::zero(&space), |acc, (bt, bf)| &acc + &(bt * bf));
    let e = DeltaSymbol::exp_i_over_hbar(&phase);
    let args: Vec<Symbol> = a_forms.iter().zip(b).map(|(af, bj)| af - bj).collect();
    let mut d = DeltaSymbol::from_poly(&Symbol::one(&space));
    for arg in &args {
        d = d.try_mul(&DeltaSymbol::delta(arg))?;
    }
    let half = Coefficient::frac(1, 2);
    let c: Vec<Symbol> = beta.iter().map(|x| x.scale(&half)).collect();
    for order in 0..=check_order {
        let got = bidifferential(&e, &d, order, order)?;
        if got.min_hbar_power().is_some_and(|h| h < 0) {
            return Err(Error::Distribution(format!("negative powers of hbar survive at order {order}; forms are not conjugate")));
        }
        // Expected: Σ_{|ν| = order} Π_j c_j^{ν_j}/ν_j! delta^{(ν_j)}(A_j - b_j), times the exponential.
        let mut expected = Vec::new();
        for nu in compositions(order, n) {
            let mut poly = Symbol::one(&space);
            let mut deltas = Vec::new();
            for j in 0..n {
                poly = &poly * &c[j].pow(nu[j]).scale(&Coefficient::real(Rational::factorial(nu[j]).recip()));
                deltas.push(Delta { arg: args[j].clone(), order: nu[j] });
            }
            deltas.sort();
            expected.push(DeltaTerm { poly, phase: phase.clone(), deltas });
        }
        let expected = DeltaSymbol::from_terms(&space, expected);
        if got != expected {
            return Err(Error::Distribution(format!("order {order} does not match the shifted-delta series: got {got}, expected {expected}")));
        }
    }
    let mut out = e;
    for (arg, cj) in args.iter().zip(&c) {
        out = out.try_mul(&DeltaSymbol::delta(&(arg + cj)))?;
    }
    Ok(out)
}

/// All `n`-part compositions of `total` (weak, in lexicographic order).
fn compositions(total: u32, n: usize) -> Vec<Vec<u32>> {
    if n == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, n - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// Over `(t, phi, A, B)`.
    History,
    /// Over `(t, Pt, q, p)`, pulled back through the causal map.
    Causal,
}

/// Default labels `a_j`, `b_j` as generators of the history space.
pub fn default_labels(sys: &ExtendedSystem) -> Result<(Vec<Symbol>, Vec<Symbol>)> {
    let hs = sys.history();
    let a = (1..=sys.dof()).map(|j| Symbol::var(hs, &format!("a{j}"))).collect::<Result<_>>()?;
    let b = (1..=sys.dof()).map(|j| Symbol::var(hs, &format!("b{j}"))).collect::<Result<_>>()?;
    Ok((a, b))
}

/// Fundamental stargenfunction `rho_{a,b}` of the constraint and of the
/// histories `A_j`. Labels are coordinate-free symbols of the history space.
pub fn build_stargenfunction(sys: &ExtendedSystem, a: &[Symbol], b: &[Symbol], rep: Representation) -> Result<DeltaSymbol> {
    let hs = sys.history();
    let n = sys.dof();
    if a.len() != n || b.len() != n {
        return Err(Error::InvalidArgument(format!("expected {n} labels on each side")));
    }
    for l in a.iter().chain(b) {
        same_space(l.space(), hs)?;
        if !l.is_coordinate_free() {
            return Err(Error::InvalidArgument(format!("label `{l}` depends on coordinates")));
        }
    }
    let a_forms: Vec<Symbol> = (1..=n).map(|j| Symbol::var(hs, &format!("A{j}"))).collect::<Result<_>>()?;
    let b_forms: Vec<Symbol> = (1..=n).map(|j| Symbol::var(hs, &format!("B{j}"))).collect::<Result<_>>()?;
    let chain = exp_shift_star_delta(&a_forms, &b_forms, a, b, 4)?;
    let rho = star_disjoint(&DeltaSymbol::delta(&Symbol::var(hs, CONSTRAINT)?), &chain)?;
    match rep {
        Representation::History => Ok(rho),
        Representation::Causal => rho.pull(&sys.causal_map()?),
    }
}

/// Residuals `op * rho - left rho` and `rho * op - right rho`, canonicalized.
pub fn verify_stargen(rho: &DeltaSymbol, op: &Symbol, left: &Symbol, right: &Symbol) -> Result<(DeltaSymbol, DeltaSymbol)> {
    let l = star_poly_left(op, rho)?.try_sub(&rho.mul_poly(left)?)?;
    let r = star_poly_right(rho, op)?.try_sub(&rho.mul_poly(right)?)?;
    Ok((l, r))
}

/// Integrates out coordinates or labels. A variable is removed by an
/// order-0 delta linear in it (`∫dv delta(α v + r) F = F(-r/α)/|α|`), or, when
/// it occurs only linearly in the phase, by `∫dv exp((i/ħ) c v) = 2πħ delta(c)`.
pub fn marginalize_degeneracy(rho: &DeltaSymbol, vars: &[&str]) -> Result<DeltaSymbol> {
    let space = rho.space.clone();
    let mut cur = rho.clone();
    for name in vars {
        let v = space.var_index(name).ok_or_else(|| Error::UnknownName(name.to_string()))?;
        if v == space.hbar_var() || v == space.pi_var() {
            return Err(Error::InvalidArgument(format!("cannot integrate over `{name}`")));
        }
        let mut out = Vec::new();
        for t in &cur.terms {
            out.extend(integrate_term(t, v, &space)?);
        }
        cur = DeltaSymbol::from_terms(&space, out);
    }
    Ok(cur)
}

fn integrate_term(t: &DeltaTerm, v: usize, space: &Arc<PhaseSpace>) -> Result<Vec<DeltaTerm>> {
    let name = space.var_name(v).to_string();
    // Delta rule.
    for (j, d) in t.deltas.iter().enumerate() {
        if d.order != 0 || !d.arg.uses_var(v) {
            continue;
        }
        let Some((coef, rest)) = d.arg.split_linear(v) else { continue };
        let Some(alpha) = coef.as_constant().filter(|c| c.is_real()).map(|c| c.re) else { continue };
        let value = rest.scale(&Coefficient::real(-alpha.recip()));
        let mut others = t.clone();
        others.deltas.remove(j);
        let sub = others.map_symbols(&|s| s.substitute_var(v, &value))?;
        let mut poly = sub.poly.scale(&Coefficient::real(alpha.abs().recip()));
        if poly.uses_var(v) {
            poly = poly.substitute_var(v, &value)?;
        }
        let mut deltas = sub.deltas;
        deltas.sort();
        return Ok(vec![DeltaTerm { poly, phase: sub.phase, deltas }]);
    }
    // Fourier rule.
    let in_deltas = t.deltas.iter().any(|d| d.arg.uses_var(v));
    if !in_deltas && !t.poly.uses_var(v) && t.phase.uses_var(v) {
        if let Some((c, rest)) = t.phase.split_linear(v) {
            if !c.uses_var(v) {
                let two_pi_hbar = &Symbol::var(space, "pi")? * &Symbol::hbar_pow(space, 1);
                let two_pi_hbar = two_pi_hbar.scale(&Coefficient::from_int(2));
                let mut deltas = t.deltas.clone();
                deltas.push(Delta { arg: c, order: 0 });
                deltas.sort();
                return Ok(vec![DeltaTerm { poly: &t.poly * &two_pi_hbar, phase: rest, deltas }]);
            }
        }
    }
    if !t.uses_var(v) {
        return Err(Error::Distribution(format!("integral over `{name}` diverges: the term does not depend on it")));
    }
    Err(Error::Distribution(format!("`{name}` occurs in a position that cannot be integrated")))
}

/// `delta(z(...) - z0)` for an observable whose star exponential is classical.
pub fn observable_stargenfunction(sys: &ExtendedSystem, z: &str, z0: &Symbol, rep: Representation) -> Result<DeltaSymbol> {
    let zs = Symbol::var(sys.base(), z)?;
    let hz = sys.heisenberg_symbol(&zs, Dynamics::Quantum, DEFAULT_MAX_ORDER)?;
    if !star_exp_classical_check(&hz, 6)? {
        return Err(Error::NotClassical(z.to_string()));
    }
    same_space(z0.space(), sys.history())?;
    let g = DeltaSymbol::delta(&(&hz - z0));
    match rep {
        Representation::History => Ok(g),
        Representation::Causal => g.pull(&sys.causal_map()?),
    }
}

/// Formal factor of an unevaluated star chain.
#[derive(Debug, Clone, PartialEq)]
pub enum StarFactor {
    /// `Delta_*(arg)`, the star-delta of a symbol.
    StarDelta(Symbol),
    /// `e_*^{(i/hbar) phase}`.
    StarExp(Symbol),
}

/// Left-associated star product of formal factors, kept unevaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct StarChain {
    pub factors: Vec<StarFactor>,
}

impl StarChain {
    /// Chains are never reduced to a canonical closed form.
    pub fn is_canonical(&self) -> bool {
        false
    }
}

impl fmt::Display for StarChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .factors
            .iter()
            .map(|x| match x {
                StarFactor::StarDelta(s) => format!("Delta_*({s})"),
                StarFactor::StarExp(s) => format!("exp_*((i/hbar)*({s}))"),
            })
            .collect();
        f.write_str(&parts.join(" * "))
    }
}

/// Stargenfunction in the `(t, Pt, q, p)` representation with the plain
/// Moyal product, as the unevaluated chain
/// `Delta_*(Pt + H0) * Π_j { exp_*((i/ħ)(b_j - a_j) B_j(t,q,p)) * Delta_*(A_j(t,q,p) - b_j) }`.
pub fn schrodinger_chain(sys: &ExtendedSystem, a: &[Symbol], b: &[Symbol]) -> Result<StarChain> {
    let es = sys.extended();
    let h = sys.quantum_histories(DEFAULT_MAX_ORDER)?;
    let mut factors = vec![StarFactor::StarDelta(sys.constraint().clone())];
    for j in 0..sys.dof() {
        let (aj, bj) = (a[j].transfer(es)?, b[j].transfer(es)?);
        factors.push(StarFactor::StarExp(&(&bj - &aj) * &h.b[j]));
        factors.push(StarFactor::StarDelta(&h.a[j] - &bj));
    }
    Ok(StarChain { factors })
}
