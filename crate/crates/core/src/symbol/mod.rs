//! Exact polynomial Weyl symbols over a named flat phase space.
//!
//! A [`PhaseSpace`] lists canonical coordinates (paired as position/momentum)
//! and the commuting generators of the coefficient ring: `hbar`, `pi` and any
//! model parameters. Coordinates only carry non-negative exponents; generators
//! may carry negative ones, so `1/M` or `hbar^-1` are ordinary monomials.
//!
//! Terms are kept sorted in descending graded-lexicographic order over the
//! coordinates (generators break ties), so structural equality is value
//! equality.

mod text;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rational::{Coefficient, Rational};

pub use text::{parse_ast, Expr};

/// Upper bound on coordinates plus generators in one space.
pub const MAX_VARS: usize = 24;

/// Generators every space carries, in this order, after the coordinates.
pub const HBAR: &str = "hbar";
pub const PI: &str = "pi";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseSpace {
    coords: Vec<String>,
    pairs: Vec<(usize, usize)>,
    /// For each coordinate: its canonical partner and the sign of `J^{i,partner}`.
    partner: Vec<(usize, i8)>,
    params: Vec<String>,
}

fn valid_ident(s: &str) -> bool {
    let mut ch = s.chars();
    matches!(ch.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && ch.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && s != "i"
}

impl PhaseSpace {
    /// Builds a space from coordinate names, `(position, momentum)` pairs and
    /// extra generators. `hbar` and `pi` are always present as the first two
    /// generators.
    pub fn new(coords: &[&str], pairs: &[(&str, &str)], params: &[&str]) -> Result<Arc<Self>> {
        let coords: Vec<String> = coords.iter().map(|s| s.to_string()).collect();
        let mut all_params = vec![HBAR.to_string(), PI.to_string()];
        for p in params {
            if !all_params.iter().any(|q| q == p) {
                all_params.push(p.to_string());
            }
        }
        let n = coords.len();
        if n + all_params.len() > MAX_VARS {
            return Err(Error::InvalidSpace(format!(
                "{} coordinates and {} generators exceed the limit of {MAX_VARS}",
                n,
                all_params.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in coords.iter().chain(all_params.iter()) {
            if !valid_ident(name) {
                return Err(Error::InvalidSpace(format!("`{name}` is not a valid name")));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::InvalidSpace(format!("duplicate name `{name}`")));
            }
        }
        let idx = |s: &str| {
            coords
                .iter()
                .position(|c| c == s)
                .ok_or_else(|| Error::InvalidSpace(format!("pair refers to unknown coordinate `{s}`")))
        };
        let mut partner = vec![(usize::MAX, 0i8); n];
        let mut pair_idx = Vec::with_capacity(pairs.len());
        for (q, p) in pairs {
            let (qi, pi) = (idx(q)?, idx(p)?);
            if qi == pi || partner[qi].0 != usize::MAX || partner[pi].0 != usize::MAX {
                return Err(Error::InvalidSpace(format!("coordinate paired twice in ({q}, {p})")));
            }
            partner[qi] = (pi, 1);
            partner[pi] = (qi, -1);
            pair_idx.push((qi, pi));
        }
        if let Some(i) = partner.iter().position(|p| p.0 == usize::MAX) {
            return Err(Error::InvalidSpace(format!("coordinate `{}` is not paired", coords[i])));
        }
        Ok(Arc::new(PhaseSpace { coords, pairs: pair_idx, partner, params: all_params }))
    }

    /// `q1..qn, p1..pn` with the given generators.
    pub fn canonical(n: usize, params: &[&str]) -> Result<Arc<Self>> {
        let qs: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
        let ps: Vec<String> = (1..=n).map(|i| format!("p{i}")).collect();
        let coords: Vec<&str> = qs.iter().chain(ps.iter()).map(|s| s.as_str()).collect();
        let pairs: Vec<(&str, &str)> = qs.iter().zip(ps.iter()).map(|(q, p)| (q.as_str(), p.as_str())).collect();
        Self::new(&coords, &pairs, params)
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn ncoords(&self) -> usize {
        self.coords.len()
    }

    pub fn nvars(&self) -> usize {
        self.coords.len() + self.params.len()
    }

    /// Partner index and sign `J^{i,partner}` (`+1` for positions).
    pub fn partner(&self, i: usize) -> (usize, i8) {
        self.partner[i]
    }

    /// Entry `J^{ij}` of the block-canonical symplectic matrix.
    pub fn symplectic(&self, i: usize, j: usize) -> i8 {
        let (p, s) = self.partner[i];
        if p == j {
            s
        } else {
            0
        }
    }

    pub fn coord_index(&self, name: &str) -> Result<usize> {
        self.coords
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCoordinate(name.to_string()))
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|c| c == name)
    }

    /// Variable slot (coordinate or generator) for a name.
    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.coords
            .iter()
            .position(|c| c == name)
            .or_else(|| self.param_index(name).map(|j| self.coords.len() + j))
    }

    pub fn var_name(&self, v: usize) -> &str {
        if v < self.coords.len() {
            &self.coords[v]
        } else {
            &self.params[v - self.coords.len()]
        }
    }

    pub fn hbar_var(&self) -> usize {
        self.coords.len()
    }

    pub fn pi_var(&self) -> usize {
        self.coords.len() + 1
    }

    /// Same coordinates and pairing, generators extended by `extra`.
    pub fn with_params(&self, extra: &[&str]) -> Result<Arc<Self>> {
        let coords: Vec<&str> = self.coords.iter().map(|s| s.as_str()).collect();
        let pairs: Vec<(&str, &str)> = self
            .pairs
            .iter()
            .map(|&(q, p)| (self.coords[q].as_str(), self.coords[p].as_str()))
            .collect();
        let mut params: Vec<&str> = self.params.iter().map(|s| s.as_str()).collect();
        params.extend_from_slice(extra);
        Self::new(&coords, &pairs, &params)
    }

    fn describe(&self) -> String {
        format!("{}; {}", self.coords.join(","), self.params.join(","))
    }
}

pub(crate) fn same_space(a: &Arc<PhaseSpace>, b: &Arc<PhaseSpace>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::SpaceMismatch(a.describe(), b.describe()))
    }
}

/// Exponent vector over coordinates followed by generators. `deg` caches the
/// total coordinate degree so the derived ordering is graded lexicographic.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial {
    deg: u16,
    exps: [i16; MAX_VARS],
}

impl Monomial {
    pub const ONE: Monomial = Monomial { deg: 0, exps: [0; MAX_VARS] };

    pub fn var(v: usize, ncoords: usize, e: i16) -> Self {
        let mut m = Self::ONE;
        m.exps[v] = e;
        if v < ncoords {
            m.deg = e as u16;
        }
        m
    }

    pub fn exp(&self, v: usize) -> i16 {
        self.exps[v]
    }

    pub fn exps(&self) -> &[i16; MAX_VARS] {
        &self.exps
    }

    pub fn degree(&self) -> u16 {
        self.deg
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut m = *self;
        for (a, b) in m.exps.iter_mut().zip(other.exps.iter()) {
            *a = a.checked_add(*b).expect("exponent overflow");
        }
        m.deg += other.deg;
        m
    }

    pub(crate) fn set(&mut self, v: usize, e: i16, ncoords: usize) {
        if v < ncoords {
            self.deg = self.deg - self.exps[v] as u16 + e as u16;
        }
        self.exps[v] = e;
    }

    /// Part of the monomial living on generators only.
    pub fn param_part(&self, ncoords: usize) -> Monomial {
        let mut m = *self;
        for e in m.exps[..ncoords].iter_mut() {
            *e = 0;
        }
        m.deg = 0;
        m
    }

    pub fn coord_part(&self, ncoords: usize) -> Monomial {
        let mut m = *self;
        for e in m.exps[ncoords..].iter_mut() {
            *e = 0;
        }
        m
    }

    pub fn inverse(&self) -> Monomial {
        debug_assert_eq!(self.deg, 0);
        let mut m = *self;
        for e in m.exps.iter_mut() {
            *e = -*e;
        }
        m
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = self.exps.iter().rposition(|&e| e != 0).map_or(0, |i| i + 1);
        write!(f, "{:?}", &self.exps[..last])
    }
}

pub(crate) type TermMap = HashMap<Monomial, Coefficient>;

pub(crate) fn accumulate(map: &mut TermMap, m: Monomial, c: Coefficient) {
    if c.is_zero() {
        return;
    }
    match map.entry(m) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            *e.get_mut() += &c;
            if e.get().is_zero() {
                e.remove();
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(c);
        }
    }
}

/// Polynomial Weyl symbol with exact Gaussian-rational coefficients.
#[derive(Clone)]
pub struct Symbol {
    space: Arc<PhaseSpace>,
    terms: Vec<(Monomial, Coefficient)>,
}

impl PartialEq for Symbol {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.space, &other.space) || self.space == other.space) && self.terms == other.terms
    }
}

impl Eq for Symbol {}

impl PartialOrd for Symbol {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Orders by terms only; callers compare symbols of one space.
impl Ord for Symbol {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.terms.iter().zip(other.terms.iter()) {
            match b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        self.terms.len().cmp(&other.terms.len())
    }
}

impl std::hash::Hash for Symbol {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.terms.hash(state);
    }
}

impl Symbol {
    pub fn zero(space: &Arc<PhaseSpace>) -> Self {
        Symbol { space: space.clone(), terms: Vec::new() }
    }

    pub fn one(space: &Arc<PhaseSpace>) -> Self {
        Self::constant(space, Coefficient::ONE)
    }

    pub fn constant(space: &Arc<PhaseSpace>, c: Coefficient) -> Self {
        Self::term(space, Monomial::ONE, c)
    }

    pub fn int(space: &Arc<PhaseSpace>, n: i64) -> Self {
        Self::constant(space, Coefficient::from_int(n))
    }

    pub fn rational(space: &Arc<PhaseSpace>, r: Rational) -> Self {
        Self::constant(space, Coefficient::real(r))
    }

    pub fn term(space: &Arc<PhaseSpace>, m: Monomial, c: Coefficient) -> Self {
        let terms = if c.is_zero() { Vec::new() } else { vec![(m, c)] };
        Symbol { space: space.clone(), terms }
    }

    /// Coordinate or generator by name.
    pub fn var(space: &Arc<PhaseSpace>, name: &str) -> Result<Self> {
        let v = space.var_index(name).ok_or_else(|| Error::UnknownName(name.to_string()))?;
        Ok(Self::term(space, Monomial::var(v, space.ncoords(), 1), Coefficient::ONE))
    }

    pub fn coord(space: &Arc<PhaseSpace>, i: usize) -> Self {
        Self::term(space, Monomial::var(i, space.ncoords(), 1), Coefficient::ONE)
    }

    /// `hbar^e`
    pub fn hbar_pow(space: &Arc<PhaseSpace>, e: i16) -> Self {
        Self::term(space, Monomial::var(space.hbar_var(), space.ncoords(), e), Coefficient::ONE)
    }

    /// Parses the canonical text form (or any expression in that grammar).
    pub fn parse(space: &Arc<PhaseSpace>, src: &str) -> Result<Self> {
        text::parse_symbol(space, src)
    }

    pub(crate) fn from_map(space: &Arc<PhaseSpace>, map: TermMap) -> Self {
        let mut terms: Vec<_> = map.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        terms.sort_unstable_by(|a, b| b.0.cmp(&a.0));
        Symbol { space: space.clone(), terms }
    }

    pub(crate) fn from_terms(space: &Arc<PhaseSpace>, terms: impl IntoIterator<Item = (Monomial, Coefficient)>) -> Self {
        let mut map = TermMap::new();
        for (m, c) in terms {
            accumulate(&mut map, m, c);
        }
        Self::from_map(space, map)
    }

    pub fn space(&self) -> &Arc<PhaseSpace> {
        &self.space
    }

    pub fn terms(&self) -> &[(Monomial, Coefficient)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total coordinate degree; `-1` for the zero symbol.
    pub fn degree(&self) -> i32 {
        self.terms.first().map_or(-1, |(m, _)| m.degree() as i32)
    }

    /// Highest exponent of variable slot `v` (coordinates or generators).
    pub fn degree_in(&self, v: usize) -> i32 {
        self.terms.iter().map(|(m, _)| m.exp(v) as i32).max().unwrap_or(-1)
    }

    /// True when no coordinate occurs (generators may).
    pub fn is_coordinate_free(&self) -> bool {
        self.degree() <= 0
    }

    /// Set of coordinates that occur.
    pub fn coords_used(&self) -> Vec<bool> {
        let n = self.space.ncoords();
        let mut used = vec![false; n];
        for (m, _) in &self.terms {
            for (i, u) in used.iter_mut().enumerate() {
                *u |= m.exp(i) != 0;
            }
        }
        used
    }

    pub fn uses_var(&self, v: usize) -> bool {
        self.terms.iter().any(|(m, _)| m.exp(v) != 0)
    }

    /// The single coefficient when this is a rational/complex constant.
    pub fn as_constant(&self) -> Option<Coefficient> {
        match self.terms.as_slice() {
            [] => Some(Coefficient::ZERO),
            [(m, c)] if *m == Monomial::ONE => Some(c.clone()),
            _ => None,
        }
    }

    /// Invertible elements of the coefficient ring: one term, no coordinates.
    pub fn as_unit(&self) -> Option<(Coefficient, Monomial)> {
        match self.terms.as_slice() {
            [(m, c)] if m.degree() == 0 => Some((c.clone(), *m)),
            _ => None,
        }
    }

    pub fn inverse_unit(&self) -> Result<Symbol> {
        let (c, m) = self
            .as_unit()
            .ok_or_else(|| Error::NotInvertible(format!("`{self}` is not a monomial in the generators")))?;
        Ok(Symbol::term(&self.space, m.inverse(), c.inv()))
    }

    pub fn try_add(&self, other: &Symbol) -> Result<Symbol> {
        same_space(&self.space, &other.space)?;
        Ok(self.merge(other, false))
    }

    pub fn try_sub(&self, other: &Symbol) -> Result<Symbol> {
        same_space(&self.space, &other.space)?;
        Ok(self.merge(other, true))
    }

    pub fn try_mul(&self, other: &Symbol) -> Result<Symbol> {
        same_space(&self.space, &other.space)?;
        Ok(self.mul_unchecked(other))
    }

    fn merge(&self, other: &Symbol, negate: bool) -> Symbol {
        let mut out = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.terms, &other.terms);
        while i < a.len() || j < b.len() {
            let ord = if i == a.len() {
                Ordering::Less
            } else if j == b.len() {
                Ordering::Greater
            } else {
                a[i].0.cmp(&b[j].0)
            };
            match ord {
                Ordering::Greater => {
                    out.push(a[i].clone());
                    i += 1;
                }
                Ordering::Less => {
                    let c = if negate { -&b[j].1 } else { b[j].1.clone() };
                    out.push((b[j].0, c));
                    j += 1;
                }
                Ordering::Equal => {
                    let c = if negate { &a[i].1 - &b[j].1 } else { &a[i].1 + &b[j].1 };
                    if !c.is_zero() {
                        out.push((a[i].0, c));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        Symbol { space: self.space.clone(), terms: out }
    }

    pub(crate) fn mul_unchecked(&self, other: &Symbol) -> Symbol {
        if self.is_zero() || other.is_zero() {
            return Symbol::zero(&self.space);
        }
        let mut map = TermMap::with_capacity(self.terms.len() * other.terms.len());
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                accumulate(&mut map, ma.mul(mb), ca * cb);
            }
        }
        Symbol::from_map(&self.space, map)
    }

    pub fn scale(&self, c: &Coefficient) -> Symbol {
        if c.is_zero() {
            return Symbol::zero(&self.space);
        }
        Symbol {
            space: self.space.clone(),
            terms: self.terms.iter().map(|(m, d)| (*m, d * c)).collect(),
        }
    }

    pub fn mul_monomial(&self, m: &Monomial, c: &Coefficient) -> Symbol {
        if c.is_zero() {
            return Symbol::zero(&self.space);
        }
        // Multiplying by a monomial preserves the graded lex order.
        Symbol {
            space: self.space.clone(),
            terms: self.terms.iter().map(|(n, d)| (n.mul(m), d * c)).collect(),
        }
    }

    /// Non-negative integer power by repeated squaring.
    pub fn pow(&self, e: u32) -> Symbol {
        let mut acc = Symbol::one(&self.space);
        let mut base = self.clone();
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul_unchecked(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_unchecked(&base);
            }
        }
        acc
    }

    /// Formal partial derivative with respect to coordinate `i`.
    pub fn partial(&self, i: usize) -> Symbol {
        assert!(i < self.space.ncoords(), "partial: coordinate index out of range");
        let n = self.space.ncoords();
        let mut terms = Vec::new();
        for (m, c) in &self.terms {
            let e = m.exp(i);
            if e > 0 {
                let mut m2 = *m;
                m2.set(i, e - 1, n);
                terms.push((m2, c.scale(&Rational::from_int(e as i64))));
            }
        }
        // Differentiation can reorder monomials of equal degree.
        Symbol::from_terms(&self.space, terms)
    }

    pub fn partial_by_name(&self, name: &str) -> Result<Symbol> {
        Ok(self.partial(self.space.coord_index(name)?))
    }

    /// Repeated partial derivatives, one entry per coordinate.
    pub fn partial_multi(&self, orders: &[u32]) -> Symbol {
        let n = self.space.ncoords();
        let mut terms = Vec::new();
        'outer: for (m, c) in &self.terms {
            let mut m2 = *m;
            let mut factor = Rational::ONE;
            for (i, &k) in orders.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                let e = m.exp(i) as i64;
                if e < k as i64 {
                    continue 'outer;
                }
                for j in 0..k as i64 {
                    factor = &factor * &Rational::from_int(e - j);
                }
                m2.set(i, (e - k as i64) as i16, n);
            }
            terms.push((m2, c.scale(&factor)));
        }
        Symbol::from_terms(&self.space, terms)
    }

    /// Classical Poisson bracket `Σ ∂a/∂q ∂b/∂p − ∂a/∂p ∂b/∂q`.
    pub fn poisson(&self, other: &Symbol) -> Result<Symbol> {
        same_space(&self.space, &other.space)?;
        let mut acc = Symbol::zero(&self.space);
        for &(q, p) in self.space.pairs() {
            let t1 = self.partial(q).mul_unchecked(&other.partial(p));
            let t2 = self.partial(p).mul_unchecked(&other.partial(q));
            acc = acc.merge(&t1, false).merge(&t2, true);
        }
        Ok(acc)
    }

    /// Composition: each bound coordinate of `self` is replaced by a symbol over
    /// `target`; generators are carried over by name.
    pub fn substitute(&self, bindings: &HashMap<String, Symbol>, target: &Arc<PhaseSpace>) -> Result<Symbol> {
        let mut slots: Vec<Option<&Symbol>> = vec![None; self.space.ncoords()];
        for (name, sym) in bindings {
            let i = self.space.coord_index(name)?;
            same_space(sym.space(), target)?;
            slots[i] = Some(sym);
        }
        self.substitute_slots(&slots, target)
    }

    pub(crate) fn substitute_slots(&self, slots: &[Option<&Symbol>], target: &Arc<PhaseSpace>) -> Result<Symbol> {
        let n = self.space.ncoords();
        let param_map = self.param_map(target)?;
        let mut powers: Vec<Vec<Symbol>> = vec![Vec::new(); n];
        for i in 0..n {
            let max = self.degree_in(i);
            if max <= 0 {
                continue;
            }
            let b = slots[i].ok_or_else(|| Error::Unbound(self.space.coords[i].clone()))?;
            let mut pw = vec![Symbol::one(target), b.clone()];
            for k in 2..=max as usize {
                let next = pw[k - 1].mul_unchecked(b);
                pw.push(next);
            }
            powers[i] = pw;
        }
        let tn = target.ncoords();
        let mut map = TermMap::new();
        for (m, c) in &self.terms {
            let mut pm = Monomial::ONE;
            for (j, &t) in param_map.iter().enumerate() {
                let e = m.exp(n + j);
                if e != 0 {
                    pm.set(t, e, tn);
                }
            }
            let mut cur: Vec<(Monomial, Coefficient)> = vec![(pm, c.clone())];
            for i in 0..n {
                let e = m.exp(i) as usize;
                if e == 0 {
                    continue;
                }
                let p = &powers[i][e];
                let mut next = TermMap::with_capacity(cur.len() * p.terms.len());
                for (ma, ca) in &cur {
                    for (mb, cb) in &p.terms {
                        accumulate(&mut next, ma.mul(mb), ca * cb);
                    }
                }
                cur = next.into_iter().collect();
            }
            for (mm, cc) in cur {
                accumulate(&mut map, mm, cc);
            }
        }
        Ok(Symbol::from_map(target, map))
    }

    /// Target variable slot for each generator of this space; generators that
    /// occur must exist in the target.
    fn param_map(&self, target: &Arc<PhaseSpace>) -> Result<Vec<usize>> {
        let n = self.space.ncoords();
        let used: Vec<bool> = (0..self.space.params.len()).map(|j| self.uses_var(n + j)).collect();
        self.space
            .params
            .iter()
            .enumerate()
            .map(|(j, name)| match target.var_index(name) {
                Some(v) if v >= target.ncoords() => Ok(v),
                _ if !used[j] => Ok(usize::MAX),
                _ => Err(Error::UnknownName(name.clone())),
            })
            .map(|r| r.map(|v| if v == usize::MAX { 0 } else { v }))
            .collect()
    }

    /// Re-expresses the symbol in another space that shares the names it uses.
    pub fn transfer(&self, target: &Arc<PhaseSpace>) -> Result<Symbol> {
        if Arc::ptr_eq(&self.space, target) || *self.space == **target {
            return Ok(Symbol { space: target.clone(), terms: self.terms.clone() });
        }
        let n = self.space.ncoords();
        let tn = target.ncoords();
        let mut coord_map = vec![0usize; n];
        let used = self.coords_used();
        for i in 0..n {
            if used[i] {
                coord_map[i] = target
                    .coords
                    .iter()
                    .position(|c| *c == self.space.coords[i])
                    .ok_or_else(|| Error::UnknownCoordinate(self.space.coords[i].clone()))?;
            }
        }
        let param_map = self.param_map(target)?;
        let terms = self.terms.iter().map(|(m, c)| {
            let mut out = Monomial::ONE;
            for i in 0..n {
                if m.exp(i) != 0 {
                    out.set(coord_map[i], m.exp(i), tn);
                }
            }
            for (j, &t) in param_map.iter().enumerate() {
                if m.exp(n + j) != 0 {
                    out.set(t, m.exp(n + j), tn);
                }
            }
            (out, c.clone())
        });
        Ok(Symbol::from_terms(target, terms))
    }

    /// Replaces a generator by a symbol of the same space. Negative powers of
    /// the generator require the replacement to be invertible.
    pub fn substitute_param(&self, name: &str, value: &Symbol) -> Result<Symbol> {
        same_space(&self.space, &value.space)?;
        let v = self
            .space
            .param_index(name)
            .map(|j| self.space.ncoords() + j)
            .ok_or_else(|| Error::UnknownName(name.to_string()))?;
        if !self.uses_var(v) {
            return Ok(self.clone());
        }
        let inv = if self.terms.iter().any(|(m, _)| m.exp(v) < 0) { Some(value.inverse_unit()?) } else { None };
        let n = self.space.ncoords();
        let mut acc = TermMap::new();
        for (m, c) in &self.terms {
            let e = m.exp(v);
            let mut base = *m;
            base.set(v, 0, n);
            let factor = if e >= 0 {
                value.pow(e as u32)
            } else {
                inv.as_ref().expect("inverse computed").pow((-e) as u32)
            };
            for (fm, fc) in &factor.terms {
                accumulate(&mut acc, base.mul(fm), c * fc);
            }
        }
        Ok(Symbol::from_map(&self.space, acc))
    }

    /// Derivative with respect to any variable slot; generators may carry negative powers.
    pub fn partial_var(&self, v: usize) -> Symbol {
        assert!(v < self.space.nvars(), "partial_var: slot out of range");
        let n = self.space.ncoords();
        let terms: Vec<_> = self
            .terms
            .iter()
            .filter(|(m, _)| m.exp(v) != 0)
            .map(|(m, c)| {
                let e = m.exp(v);
                let mut m2 = *m;
                m2.set(v, e - 1, n);
                (m2, c.scale(&Rational::from_int(e as i64)))
            })
            .collect();
        Symbol::from_terms(&self.space, terms)
    }

    /// Smallest exponent of slot `v` over all terms (0 when absent).
    pub fn min_exp(&self, v: usize) -> i16 {
        self.terms.iter().map(|(m, _)| m.exp(v)).min().unwrap_or(0).min(0)
    }

    /// Replaces one variable slot (coordinate or generator) by `value`.
    pub fn substitute_var(&self, v: usize, value: &Symbol) -> Result<Symbol> {
        same_space(&self.space, &value.space)?;
        if !self.uses_var(v) {
            return Ok(self.clone());
        }
        if v >= self.space.ncoords() {
            let name = self.space.var_name(v).to_string();
            return self.substitute_param(&name, value);
        }
        let ids: Vec<Symbol> = (0..self.space.ncoords()).map(|i| Symbol::coord(&self.space, i)).collect();
        let slots: Vec<Option<&Symbol>> = ids.iter().enumerate().map(|(i, s)| Some(if i == v { value } else { s })).collect();
        self.substitute_slots(&slots, &self.space)
    }

    /// Writes `self = coef * v + rest` when every term has degree 0 or 1 in slot `v`.
    pub fn split_linear(&self, v: usize) -> Option<(Symbol, Symbol)> {
        let n = self.space.ncoords();
        let mut coef = Vec::new();
        let mut rest = Vec::new();
        for (m, c) in &self.terms {
            match m.exp(v) {
                0 => rest.push((*m, c.clone())),
                1 => {
                    let mut m2 = *m;
                    m2.set(v, 0, n);
                    coef.push((m2, c.clone()));
                }
                _ => return None,
            }
        }
        Some((Symbol::from_terms(&self.space, coef), Symbol::from_terms(&self.space, rest)))
    }

    /// Substitutes rational values for generators.
    pub fn specialize(&self, values: &[(&str, Rational)]) -> Result<Symbol> {
        let mut out = self.clone();
        for (name, r) in values {
            if r.is_zero() && out.terms.iter().any(|(m, _)| {
                self.space.param_index(name).is_some_and(|j| m.exp(self.space.ncoords() + j) < 0)
            }) {
                return Err(Error::NotInvertible(format!("`{name}` = 0 appears with a negative power")));
            }
            out = out.substitute_param(name, &Symbol::rational(&self.space, r.clone()))?;
        }
        Ok(out)
    }

    /// Coefficient of `hbar^k`, as a symbol without `hbar`.
    pub fn hbar_coefficient(&self, k: i16) -> Symbol {
        let h = self.space.hbar_var();
        let n = self.space.ncoords();
        let terms = self.terms.iter().filter(|(m, _)| m.exp(h) == k).map(|(m, c)| {
            let mut m2 = *m;
            m2.set(h, 0, n);
            (m2, c.clone())
        });
        Symbol::from_terms(&self.space, terms)
    }

    /// Smallest and largest power of `hbar` present.
    pub fn hbar_range(&self) -> Option<(i16, i16)> {
        let h = self.space.hbar_var();
        let mut it = self.terms.iter().map(|(m, _)| m.exp(h));
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), e| (lo.min(e), hi.max(e))))
    }

    pub fn conj(&self) -> Symbol {
        Symbol { space: self.space.clone(), terms: self.terms.iter().map(|(m, c)| (*m, c.conj())).collect() }
    }

    pub fn is_real(&self) -> bool {
        self.terms.iter().all(|(_, c)| c.is_real())
    }

    /// Numerical value at a point. `coords` are coordinate values in space
    /// order; `params` gives every generator's value in space order.
    pub fn eval(&self, coords: &[f64], params: &[f64]) -> (f64, f64) {
        let n = self.space.ncoords();
        let (mut re, mut im) = (0.0, 0.0);
        for (m, c) in &self.terms {
            let mut v = 1.0;
            for (i, &x) in coords.iter().enumerate().take(n) {
                let e = m.exp(i);
                if e != 0 {
                    v *= x.powi(e as i32);
                }
            }
            for (j, &x) in params.iter().enumerate() {
                let e = m.exp(n + j);
                if e != 0 {
                    v *= x.powi(e as i32);
                }
            }
            let (cr, ci) = c.to_c64();
            re += v * cr;
            im += v * ci;
        }
        (re, im)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&text::print_symbol(self))
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Symbol({self})")
    }
}

// Operator sugar for symbols already known to share a space; mixing spaces
// through these panics. Use the `try_*` methods on untrusted input.
impl<'a> Add<&'a Symbol> for &'a Symbol {
    type Output = Symbol;
    fn add(self, rhs: &Symbol) -> Symbol {
        self.try_add(rhs).expect("symbol addition across phase spaces")
    }
}

impl<'a> Sub<&'a Symbol> for &'a Symbol {
    type Output = Symbol;
    fn sub(self, rhs: &Symbol) -> Symbol {
        self.try_sub(rhs).expect("symbol subtraction across phase spaces")
    }
}

impl<'a> Mul<&'a Symbol> for &'a Symbol {
    type Output = Symbol;
    fn mul(self, rhs: &Symbol) -> Symbol {
        self.try_mul(rhs).expect("symbol product across phase spaces")
    }
}

impl Neg for &Symbol {
    type Output = Symbol;
    fn neg(self) -> Symbol {
        self.scale(&Coefficient::from_int(-1))
    }
}

impl Add for Symbol {
    type Output = Symbol;
    fn add(self, rhs: Symbol) -> Symbol {
        &self + &rhs
    }
}

impl Sub for Symbol {
    type Output = Symbol;
    fn sub(self, rhs: Symbol) -> Symbol {
        &self - &rhs
    }
}

impl Mul for Symbol {
    type Output = Symbol;
    fn mul(self, rhs: Symbol) -> Symbol {
        &self * &rhs
    }
}

impl Neg for Symbol {
    type Output = Symbol;
    fn neg(self) -> Symbol {
        -&self
    }
}

#[cfg(test)]
mod tests;
