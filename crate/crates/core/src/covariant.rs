//! Polynomial phase-space diffeomorphisms and the covariant star product.
//!
//! A [`Diffeomorphism`] relates a flat Darboux space `O` (the *source*, where
//! the Moyal product is the canonical one) to new coordinates `O'` (the
//! *target*). Both branches are stored explicitly:
//!
//! * `forward`: every target coordinate `O'^i` as a polynomial in `O`;
//! * `inverse`: every source coordinate `O^b` as a polynomial in `O'`.
//!
//! In target coordinates the star product is carried by
//! `J'^{ij} = ∂O'^i/∂O^k ∂O'^j/∂O^l J^{kl}` and the flat connection
//! `Γ'^i_{jk} = ∂O'^i/∂O^b ∂²O^b/∂O'^j∂O'^k`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::moyal::{star, star_truncated};
use crate::rational::{Coefficient, Rational};
use crate::symbol::{same_space, PhaseSpace, Symbol};

#[derive(Debug, Clone)]
pub struct Diffeomorphism {
    source: Arc<PhaseSpace>,
    target: Arc<PhaseSpace>,
    forward: Vec<Symbol>,
    inverse: Vec<Symbol>,
}

fn compose(a: &Symbol, images: &[Symbol], target: &Arc<PhaseSpace>) -> Result<Symbol> {
    let slots: Vec<Option<&Symbol>> = images.iter().map(Some).collect();
    a.substitute_slots(&slots, target)
}

impl Diffeomorphism {
    /// Checks both round trips exactly before accepting the pair of branches.
    pub fn new(source: Arc<PhaseSpace>, target: Arc<PhaseSpace>, forward: Vec<Symbol>, inverse: Vec<Symbol>) -> Result<Self> {
        if forward.len() != target.ncoords() || inverse.len() != source.ncoords() || source.ncoords() != target.ncoords() {
            return Err(Error::InvalidArgument(format!(
                "map needs {} forward and {} inverse components, got {} and {}",
                target.ncoords(),
                source.ncoords(),
                forward.len(),
                inverse.len()
            )));
        }
        for f in &forward {
            same_space(f.space(), &source)?;
        }
        for g in &inverse {
            same_space(g.space(), &target)?;
        }
        let d = Diffeomorphism { source, target, forward, inverse };
        for (i, f) in d.forward.iter().enumerate() {
            if compose(f, &d.inverse, &d.target)? != Symbol::coord(&d.target, i) {
                return Err(Error::NotADiffeomorphism(d.target.coords()[i].clone()));
            }
        }
        for (b, g) in d.inverse.iter().enumerate() {
            if compose(g, &d.forward, &d.source)? != Symbol::coord(&d.source, b) {
                return Err(Error::NotADiffeomorphism(d.source.coords()[b].clone()));
            }
        }
        Ok(d)
    }

    pub fn identity(space: &Arc<PhaseSpace>) -> Self {
        let coords: Vec<Symbol> = (0..space.ncoords()).map(|i| Symbol::coord(space, i)).collect();
        Diffeomorphism { source: space.clone(), target: space.clone(), forward: coords.clone(), inverse: coords }
    }

    pub fn source(&self) -> &Arc<PhaseSpace> {
        &self.source
    }

    pub fn target(&self) -> &Arc<PhaseSpace> {
        &self.target
    }

    /// Target coordinates as functions of source coordinates.
    pub fn forward(&self) -> &[Symbol] {
        &self.forward
    }

    /// Source coordinates as functions of target coordinates.
    pub fn inverse(&self) -> &[Symbol] {
        &self.inverse
    }

    /// Expresses a function of target coordinates in source coordinates.
    pub fn push(&self, a: &Symbol) -> Result<Symbol> {
        same_space(a.space(), &self.target)?;
        compose(a, &self.forward, &self.source)
    }

    /// Expresses a function of source coordinates in target coordinates.
    pub fn pull(&self, a: &Symbol) -> Result<Symbol> {
        same_space(a.space(), &self.source)?;
        compose(a, &self.inverse, &self.target)
    }

    /// `∂O'^i/∂O^b`, expressed in target coordinates.
    fn forward_jacobian(&self) -> Result<Vec<Vec<Symbol>>> {
        let n = self.source.ncoords();
        self.forward
            .iter()
            .map(|f| (0..n).map(|b| self.pull(&f.partial(b))).collect())
            .collect()
    }
}

/// Matrix of symbols over the target space; `entries[i][j] = J'^{ij}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix {
    pub entries: Vec<Vec<Symbol>>,
}

impl SymplecticMatrix {
    pub fn canonical(space: &Arc<PhaseSpace>) -> Self {
        let n = space.ncoords();
        let entries = (0..n)
            .map(|i| (0..n).map(|j| Symbol::int(space, space.symplectic(i, j) as i64)).collect())
            .collect();
        SymplecticMatrix { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn is_antisymmetric(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| self.entries[i][j] == -&self.entries[j][i]))
    }
}

/// `entries[i][j][k] = Γ'^i_{jk}` over the target space.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub entries: Vec<Vec<Vec<Symbol>>>,
}

impl Connection {
    pub fn zero(space: &Arc<PhaseSpace>) -> Self {
        let n = space.ncoords();
        Connection { entries: vec![vec![vec![Symbol::zero(space); n]; n]; n] }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().flatten().flatten().all(Symbol::is_zero)
    }

    /// Nonzero entries as `(i, j, k, Γ^i_{jk})` with `j <= k`, sorted by index.
    pub fn nonzero(&self) -> Vec<(usize, usize, usize, &Symbol)> {
        let n = self.dim();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in j..n {
                    let g = &self.entries[i][j][k];
                    if !g.is_zero() {
                        out.push((i, j, k, g));
                    }
                }
            }
        }
        out
    }
}

/// `J'^{ij} = {O'^i, O'^j}_O`, expressed in target coordinates.
pub fn jacobian_symplectic(d: &Diffeomorphism) -> Result<SymplecticMatrix> {
    let n = d.target.ncoords();
    let zero = Symbol::zero(&d.target);
    let mut entries = vec![vec![zero; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let pb = d.forward[i].poisson(&d.forward[j])?;
            let e = d.pull(&pb)?;
            entries[j][i] = -&e;
            entries[i][j] = e;
        }
    }
    Ok(SymplecticMatrix { entries })
}

/// `Γ'^i_{jk} = Σ_b ∂O'^i/∂O^b · ∂²O^b/∂O'^j∂O'^k`, symmetric in `(j, k)`.
pub fn christoffel(d: &Diffeomorphism) -> Result<Connection> {
    let n = d.target.ncoords();
    let jac = d.forward_jacobian()?;
    let mut conn = Connection::zero(&d.target);
    let hess: Vec<Vec<Vec<Symbol>>> = d
        .inverse
        .iter()
        .map(|g| (0..n).map(|j| (0..n).map(|k| g.partial(j).partial(k)).collect()).collect())
        .collect();
    for i in 0..n {
        for j in 0..n {
            for k in j..n {
                let mut acc = Symbol::zero(&d.target);
                for b in 0..n {
                    let h = &hess[b][j][k];
                    if !h.is_zero() {
                        acc = &acc + &(&jac[i][b] * h);
                    }
                }
                conn.entries[i][k][j] = acc.clone();
                conn.entries[i][j][k] = acc;
            }
        }
    }
    Ok(conn)
}

/// Covariant derivatives of a scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariantDerivative {
    /// `∇_i a = ∂_i a`
    Gradient(Vec<Symbol>),
    /// `∇_i∇_j a = ∂_i∂_j a - Γ^k_{ij} ∂_k a`
    Hessian(Vec<Vec<Symbol>>),
}

pub fn covariant_derivative(a: &Symbol, conn: &Connection, order: u32) -> Result<CovariantDerivative> {
    let n = a.space().ncoords();
    if conn.dim() != n {
        return Err(Error::InvalidArgument(format!("connection has dimension {}, symbol space {}", conn.dim(), n)));
    }
    let grad: Vec<Symbol> = (0..n).map(|i| a.partial(i)).collect();
    match order {
        1 => Ok(CovariantDerivative::Gradient(grad)),
        2 => Ok(CovariantDerivative::Hessian(covariant_hessian(a, &grad, conn)?)),
        _ => Err(Error::InvalidArgument(format!("covariant derivative order must be 1 or 2, got {order}"))),
    }
}

fn covariant_hessian(a: &Symbol, grad: &[Symbol], conn: &Connection) -> Result<Vec<Vec<Symbol>>> {
    let n = grad.len();
    let mut out = vec![vec![Symbol::zero(a.space()); n]; n];
    for i in 0..n {
        for j in i..n {
            let mut h = grad[i].partial(j);
            for (k, g) in grad.iter().enumerate() {
                let c = &conn.entries[k][i][j];
                if !c.is_zero() && !g.is_zero() {
                    h = h.try_sub(&c.try_mul(g)?)?;
                }
            }
            out[j][i] = h.clone();
            out[i][j] = h;
        }
    }
    Ok(out)
}

/// Reference semantics of the covariant product: push both factors to the
/// flat source, take the Moyal product there, pull the result back.
pub fn covariant_star_pullback(a: &Symbol, b: &Symbol, d: &Diffeomorphism) -> Result<Symbol> {
    let p = star(&d.push(a)?, &d.push(b)?)?;
    d.pull(&p)
}

/// As [`covariant_star_pullback`], keeping bidifferential orders `<= max_order`.
pub fn covariant_star_pullback_truncated(a: &Symbol, b: &Symbol, d: &Diffeomorphism, max_order: u32) -> Result<Symbol> {
    let p = star_truncated(&d.push(a)?, &d.push(b)?, max_order)?;
    d.pull(&p)
}

/// `a b + (iħ/2) ∂_i a J^{ij} ∂_j b + (1/2)(iħ/2)² J^{ij} J^{kl} ∇_i∇_k a ∇_j∇_l b`,
/// truncated at `hbar_order` (0, 1 or 2).
pub fn covariant_star_direct(
    a: &Symbol,
    b: &Symbol,
    j: &SymplecticMatrix,
    conn: &Connection,
    hbar_order: u32,
) -> Result<Symbol> {
    same_space(a.space(), b.space())?;
    if hbar_order > 2 {
        return Err(Error::InvalidArgument(format!("direct covariant product is available through hbar^2, got {hbar_order}")));
    }
    let space = a.space();
    let n = space.ncoords();
    let mut out = a.try_mul(b)?;
    if hbar_order == 0 {
        return Ok(out);
    }
    let ga: Vec<Symbol> = (0..n).map(|i| a.partial(i)).collect();
    let gb: Vec<Symbol> = (0..n).map(|i| b.partial(i)).collect();
    let half_i = Coefficient::new(Rational::ZERO, Rational::new(1, 2));
    let hbar = Symbol::hbar_pow(space, 1);
    let mut first = Symbol::zero(space);
    for (i, gai) in ga.iter().enumerate().filter(|(_, g)| !g.is_zero()) {
        for (jj, gbj) in gb.iter().enumerate().filter(|(_, g)| !g.is_zero()) {
            let e = &j.entries[i][jj];
            if !e.is_zero() {
                first = &first + &(&(gai * e) * gbj);
            }
        }
    }
    out = &out + &(&first * &hbar).scale(&half_i);
    if hbar_order == 1 {
        return Ok(out);
    }
    let ha = covariant_hessian(a, &ga, conn)?;
    let hb = covariant_hessian(b, &gb, conn)?;
    // Contract J^{ij} J^{kl} ∇_i∇_k a ∇_j∇_l b via M_{jk} = Σ_i J^{ij} ∇_i∇_k a.
    let mut ma = vec![vec![Symbol::zero(space); n]; n];
    for (jj, row) in ma.iter_mut().enumerate() {
        for (k, slot) in row.iter_mut().enumerate() {
            let mut acc = Symbol::zero(space);
            for i in 0..n {
                let e = &j.entries[i][jj];
                if !e.is_zero() && !ha[i][k].is_zero() {
                    acc = &acc + &(e * &ha[i][k]);
                }
            }
            *slot = acc;
        }
    }
    let mut second = Symbol::zero(space);
    for jj in 0..n {
        for k in 0..n {
            if ma[jj][k].is_zero() {
                continue;
            }
            for l in 0..n {
                let e = &j.entries[k][l];
                if !e.is_zero() && !hb[jj][l].is_zero() {
                    second = &second + &(&(&ma[jj][k] * e) * &hb[jj][l]);
                }
            }
        }
    }
    let w = &half_i * &half_i;
    let w = w.scale(&Rational::new(1, 2));
    out = &out + &(&second * &hbar.pow(2)).scale(&w);
    Ok(out)
}

/// Determinant of `J'`.
pub fn measure_factor(j: &SymplecticMatrix) -> Result<Symbol> {
    let n = j.dim();
    if n % 2 == 1 {
        return Err(Error::InvalidArgument(format!("symplectic matrix of odd dimension {n}")));
    }
    let space = j.entries[0][0].space().clone();
    Ok(determinant(&j.entries, &space))
}

/// Pfaffian of `J'`; its square is [`measure_factor`].
pub fn pfaffian(j: &SymplecticMatrix) -> Result<Symbol> {
    let n = j.dim();
    if n % 2 == 1 {
        return Err(Error::InvalidArgument(format!("symplectic matrix of odd dimension {n}")));
    }
    let idx: Vec<usize> = (0..n).collect();
    Ok(pfaffian_rec(&j.entries, &idx))
}

fn pfaffian_rec(a: &[Vec<Symbol>], idx: &[usize]) -> Symbol {
    if idx.is_empty() {
        return Symbol::one(a[0][0].space());
    }
    let first = idx[0];
    let mut acc = Symbol::zero(a[0][0].space());
    for (pos, &jcol) in idx.iter().enumerate().skip(1) {
        let e = &a[first][jcol];
        if e.is_zero() {
            continue;
        }
        let rest: Vec<usize> = idx.iter().copied().filter(|&x| x != first && x != jcol).collect();
        let term = e * &pfaffian_rec(a, &rest);
        acc = if pos % 2 == 1 { &acc + &term } else { &acc - &term };
    }
    acc
}

/// Laplace expansion along rows with memoization over column subsets.
fn determinant(a: &[Vec<Symbol>], space: &Arc<PhaseSpace>) -> Symbol {
    let n = a.len();
    let mut memo: std::collections::HashMap<u32, Symbol> = std::collections::HashMap::new();
    fn rec(
        a: &[Vec<Symbol>],
        row: usize,
        cols: u32,
        space: &Arc<PhaseSpace>,
        memo: &mut std::collections::HashMap<u32, Symbol>,
    ) -> Symbol {
        if row == a.len() {
            return Symbol::one(space);
        }
        if let Some(v) = memo.get(&cols) {
            return v.clone();
        }
        let mut acc = Symbol::zero(space);
        let mut sign_pos = 0;
        for c in 0..a.len() {
            if cols & (1 << c) == 0 {
                continue;
            }
            let e = &a[row][c];
            if !e.is_zero() {
                let minor = rec(a, row + 1, cols & !(1 << c), space, memo);
                let term = e * &minor;
                acc = if sign_pos % 2 == 0 { &acc + &term } else { &acc - &term };
            }
            sign_pos += 1;
        }
        memo.insert(cols, acc.clone());
        acc
    }
    rec(a, 0, (1u32 << n) - 1, space, &mut memo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane() -> Arc<PhaseSpace> {
        PhaseSpace::new(&["q", "p"], &[("q", "p")], &[]).unwrap()
    }

    fn s(sp: &Arc<PhaseSpace>, src: &str) -> Symbol {
        Symbol::parse(sp, src).unwrap()
    }

    fn map(src: &Arc<PhaseSpace>, tgt: &Arc<PhaseSpace>, fwd: &[&str], inv: &[&str]) -> Result<Diffeomorphism> {
        Diffeomorphism::new(
            src.clone(),
            tgt.clone(),
            fwd.iter().map(|e| s(src, e)).collect(),
            inv.iter().map(|e| s(tgt, e)).collect(),
        )
    }

    #[test]
    fn identity_is_flat_and_canonical() {
        let sp = plane();
        let d = Diffeomorphism::identity(&sp);
        assert_eq!(jacobian_symplectic(&d).unwrap(), SymplecticMatrix::canonical(&sp));
        assert!(christoffel(&d).unwrap().is_zero());
        assert_eq!(measure_factor(&SymplecticMatrix::canonical(&sp)).unwrap(), Symbol::one(&sp));
    }

    #[test]
    fn round_trip_is_enforced() {
        let sp = plane();
        let tgt = PhaseSpace::new(&["Q", "P"], &[("Q", "P")], &[]).unwrap();
        assert!(map(&sp, &tgt, &["q", "p + q^2"], &["Q", "P - Q^2"]).is_ok());
        assert!(matches!(map(&sp, &tgt, &["q", "p + q^2"], &["Q", "P + Q^2"]), Err(Error::NotADiffeomorphism(_))));
    }

    #[test]
    fn scaled_map_has_nontrivial_measure() {
        let sp = plane();
        let tgt = PhaseSpace::new(&["Q", "P"], &[("Q", "P")], &[]).unwrap();
        let d = map(&sp, &tgt, &["2*q", "p"], &["Q/2", "P"]).unwrap();
        let j = jacobian_symplectic(&d).unwrap();
        // {2q, p} = 2 by hand.
        assert_eq!(j.entries[0][1], s(&tgt, "2"));
        assert_eq!(measure_factor(&j).unwrap(), s(&tgt, "4"));
        assert_eq!(pfaffian(&j).unwrap(), s(&tgt, "2"));
        assert!(christoffel(&d).unwrap().is_zero());
    }

    #[test]
    fn affine_maps_have_zero_connection() {
        let sp = plane();
        let tgt = PhaseSpace::new(&["Q", "P"], &[("Q", "P")], &[]).unwrap();
        let d = map(&sp, &tgt, &["2*q + 1", "p/2 - 3"], &["(Q - 1)/2", "2*P + 6"]).unwrap();
        assert!(christoffel(&d).unwrap().is_zero());
        assert_eq!(jacobian_symplectic(&d).unwrap(), SymplecticMatrix::canonical(&tgt));
    }

    #[test]
    fn shear_is_canonical_with_connection() {
        let sp = plane();
        let tgt = PhaseSpace::new(&["Q", "P"], &[("Q", "P")], &[]).unwrap();
        let d = map(&sp, &tgt, &["q", "p + q^2"], &["Q", "P - Q^2"]).unwrap();
        assert_eq!(jacobian_symplectic(&d).unwrap(), SymplecticMatrix::canonical(&tgt));
        let g = christoffel(&d).unwrap();
        // d²p/dQ² = -2 and dP/dp = 1, so Γ^P_{QQ} = -2; nothing else.
        assert_eq!(g.nonzero(), vec![(1, 0, 0, &s(&tgt, "-2"))]);
    }

    #[test]
    fn non_canonical_map_has_symbol_entries() {
        // Q2 = q2 + q1^2 with the momenta untouched breaks {Q2, P1} = 0.
        let sp = PhaseSpace::canonical(2, &[]).unwrap();
        let tgt = PhaseSpace::new(&["Q1", "Q2", "P1", "P2"], &[("Q1", "P1"), ("Q2", "P2")], &[]).unwrap();
        let d = map(&sp, &tgt, &["q1", "q2 + q1^2", "p1", "p2"], &["Q1", "Q2 - Q1^2", "P1", "P2"]).unwrap();
        let j = jacobian_symplectic(&d).unwrap();
        assert!(j.is_antisymmetric());
        assert_eq!(j.entries[1][2], s(&tgt, "2*Q1"));
        assert_eq!(j.entries[0][2], s(&tgt, "1"));
        assert_eq!(measure_factor(&j).unwrap(), s(&tgt, "1"));
    }

    #[test]
    fn hessian_with_and_without_connection() {
        let sp = plane();
        let tgt = PhaseSpace::new(&["Q", "P"], &[("Q", "P")], &[]).unwrap();
        let d = map(&sp, &tgt, &["q", "p + q^2"], &["Q", "P - Q^2"]).unwrap();
        let g = christoffel(&d).unwrap();
        let CovariantDerivative::Hessian(h) = covariant_derivative(&s(&tgt, "P"), &g, 2).unwrap() else { panic!() };
        // ∇∇P = -Γ^P_{QQ} ∂_P P in the QQ slot.
        assert_eq!(h[0][0], s(&tgt, "2"));
        assert!(h[0][1].is_zero() && h[1][1].is_zero());
        let CovariantDerivative::Hessian(h) =
            covariant_derivative(&s(&tgt, "Q^2*P"), &Connection::zero(&tgt), 2).unwrap()
        else {
            panic!()
        };
        assert_eq!(h[0][0], s(&tgt, "2*P"));
        assert_eq!(h[0][1], s(&tgt, "2*Q"));
        let CovariantDerivative::Hessian(h) = covariant_derivative(&s(&tgt, "7"), &g, 2).unwrap() else { panic!() };
        assert!(h.iter().flatten().all(Symbol::is_zero));
    }

    #[test]
    fn direct_matches_pullback_on_shear() {
        let sp = plane();
        let tgt = PhaseSpace::new(&["Q", "P"], &[("Q", "P")], &[]).unwrap();
        let d = map(&sp, &tgt, &["q", "p + q^2"], &["Q", "P - Q^2"]).unwrap();
        let (j, g) = (jacobian_symplectic(&d).unwrap(), christoffel(&d).unwrap());
        let a = s(&tgt, "Q^2*P + P^3 - Q");
        let b = s(&tgt, "Q*P^2 + 2*Q^3");
        let direct = covariant_star_direct(&a, &b, &j, &g, 2).unwrap();
        let pulled = covariant_star_pullback(&a, &b, &d).unwrap();
        for k in 0..=2 {
            assert_eq!(direct.hbar_coefficient(k), pulled.hbar_coefficient(k), "hbar^{k}");
        }
        assert_eq!(covariant_star_direct(&a, &b, &j, &g, 0).unwrap(), &a * &b);
    }

    #[test]
    fn flat_direct_matches_moyal() {
        let sp = PhaseSpace::canonical(2, &[]).unwrap();
        let a = s(&sp, "q1^2*p2 + p1");
        let b = s(&sp, "q2*p2^2 + q1*p1");
        let direct = covariant_star_direct(&a, &b, &SymplecticMatrix::canonical(&sp), &Connection::zero(&sp), 2).unwrap();
        assert_eq!(direct, star_truncated(&a, &b, 2).unwrap());
    }
}
