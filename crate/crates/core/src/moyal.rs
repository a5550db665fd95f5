//! Flat Moyal star product, Moyal bracket, star powers and star-exponential data.
//!
//! For a canonical pair `(q, p)` with `{q, p} = 1` the product is
//!
//! ```text
//! a * b = Σ_{α,β} (iħ/2)^{|α|+|β|} (-1)^{|β|} / (α! β!) (∂q^α ∂p^β a)(∂p^α ∂q^β b)
//! ```
//!
//! summed over multi-indices, one `(α_i, β_i)` per pair. For polynomials the
//! sum is finite; it is enumerated directly per pair of monomials.

use crate::error::{Error, Result};
use crate::rational::{Coefficient, Rational};
use crate::symbol::{accumulate, same_space, Monomial, PhaseSpace, Symbol, TermMap};
#[cfg(test)]
use std::sync::Arc;

/// Which bidifferential orders `n = |α| + |β|` to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Orders {
    UpTo(u32),
    /// Odd orders only, rescaled so the result is the Moyal bracket.
    Bracket,
}

fn falling(x: i16, k: i16) -> i64 {
    (0..k).map(|j| (x - j) as i64).product()
}

fn factorial(k: i16) -> i64 {
    (1..=k as i64).product()
}

struct PairEnum<'a> {
    space: &'a PhaseSpace,
    ma: &'a Monomial,
    mb: &'a Monomial,
    orders: Orders,
    n: usize,
}

impl PairEnum<'_> {
    /// Recursively chooses `(α_k, β_k)` for pair `k`, carrying the partial
    /// monomial, the accumulated order and the rational weight.
    fn walk(&self, k: usize, mono: Monomial, order: u32, odd_b: bool, weight: Rational, coef: &Coefficient, out: &mut TermMap) {
        let pairs = self.space.pairs();
        if k == pairs.len() {
            let keep = match self.orders {
                Orders::UpTo(max) => order <= max,
                Orders::Bracket => order % 2 == 1,
            };
            if !keep {
                return;
            }
            // (i/2)^n (-1)^{|β|} for the star; (i/2)^{n-1} ħ^{n-1} for the bracket.
            let (ipow, hpow, half) = match self.orders {
                Orders::UpTo(_) => (order, order, order),
                Orders::Bracket => (order - 1, order - 1, order - 1),
            };
            let mut c = Coefficient::i_pow(ipow).scale(&weight);
            c = c.scale(&Rational::new(1, 1i64 << half));
            if odd_b {
                c = -c;
            }
            let mut m = mono;
            let h = self.space.hbar_var();
            m.set(h, m.exp(h) + hpow as i16, self.n);
            accumulate(out, m, &c * coef);
            return;
        }
        let (q, p) = pairs[k];
        let (aq, ap, bq, bp) = (self.ma.exp(q), self.ma.exp(p), self.mb.exp(q), self.mb.exp(p));
        let max_a = aq.min(bp);
        let max_b = ap.min(bq);
        let limit = match self.orders {
            Orders::UpTo(max) => max,
            Orders::Bracket => u32::MAX,
        };
        for alpha in 0..=max_a {
            for beta in 0..=max_b {
                let o = order + alpha as u32 + beta as u32;
                if o > limit {
                    break;
                }
                let w = falling(aq, alpha) * falling(bp, alpha) * falling(ap, beta) * falling(bq, beta);
                let w = Rational::new(w, factorial(alpha) * factorial(beta));
                let mut m = mono;
                m.set(q, aq - alpha + bq - beta, self.n);
                m.set(p, ap - beta + bp - alpha, self.n);
                self.walk(k + 1, m, o, odd_b ^ (beta % 2 == 1), &weight * &w, coef, out);
            }
        }
    }
}

fn bidifferential(a: &Symbol, b: &Symbol, orders: Orders) -> Result<Symbol> {
    same_space(a.space(), b.space())?;
    let space = a.space();
    let n = space.ncoords();
    let mut out = TermMap::new();
    for (ma, ca) in a.terms() {
        for (mb, cb) in b.terms() {
            let base = ma.param_part(n).mul(&mb.param_part(n));
            let coef = ca * cb;
            let e = PairEnum { space, ma, mb, orders, n };
            e.walk(0, base, 0, false, Rational::ONE, &coef, &mut out);
        }
    }
    Ok(Symbol::from_map(space, out))
}

/// Moyal star product; exact and terminating for polynomials.
pub fn star(a: &Symbol, b: &Symbol) -> Result<Symbol> {
    bidifferential(a, b, Orders::UpTo(u32::MAX))
}

/// Star product keeping bidifferential orders `n <= max_order` (powers of ħ
/// up to `max_order` coming from the product itself).
pub fn star_truncated(a: &Symbol, b: &Symbol, max_order: u32) -> Result<Symbol> {
    bidifferential(a, b, Orders::UpTo(max_order))
}

/// `[a, b]_M = (a * b - b * a) / (iħ)`, computed from the odd orders only.
pub fn moyal_bracket(a: &Symbol, b: &Symbol) -> Result<Symbol> {
    bidifferential(a, b, Orders::Bracket)
}

/// Left-associated `a * a * ... * a`; `star_power(a, 0) = 1`.
pub fn star_power(a: &Symbol, n: u32) -> Symbol {
    let mut acc = Symbol::one(a.space());
    for _ in 0..n {
        acc = star(&acc, a).expect("same space");
    }
    acc
}

/// `[1, a, a*a, ...]` up to `a^{*k_order}`: Taylor data of the star exponential
/// in the coefficients of `k^n / n!` (up to the `i^n` of `exp(ik a)`).
pub fn star_exp_series(a: &Symbol, k_order: u32) -> Vec<Symbol> {
    let mut out = vec![Symbol::one(a.space())];
    for _ in 0..k_order {
        let next = star(out.last().expect("non-empty"), a).expect("same space");
        out.push(next);
    }
    out
}

/// First `n` in `2..=max_n` at which the star power departs from the ordinary
/// power, with the remainder `a^{*n} - a^n`.
pub fn star_exp_remainder(a: &Symbol, max_n: u32) -> Option<(u32, Symbol)> {
    let mut sp = a.clone();
    let mut pp = a.clone();
    for n in 2..=max_n {
        sp = star(&sp, a).expect("same space");
        pp = &pp * a;
        let r = &sp - &pp;
        if !r.is_zero() {
            return Some((n, r));
        }
    }
    None
}

/// True iff `a^{*n} = a^n` for `2 <= n <= max_n`, in which case the star
/// exponential of `a` is the ordinary exponential.
pub fn star_exp_classical_check(a: &Symbol, max_n: u32) -> Result<bool> {
    if max_n < 2 {
        return Err(Error::InvalidArgument("classicality check needs max_n >= 2".into()));
    }
    Ok(star_exp_remainder(a, max_n).is_none())
}

/// One bidifferential term of `[H, ·]_M` acting on an arbitrary function:
/// `coefficient(x) * ∂^orders f`.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketTerm {
    /// Bidifferential order `n`; `1` is the Poisson part.
    pub order: u32,
    /// Derivative orders applied to `f`, one per coordinate.
    pub f_orders: Vec<u32>,
    /// Derivative of `H` times the numerical weight, including `hbar^(n-1)`.
    pub coefficient: Symbol,
}

/// Expands `f ↦ [H, f]_M` into bidifferential terms, merging terms with the
/// same derivative of `f`. With `max_order = 1` this is `f ↦ {H, f}`.
pub fn bracket_operator(h: &Symbol, max_order: u32) -> Vec<BracketTerm> {
    let space = h.space();
    let n = space.ncoords();
    let npairs = space.pairs().len();
    let deg = h.degree().max(0) as u32;
    let mut terms: Vec<BracketTerm> = Vec::new();
    // Enumerate (α, β) with |α| + |β| odd and <= min(deg, max_order).
    let mut idx = vec![0u32; 2 * npairs];
    let top = deg.min(max_order);
    loop {
        let order: u32 = idx.iter().sum();
        if order % 2 == 1 && order <= top {
            let mut h_orders = vec![0u32; n];
            let mut f_orders = vec![0u32; n];
            let mut weight = Rational::ONE;
            let mut odd_b = false;
            for (k, &(q, p)) in space.pairs().iter().enumerate() {
                let (alpha, beta) = (idx[2 * k], idx[2 * k + 1]);
                h_orders[q] += alpha;
                h_orders[p] += beta;
                f_orders[p] += alpha;
                f_orders[q] += beta;
                weight = &weight * &Rational::new(1, factorial(alpha as i16) * factorial(beta as i16));
                odd_b ^= beta % 2 == 1;
            }
            let dh = h.partial_multi(&h_orders);
            if !dh.is_zero() {
                let mut c = Coefficient::i_pow(order - 1).scale(&weight).scale(&Rational::new(1, 1i64 << (order - 1)));
                if odd_b {
                    c = -c;
                }
                let coef = dh.scale(&c).mul_monomial(&Monomial::var(space.hbar_var(), n, (order - 1) as i16), &Coefficient::ONE);
                match terms.iter_mut().find(|t| t.f_orders == f_orders) {
                    Some(t) => t.coefficient = &t.coefficient + &coef,
                    None => terms.push(BracketTerm { order, f_orders, coefficient: coef }),
                }
            }
        }
        // Odometer over the multi-index, bounded by `top`.
        let mut k = 0;
        loop {
            if k == idx.len() {
                terms.retain(|t| !t.coefficient.is_zero());
                return terms;
            }
            idx[k] += 1;
            if idx.iter().sum::<u32>() <= top {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Applies a bracket operator symbolically: `Σ coefficient * ∂^orders f`.
pub fn apply_bracket_operator(ops: &[BracketTerm], f: &Symbol) -> Symbol {
    ops.iter().fold(Symbol::zero(f.space()), |acc, t| &acc + &(&t.coefficient * &f.partial_multi(&t.f_orders)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sp() -> Arc<PhaseSpace> {
        PhaseSpace::canonical(2, &["M", "m", "k"]).unwrap()
    }

    fn s(src: &str) -> Symbol {
        Symbol::parse(&sp(), src).unwrap()
    }

    #[test]
    fn canonical_pair() {
        assert_eq!(star(&s("q1"), &s("p1")).unwrap(), s("q1*p1 + i*hbar/2"));
        assert_eq!(star(&s("p1"), &s("q1")).unwrap(), s("q1*p1 - i*hbar/2"));
        assert_eq!(moyal_bracket(&s("q1"), &s("p1")).unwrap(), s("1"));
        assert_eq!(star(&s("q1"), &s("p1")).unwrap().to_string(), "q1*p1 + (1/2)*i*hbar");
    }

    #[test]
    fn squares() {
        // n=0: q^2 p^2; n=1: (iħ/2)(2q)(2p); n=2: (1/2)(iħ/2)^2 (2)(2).
        assert_eq!(star(&s("q1^2"), &s("p1^2")).unwrap(), s("q1^2*p1^2 + 2*i*hbar*q1*p1 - hbar^2/2"));
    }

    #[test]
    fn powers_and_series() {
        assert_eq!(star_power(&s("q1"), 2), s("q1^2"));
        assert_eq!(star_power(&s("q1 + p1"), 2), s("(q1 + p1)^2"));
        assert_eq!(star_power(&s("q1"), 0), s("1"));
        assert_eq!(star_exp_series(&s("q1"), 2), vec![s("1"), s("q1"), s("q1^2")]);
        assert!(star_exp_classical_check(&s("p2"), 4).unwrap());
        assert!(star_exp_classical_check(&s("p2"), 1).is_err());
    }

    #[test]
    fn bracket_with_coupled_hamiltonian() {
        let h0 = s("p1^2/(2*M) + p2^2/(2*m) + k*q1*p2^2");
        assert_eq!(moyal_bracket(&s("q1"), &h0).unwrap(), s("p1/M"));
    }

    #[test]
    fn truncation_drops_high_orders() {
        let full = star(&s("q1^2"), &s("p1^2")).unwrap();
        let t1 = star_truncated(&s("q1^2"), &s("p1^2"), 1).unwrap();
        assert_eq!(&full - &t1, s("-hbar^2/2"));
        assert_eq!(star_truncated(&s("q1^2"), &s("p1^2"), 0).unwrap(), s("q1^2*p1^2"));
    }

    #[test]
    fn operator_matches_bracket() {
        let h = s("p1^2/(2*M) + p2^2/(2*m) + k*q1*p2^2");
        let f = s("q2^3*p1 + q1*q2^2*p2 + p1^2*q2^2");
        let ops = bracket_operator(&h, u32::MAX);
        assert_eq!(apply_bracket_operator(&ops, &f), moyal_bracket(&h, &f).unwrap());
        let liou = bracket_operator(&h, 1);
        assert_eq!(apply_bracket_operator(&liou, &f), h.poisson(&f).unwrap());
        // Third-order terms: -(hbar^2/4) k d_p1 d_q2^2 f, as a single merged term.
        let third: Vec<_> = ops.iter().filter(|t| t.order == 3).collect();
        assert_eq!(third.len(), 1);
        assert_eq!(third[0].f_orders, vec![0, 2, 1, 0]);
        assert_eq!(third[0].coefficient, s("-k*hbar^2/4"));
    }

    fn arb(max_terms: usize, max_exp: i16) -> impl Strategy<Value = Symbol> {
        let space = PhaseSpace::canonical(2, &[]).unwrap();
        prop::collection::vec((prop::collection::vec(0..=max_exp, 4), -3i64..=3, 1i64..=3), 1..=max_terms).prop_map(
            move |raw| {
                let terms = raw.into_iter().map(|(e, num, den)| {
                    let mut m = Monomial::ONE;
                    for (i, x) in e.into_iter().enumerate() {
                        m.set(i, x, 4);
                    }
                    (m, Coefficient::frac(num, den))
                });
                Symbol::from_terms(&space, terms)
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn associativity(a in arb(3, 2), b in arb(3, 2), c in arb(3, 2)) {
            let l = star(&star(&a, &b).unwrap(), &c).unwrap();
            let r = star(&a, &star(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(l, r);
        }

        #[test]
        fn classical_limits(a in arb(4, 3), b in arb(4, 3)) {
            let ab = star(&a, &b).unwrap();
            prop_assert_eq!(ab.hbar_coefficient(0), &a * &b);
            let comm = &ab - &star(&b, &a).unwrap();
            prop_assert_eq!(comm.hbar_coefficient(1), a.poisson(&b).unwrap().scale(&Coefficient::I));
            let literal = comm.scale(&Coefficient::I.inv()).mul_monomial(&Monomial::var(a.space().hbar_var(), 4, -1), &Coefficient::ONE);
            prop_assert_eq!(moyal_bracket(&a, &b).unwrap(), literal);
        }

        #[test]
        fn quadratic_bracket_is_poisson(a in arb(4, 1), b in arb(4, 3)) {
            let a = Symbol::from_terms(a.space(), a.terms().iter().filter(|(m, _)| m.degree() <= 2).cloned());
            prop_assert_eq!(moyal_bracket(&a, &b).unwrap(), a.poisson(&b).unwrap());
            prop_assert_eq!(moyal_bracket(&b, &a).unwrap(), b.poisson(&a).unwrap());
        }

        #[test]
        fn bracket_antisymmetry_and_jacobi(a in arb(3, 2), b in arb(3, 2), c in arb(3, 2)) {
            let ab = moyal_bracket(&a, &b).unwrap();
            prop_assert_eq!(ab.clone(), -&moyal_bracket(&b, &a).unwrap());
            let j = &(&moyal_bracket(&a, &moyal_bracket(&b, &c).unwrap()).unwrap()
                + &moyal_bracket(&b, &moyal_bracket(&c, &a).unwrap()).unwrap())
                + &moyal_bracket(&c, &ab).unwrap();
            prop_assert!(j.is_zero());
        }
    }
}
