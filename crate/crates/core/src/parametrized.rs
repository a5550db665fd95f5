//! Parametrized extension of a deparametrized Hamiltonian system.
//!
//! From `H0(q, p)` on a base space the time `t` is promoted to a coordinate
//! with conjugate `Pt`, and the dynamics is generated by the first-class
//! constraint `phi = Pt + H0`. Three spaces are involved:
//!
//! * base: the user's `(q, p)`;
//! * extended: `(Pt, p.., t, q..)`, the causal coordinates;
//! * history: `(phi, B.., t, A..)`, labelled by the constants of motion.
//!
//! Coordinates of the last two are listed momenta first, so that index `i`
//! of a coordinate list matches the usual `(P_t, p_1, .., t, q_1, ..)` tables.

use std::sync::Arc;

use crate::covariant::Diffeomorphism;
use crate::error::{Error, Result};
use crate::moyal::moyal_bracket;
use crate::rational::{Coefficient, Rational};
use crate::symbol::{PhaseSpace, Symbol};

pub const TIME: &str = "t";
pub const TIME_MOMENTUM: &str = "Pt";
pub const CONSTRAINT: &str = "phi";
pub const MULTIPLIER: &str = "lambda";

/// Default cap on bracket iterations when building flows.
pub const DEFAULT_MAX_ORDER: usize = 32;

/// Constants of motion `A_j(t, q, p)`, `B_j(t, q, p)` over the extended space.
#[derive(Debug, Clone, PartialEq)]
pub struct Histories {
    pub a: Vec<Symbol>,
    pub b: Vec<Symbol>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    Quantum,
    Classical,
}

#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    base: Arc<PhaseSpace>,
    extended: Arc<PhaseSpace>,
    history: Arc<PhaseSpace>,
    h0: Symbol,
    constraint: Symbol,
    quantum: Option<Histories>,
    classical: Option<Histories>,
    causal: Option<Diffeomorphism>,
}

/// Bracket-iteration data `X_0 = x`, `X_{n+1} = [X_n, H0]` over the base space.
fn flow_terms(h0: &Symbol, x: &Symbol, dynamics: Dynamics, max_order: usize, name: &str) -> Result<Vec<Symbol>> {
    let mut out = vec![x.clone()];
    loop {
        let last = out.last().expect("non-empty");
        let next = match dynamics {
            Dynamics::Quantum => moyal_bracket(last, h0)?,
            Dynamics::Classical => last.poisson(h0)?,
        };
        if next.is_zero() {
            return Ok(out);
        }
        if out.len() > max_order {
            return Err(Error::NonTerminatingFlow { coordinate: name.to_string(), max_order });
        }
        out.push(next);
    }
}

impl ExtendedSystem {
    /// Builds the extended and history spaces and the constraint `Pt + H0`.
    pub fn parametrize(h0: &Symbol) -> Result<Self> {
        let base = h0.space().clone();
        let n = base.pairs().len();
        let mut params: Vec<String> = base.params().to_vec();
        params.push(MULTIPLIER.into());
        for j in 1..=n {
            params.push(format!("a{j}"));
        }
        for j in 1..=n {
            params.push(format!("b{j}"));
        }
        params.push("x".into());
        params.push("z0".into());
        let param_refs: Vec<&str> = params.iter().map(String::as_str).collect();
        for reserved in [TIME, TIME_MOMENTUM] {
            if base.var_index(reserved).is_some() {
                return Err(Error::InvalidSpace(format!("base space already uses the name `{reserved}`")));
            }
        }

        let qs: Vec<&str> = base.pairs().iter().map(|&(q, _)| base.coords()[q].as_str()).collect();
        let ps: Vec<&str> = base.pairs().iter().map(|&(_, p)| base.coords()[p].as_str()).collect();
        let mut coords = vec![TIME_MOMENTUM];
        coords.extend(&ps);
        coords.push(TIME);
        coords.extend(&qs);
        let mut pairs = vec![(TIME, TIME_MOMENTUM)];
        pairs.extend(qs.iter().copied().zip(ps.iter().copied()));
        let extended = PhaseSpace::new(&coords, &pairs, &param_refs)?;

        let an: Vec<String> = (1..=n).map(|j| format!("A{j}")).collect();
        let bn: Vec<String> = (1..=n).map(|j| format!("B{j}")).collect();
        let mut hcoords = vec![CONSTRAINT];
        hcoords.extend(bn.iter().map(String::as_str));
        hcoords.push(TIME);
        hcoords.extend(an.iter().map(String::as_str));
        let mut hpairs = vec![(TIME, CONSTRAINT)];
        hpairs.extend(an.iter().map(String::as_str).zip(bn.iter().map(String::as_str)));
        let history = PhaseSpace::new(&hcoords, &hpairs, &param_refs)?;

        let h0_ext = h0.transfer(&extended)?;
        let constraint = &Symbol::var(&extended, TIME_MOMENTUM)? + &h0_ext;
        Ok(ExtendedSystem { base, extended, history, h0: h0.clone(), constraint, quantum: None, classical: None, causal: None })
    }

    /// Parametrizes and attaches both history sets and the causal map.
    pub fn complete(h0: &Symbol, max_order: usize) -> Result<Self> {
        let mut sys = Self::parametrize(h0)?;
        sys.quantum = Some(sys.quantum_histories(max_order)?);
        sys.classical = Some(sys.classical_histories(max_order)?);
        sys.causal = Some(sys.causal_map()?);
        Ok(sys)
    }

    pub fn base(&self) -> &Arc<PhaseSpace> {
        &self.base
    }

    pub fn extended(&self) -> &Arc<PhaseSpace> {
        &self.extended
    }

    pub fn history(&self) -> &Arc<PhaseSpace> {
        &self.history
    }

    pub fn h0(&self) -> &Symbol {
        &self.h0
    }

    /// `phi = Pt + H0(q, p)` over the extended space.
    pub fn constraint(&self) -> &Symbol {
        &self.constraint
    }

    pub fn dof(&self) -> usize {
        self.base.pairs().len()
    }

    pub fn attached_quantum(&self) -> Option<&Histories> {
        self.quantum.as_ref()
    }

    pub fn attached_classical(&self) -> Option<&Histories> {
        self.classical.as_ref()
    }

    pub fn attached_causal(&self) -> Option<&Diffeomorphism> {
        self.causal.as_ref()
    }

    /// True once both history sets are attached and coincide.
    pub fn classical_equals_quantum(&self) -> bool {
        matches!((&self.quantum, &self.classical), (Some(q), Some(c)) if q == c)
    }

    /// Generator (label or parameter) as a symbol of `space`.
    pub fn generator(space: &Arc<PhaseSpace>, name: &str) -> Result<Symbol> {
        Symbol::var(space, name)
    }

    /// `Σ_n (sign·t)^n / n! · X_n`, with base coordinates bound through `bind`.
    fn assemble(&self, terms: &[Symbol], sign: i64, target: &Arc<PhaseSpace>, bind: &[Symbol]) -> Result<Symbol> {
        let t = Symbol::var(target, TIME)?;
        let slots: Vec<Option<&Symbol>> = bind.iter().map(Some).collect();
        let mut acc = Symbol::zero(target);
        let mut tpow = Symbol::one(target);
        for (n, x) in terms.iter().enumerate() {
            if n > 0 {
                tpow = &tpow * &t;
            }
            let w = Rational::from_int(sign.pow(n as u32)) * Rational::factorial(n as u32).recip();
            let xs = x.substitute_slots(&slots, target)?;
            acc = &acc + &(&xs * &tpow).scale(&Coefficient::real(w));
        }
        Ok(acc)
    }

    /// Base coordinates bound to same-named extended coordinates.
    fn bind_extended(&self) -> Result<Vec<Symbol>> {
        self.base.coords().iter().map(|c| Symbol::var(&self.extended, c)).collect()
    }

    /// Base coordinates bound to history labels: `q_j -> A_j`, `p_j -> B_j`.
    fn bind_history(&self) -> Result<Vec<Symbol>> {
        let mut out = vec![Symbol::zero(&self.history); self.base.ncoords()];
        for (j, &(q, p)) in self.base.pairs().iter().enumerate() {
            out[q] = Symbol::var(&self.history, &format!("A{}", j + 1))?;
            out[p] = Symbol::var(&self.history, &format!("B{}", j + 1))?;
        }
        Ok(out)
    }

    fn histories(&self, dynamics: Dynamics, max_order: usize) -> Result<Histories> {
        if max_order == 0 {
            return Err(Error::InvalidArgument("history flows need max_order >= 1".into()));
        }
        let bind = self.bind_extended()?;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for &(q, p) in self.base.pairs() {
            let fq = flow_terms(&self.h0, &Symbol::coord(&self.base, q), dynamics, max_order, &self.base.coords()[q])?;
            let fp = flow_terms(&self.h0, &Symbol::coord(&self.base, p), dynamics, max_order, &self.base.coords()[p])?;
            a.push(self.assemble(&fq, -1, &self.extended, &bind)?);
            b.push(self.assemble(&fp, -1, &self.extended, &bind)?);
        }
        Ok(Histories { a, b })
    }

    /// Moyal-Heisenberg flow `F_j(t) = Σ t^n/n! ad^n(q_j)`, `ad X = [X, H0]_M`,
    /// evaluated at `-t`.
    pub fn quantum_histories(&self, max_order: usize) -> Result<Histories> {
        self.histories(Dynamics::Quantum, max_order)
    }

    /// As [`Self::quantum_histories`] with the Poisson bracket.
    pub fn classical_histories(&self, max_order: usize) -> Result<Histories> {
        self.histories(Dynamics::Classical, max_order)
    }

    /// Forward flow of a base observable, `z(t, A, B)`, over the history space.
    pub fn heisenberg_symbol(&self, z: &Symbol, dynamics: Dynamics, max_order: usize) -> Result<Symbol> {
        let z = z.transfer(&self.base)?;
        let terms = flow_terms(&self.h0, &z, dynamics, max_order, &z.to_string())?;
        self.assemble(&terms, 1, &self.history, &self.bind_history()?)
    }

    /// `H0(A, B)` over the history space.
    pub fn history_hamiltonian(&self) -> Result<Symbol> {
        let slots = self.bind_history()?;
        let slots: Vec<Option<&Symbol>> = slots.iter().map(Some).collect();
        self.h0.substitute_slots(&slots, &self.history)
    }

    /// The causal map between `(t, phi, A, B)` (flat source) and
    /// `(t, Pt, q, p)` (target), from the classical flow and its reverse.
    pub fn causal_map(&self) -> Result<Diffeomorphism> {
        if let Some(d) = &self.causal {
            return Ok(d.clone());
        }
        let classical = match &self.classical {
            Some(c) => c.clone(),
            None => self.classical_histories(DEFAULT_MAX_ORDER)?,
        };
        let (hs, es) = (&self.history, &self.extended);
        let n = self.dof();
        // Target coordinates over the source: Pt = phi - H0(A, B), t = t,
        // q_j = F_j(t, A, B), p_j = G_j(t, A, B).
        let mut forward = vec![Symbol::zero(hs); es.ncoords()];
        forward[es.coord_index(TIME_MOMENTUM)?] = &Symbol::var(hs, CONSTRAINT)? - &self.history_hamiltonian()?;
        forward[es.coord_index(TIME)?] = Symbol::var(hs, TIME)?;
        for &(q, p) in self.base.pairs() {
            let (qn, pn) = (&self.base.coords()[q], &self.base.coords()[p]);
            forward[es.coord_index(qn)?] = self.heisenberg_symbol(&Symbol::coord(&self.base, q), Dynamics::Classical, DEFAULT_MAX_ORDER)?;
            forward[es.coord_index(pn)?] = self.heisenberg_symbol(&Symbol::coord(&self.base, p), Dynamics::Classical, DEFAULT_MAX_ORDER)?;
        }
        // Source coordinates over the target: phi = Pt + H0, t = t, A, B.
        let mut inverse = vec![Symbol::zero(es); hs.ncoords()];
        inverse[hs.coord_index(CONSTRAINT)?] = self.constraint.clone();
        inverse[hs.coord_index(TIME)?] = Symbol::var(es, TIME)?;
        for j in 0..n {
            inverse[hs.coord_index(&format!("A{}", j + 1))?] = classical.a[j].clone();
            inverse[hs.coord_index(&format!("B{}", j + 1))?] = classical.b[j].clone();
        }
        Diffeomorphism::new(hs.clone(), es.clone(), forward, inverse)
    }

    /// Heisenberg symbol of a base observable expressed in causal coordinates:
    /// `z(t, phi', A'(t, q, p), B'(t, q, p))`.
    pub fn observable_pullback(&self, z: &Symbol) -> Result<Symbol> {
        let hz = self.heisenberg_symbol(z, Dynamics::Quantum, DEFAULT_MAX_ORDER)?;
        self.causal_map()?.pull(&hz)
    }

    /// `dz/dt` along the causal representation:
    /// `[z(t, A, B), H0(A, B)]_M - {z(t, A, B), H0(A, B)}` over the history space.
    pub fn observable_time_derivative(&self, z: &Symbol) -> Result<Symbol> {
        let hz = self.heisenberg_symbol(z, Dynamics::Quantum, DEFAULT_MAX_ORDER)?;
        let h = self.history_hamiltonian()?;
        Ok(&moyal_bracket(&hz, &h)? - &hz.poisson(&h)?)
    }

    /// `λ (∂_t + Σ ∂H0/∂p_j ∂_{q_j} - ∂H0/∂q_j ∂_{p_j})` as components on the
    /// extended coordinates, in coordinate order, `λ` left symbolic.
    pub fn hamiltonian_vector_field(&self) -> Result<Vec<(String, Symbol)>> {
        let es = &self.extended;
        let lambda = Symbol::var(es, MULTIPLIER)?;
        let h = self.h0.transfer(es)?;
        es.coords()
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let comp = if name == TIME {
                    lambda.clone()
                } else if name == TIME_MOMENTUM {
                    Symbol::zero(es)
                } else {
                    // λ J^{ij} ∂_j H for the base coordinates.
                    let (partner, sign) = es.partner(i);
                    (&lambda * &h.partial(partner)).scale(&Coefficient::from_int(sign as i64))
                };
                Ok((name.clone(), comp))
            })
            .collect()
    }
}

/// The two coupled particles `H0 = p1²/2M + p2²/2m + k q1 p2²`, with
/// histories and causal map attached. Numeric overrides replace the
/// symbolic `M`, `m`, `k`.
pub fn fixture_coupled_particles(overrides: Option<(Rational, Rational, Rational)>) -> Result<ExtendedSystem> {
    let base = PhaseSpace::canonical(2, &["M", "m", "k"])?;
    let mut h0 = Symbol::parse(&base, "p1^2/(2*M) + p2^2/(2*m) + k*q1*p2^2")?;
    if let Some((big_m, small_m, k)) = overrides {
        h0 = h0.specialize(&[("M", big_m), ("m", small_m), ("k", k)])?;
    }
    ExtendedSystem::complete(&h0, DEFAULT_MAX_ORDER)
}
