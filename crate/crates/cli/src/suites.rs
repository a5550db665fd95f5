//! Identity suites behind `stargen verify`. Every row names the identity it
//! checks, carries a stable tag, and prints the residual it found.

use std::sync::Arc;

use clap::ValueEnum;
use serde::Serialize;

use stargen::covariant::*;
use stargen::distributions::*;
use stargen::moyal::moyal_bracket;
use stargen::parametrized::{ExtendedSystem, Histories, TIME};
use stargen::{PhaseSpace, Rational, Symbol};

use crate::error::CliError;
use crate::system::System;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Algebra,
    Histories,
    Christoffel,
    Stargen,
    Covariance,
    All,
}

impl Suite {
    pub fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Algebra, Suite::Histories, Suite::Christoffel, Suite::Stargen, Suite::Covariance],
            s => vec![s],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Algebra => "algebra",
            Suite::Histories => "histories",
            Suite::Christoffel => "christoffel",
            Suite::Stargen => "stargen",
            Suite::Covariance => "covariance",
            Suite::All => "all",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub suite: &'static str,
    pub tag: &'static str,
    pub identity: String,
    pub pass: bool,
    pub residual: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub system: String,
    pub suite: Suite,
    pub rows: Vec<Row>,
    pub passed: usize,
    pub failed: usize,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.failed == 0
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let status = if r.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!("{status}  {:<12} {:<28} {}\n", r.suite, r.tag, r.identity));
            if !r.pass {
                out.push_str(&format!("      residual: {}\n", r.residual));
            }
        }
        out.push_str(&format!("{}: {} passed, {} failed\n", self.system, self.passed, self.failed));
        out
    }
}

struct Rows {
    suite: &'static str,
    rows: Vec<Row>,
}

impl Rows {
    /// Row for `got == want`; the residual is their difference.
    fn equal(&mut self, tag: &'static str, identity: impl Into<String>, got: &Symbol, want: &Symbol) {
        let residual = got - want;
        self.push(tag, identity, residual.is_zero(), residual.to_string());
    }

    fn push(&mut self, tag: &'static str, identity: impl Into<String>, pass: bool, residual: impl Into<String>) {
        self.rows.push(Row { suite: self.suite, tag, identity: identity.into(), pass, residual: residual.into() });
    }
}

pub fn run(system: &System, suite: Suite) -> Result<Report, CliError> {
    let sys = system.extended()?;
    let mut rows = Vec::new();
    for s in suite.expand() {
        let mut r = Rows { suite: s.name(), rows: Vec::new() };
        match s {
            Suite::Algebra => algebra(&sys, system, &mut r)?,
            Suite::Histories => histories(&sys, system, &mut r)?,
            Suite::Christoffel => connection(&sys, system, &mut r)?,
            Suite::Stargen => stargen(&sys, system, &mut r)?,
            Suite::Covariance => covariance(&sys, &mut r)?,
            Suite::All => unreachable!("expanded"),
        }
        rows.extend(r.rows);
    }
    let passed = rows.iter().filter(|r| r.pass).count();
    Ok(Report { system: system.label.clone(), suite, failed: rows.len() - passed, passed, rows })
}

fn quantum(sys: &ExtendedSystem, system: &System) -> Result<Histories, CliError> {
    Ok(sys.quantum_histories(system.max_order)?)
}

/// Labelled history symbols over the extended space: t, phi, A_j, B_j.
fn named_histories(sys: &ExtendedSystem, h: &Histories) -> Result<Vec<(String, Symbol)>, CliError> {
    let es = sys.extended();
    let mut named = vec![("t".to_string(), Symbol::var(es, TIME)?), ("phi".to_string(), sys.constraint().clone())];
    for (j, a) in h.a.iter().enumerate() {
        named.push((format!("A{}", j + 1), a.clone()));
    }
    for (j, b) in h.b.iter().enumerate() {
        named.push((format!("B{}", j + 1), b.clone()));
    }
    Ok(named)
}

fn algebra(sys: &ExtendedSystem, system: &System, rows: &mut Rows) -> Result<(), CliError> {
    let es = sys.extended();
    let named = named_histories(sys, &quantum(sys, system)?)?;
    for (i, (ni, xi)) in named.iter().enumerate() {
        for (nj, xj) in &named[i + 1..] {
            let conjugate = (ni == "t" && nj == "phi") || (ni.starts_with('A') && nj.starts_with('B') && ni[1..] == nj[1..]);
            let want = if conjugate { Symbol::one(es) } else { Symbol::zero(es) };
            let got = moyal_bracket(xi, xj)?;
            rows.equal("history-bracket", format!("[{ni}, {nj}]_M = {want}"), &got, &want);
        }
    }
    Ok(())
}

fn histories(sys: &ExtendedSystem, system: &System, rows: &mut Rows) -> Result<(), CliError> {
    let es = sys.extended();
    let q = quantum(sys, system)?;
    let t = es.coord_index(TIME)?;
    let zero = Symbol::zero(es);
    let base = sys.base();
    for (j, &(qi, pi)) in base.pairs().iter().enumerate() {
        for (name, h, c) in [("A", &q.a[j], qi), ("B", &q.b[j], pi)] {
            let coord = &base.coords()[c];
            let at0 = h.substitute_var(t, &zero)?;
            rows.equal("history-initial-data", format!("{name}{}|t=0 = {coord}", j + 1), &at0, &Symbol::var(es, coord)?);
            rows.equal("history-conservation", format!("[{name}{}, phi]_M = 0", j + 1), &moyal_bracket(h, sys.constraint())?, &zero);
        }
    }
    if system.fixture {
        let expected = [
            ("A1", &q.a[0], "q1 - p1*t/M - k*p2^2*t^2/(2*M)"),
            ("B1", &q.b[0], "p1 + k*p2^2*t"),
            ("A2", &q.a[1], "q2 - (p2/m + 2*k*q1*p2)*t + k*p1*p2*t^2/M + k^2*p2^3*t^3/(3*M)"),
            ("B2", &q.b[1], "p2"),
        ];
        for (name, got, src) in expected {
            rows.equal("coupled-history-closed-form", format!("{name} = {src}"), got, &Symbol::parse(es, src)?);
        }
        let c = sys.classical_histories(system.max_order)?;
        let diff: Vec<String> = named_histories(sys, &q)?
            .into_iter()
            .zip(named_histories(sys, &c)?)
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, b)| format!("{}: {}", a.0, &a.1 - &b.1))
            .collect();
        rows.push("classical-quantum-agreement", "classical flow = Moyal flow", diff.is_empty(), if diff.is_empty() { "0".into() } else { diff.join("; ") });
    }
    Ok(())
}

/// Independently checked nonzero entries `G^i_jk`, `j <= k`, of the coupled
/// fixture's causal connection over (Pt, p1, p2, t, q1, q2), 1-based.
const COUPLED_CONNECTION: [(usize, usize, usize, &str); 17] = [
    (1, 2, 2, "1/M"),
    (5, 2, 4, "-1/M"),
    (1, 2, 4, "k*p2^2/M"),
    (5, 4, 4, "-k*p2^2/M"),
    (1, 3, 3, "1/m + 2*k*(q1 - p1*t/M - k*p2^2*t^2/(2*M))"),
    (1, 3, 4, "-2*k*p1*p2/M"),
    (6, 4, 4, "2*k*p1*p2/M"),
    (1, 3, 5, "2*k*p2"),
    (2, 3, 4, "2*k*p2"),
    (6, 4, 5, "-2*k*p2"),
    (1, 4, 4, "k^2*p2^4/M"),
    (2, 3, 3, "2*k*t"),
    (6, 3, 5, "-2*k*t"),
    (5, 3, 3, "k*t^2/M"),
    (6, 2, 3, "k*t^2/M"),
    (6, 3, 3, "2*k^2*p2*t^3/M"),
    (6, 3, 4, "-1/m - 2*k*(q1 - p1*t/M - k*p2^2*t^2/(2*M))"),
];

const COUPLED_ORDER: [&str; 6] = ["Pt", "p1", "p2", "t", "q1", "q2"];

fn connection(sys: &ExtendedSystem, system: &System, rows: &mut Rows) -> Result<(), CliError> {
    let es = sys.extended();
    let d = sys.causal_map()?;
    let j = jacobian_symplectic(&d)?;
    let canonical = SymplecticMatrix::canonical(es);
    let off: Vec<String> = (0..es.ncoords())
        .flat_map(|a| (0..es.ncoords()).map(move |b| (a, b)))
        .filter(|&(a, b)| j.entries[a][b] != canonical.entries[a][b])
        .map(|(a, b)| format!("J'[{}][{}] = {}", es.coords()[a], es.coords()[b], j.entries[a][b]))
        .collect();
    rows.push("causal-map-canonical", "J' = J (the causal map is canonical)", off.is_empty(), residual_list(&off));

    let g = christoffel(&d)?;
    let n = es.ncoords();
    let asym: Vec<String> = triples(n)
        .filter(|&(i, a, b)| a < b && g.entries[i][a][b] != g.entries[i][b][a])
        .map(|(i, a, b)| format!("G^{}_{}{}", es.coords()[i], es.coords()[a], es.coords()[b]))
        .collect();
    rows.push("connection-symmetry", "G'^i_jk = G'^i_kj", asym.is_empty(), residual_list(&asym));

    let curvature = curvature_components(&g, es);
    rows.push("connection-flatness", "R^i_jkl[G'] = 0", curvature.is_empty(), residual_list(&curvature));

    if system.fixture {
        let idx: Vec<usize> = COUPLED_ORDER.iter().map(|c| es.coord_index(c)).collect::<stargen::Result<_>>()?;
        let name = |i: usize, a: usize, b: usize| format!("G^{}_{}{}", COUPLED_ORDER[i], COUPLED_ORDER[a], COUPLED_ORDER[b]);
        for &(i, a, b, src) in &COUPLED_CONNECTION {
            let got = &g.entries[idx[i - 1]][idx[a - 1]][idx[b - 1]];
            rows.equal("coupled-connection-table", format!("{} = {src}", name(i - 1, a - 1, b - 1)), got, &Symbol::parse(es, src)?);
        }
        let stray: Vec<String> = triples(6)
            .filter(|&(i, a, b)| a <= b && !COUPLED_CONNECTION.iter().any(|e| (e.0, e.1, e.2) == (i + 1, a + 1, b + 1)))
            .filter(|&(i, a, b)| !g.entries[idx[i]][idx[a]][idx[b]].is_zero())
            .map(|(i, a, b)| format!("{} = {}", name(i, a, b), g.entries[idx[i]][idx[a]][idx[b]]))
            .collect();
        rows.push("coupled-connection-table", "all other entries vanish", stray.is_empty(), residual_list(&stray));
    }
    Ok(())
}

fn triples(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n).flat_map(move |i| (0..n).flat_map(move |a| (0..n).map(move |b| (i, a, b))))
}

fn residual_list(items: &[String]) -> String {
    if items.is_empty() {
        "0".into()
    } else {
        items.join("; ")
    }
}

/// Nonzero `R^i_jkl = ∂_k G^i_lj - ∂_l G^i_kj + G^i_km G^m_lj - G^i_lm G^m_kj`, `k < l`.
fn curvature_components(g: &Connection, space: &Arc<PhaseSpace>) -> Vec<String> {
    let n = g.dim();
    let e = &g.entries;
    let mut out = Vec::new();
    for i in 0..n {
        for jj in 0..n {
            for k in 0..n {
                for l in k + 1..n {
                    let mut r = &e[i][l][jj].partial(k) - &e[i][k][jj].partial(l);
                    for m in 0..n {
                        if !e[i][k][m].is_zero() && !e[m][l][jj].is_zero() {
                            r = &r + &(&e[i][k][m] * &e[m][l][jj]);
                        }
                        if !e[i][l][m].is_zero() && !e[m][k][jj].is_zero() {
                            r = &r - &(&e[i][l][m] * &e[m][k][jj]);
                        }
                    }
                    if !r.is_zero() {
                        let c = space.coords();
                        out.push(format!("R^{}_{}{}{} = {r}", c[i], c[jj], c[k], c[l]));
                    }
                }
            }
        }
    }
    out
}

fn delta_row(rows: &mut Rows, tag: &'static str, identity: String, res: &DeltaSymbol) {
    let negative = res.min_hbar_power().is_some_and(|p| p < 0);
    let text = if negative { format!("{res} (negative hbar power)") } else { res.to_string() };
    rows.push(tag, identity, res.is_zero(), text);
}

fn stargen(sys: &ExtendedSystem, system: &System, rows: &mut Rows) -> Result<(), CliError> {
    // The one-pair identity, on a plane of its own.
    let plane = PhaseSpace::new(&["q", "p"], &[("q", "p")], &["a", "b"])?;
    let s = |src: &str| Symbol::parse(&plane, src);
    let shifted = exp_shift_star_delta(&[s("q")?], &[s("p")?], &[s("a")?], &[s("b")?], 6)?;
    let want = DeltaSymbol::exp_i_over_hbar(&s("(b - a)*p")?).try_mul(&DeltaSymbol::delta(&s("q - (a + b)/2")?))?;
    let diff = shifted.try_sub(&want)?;
    delta_row(rows, "shifted-delta", "exp_*((i/hbar)(b-a)p) * delta_*(q - a) = exp((i/hbar)(b-a)p) delta(q - (a+b)/2)".into(), &diff);

    // The causal form needs the history flows to exist.
    quantum(sys, system)?;
    let (hs, es) = (sys.history(), sys.extended());
    let (a, b) = default_labels(sys)?;
    let rho = build_stargenfunction(sys, &a, &b, Representation::History)?;
    let zero = Symbol::zero(hs);
    let mut ops = vec![("phi".to_string(), Symbol::var(hs, "phi")?, zero.clone(), zero)];
    for j in 0..sys.dof() {
        ops.push((format!("A{}", j + 1), Symbol::var(hs, &format!("A{}", j + 1))?, a[j].clone(), b[j].clone()));
    }
    for (name, op, l, r) in &ops {
        let (left, right) = verify_stargen(&rho, op, l, r)?;
        delta_row(rows, "stargen-history", format!("{name} * rho = {l} rho"), &left);
        delta_row(rows, "stargen-history", format!("rho * {name} = {r} rho"), &right);
    }
    let t = hs.coord_index(TIME)?;
    delta_row(rows, "stargen-history", "d rho / dt = 0".into(), &rho.derivative(t));

    // The causal form obeys the eigenvalue equations only under the covariant
    // product of the causal chart; the plain Moyal product picks up hbar^2
    // terms there, so it is compared in closed form only.
    let causal = build_stargenfunction(sys, &a, &b, Representation::Causal)?;

    if system.fixture {
        let p = |src: &str| Symbol::parse(hs, src);
        let want = DeltaSymbol::delta(&p("phi")?)
            .try_mul(&DeltaSymbol::exp_i_over_hbar(&p("(b1 - a1)*B1 + (b2 - a2)*B2")?))?
            .try_mul(&DeltaSymbol::delta(&p("A1 - (a1 + b1)/2")?))?
            .try_mul(&DeltaSymbol::delta(&p("A2 - (a2 + b2)/2")?))?;
        delta_row(rows, "coupled-stargen-closed-form", "history form".into(), &rho.try_sub(&want)?);
        let e = |src: &str| Symbol::parse(es, src);
        let want = DeltaSymbol::delta(&e("Pt + p1^2/(2*M) + p2^2/(2*m) + k*q1*p2^2")?)
            .try_mul(&DeltaSymbol::exp_i_over_hbar(&e("(b1 - a1)*(p1 + k*p2^2*t) + (b2 - a2)*p2")?))?
            .try_mul(&DeltaSymbol::delta(&e("q1 - p1*t/M - k*p2^2*t^2/(2*M) - (a1 + b1)/2")?))?
            .try_mul(&DeltaSymbol::delta(&e("q2 - (p2/m + 2*k*q1*p2)*t + k*p1*p2*t^2/M + k^2*p2^3*t^3/(3*M) - (a2 + b2)/2")?))?;
        delta_row(rows, "coupled-stargen-closed-form", "causal form".into(), &causal.try_sub(&want)?);
    }
    Ok(())
}

/// Fixed cubic probes `(x_i + x_{i+1})^2 x_{i+2} + x_i / 2`, cyclic in the
/// coordinates.
fn probes(space: &Arc<PhaseSpace>) -> Vec<Symbol> {
    let n = space.ncoords();
    let x = |i: usize| Symbol::coord(space, i % n);
    (0..n)
        .map(|i| &(&(&x(i) + &x(i + 1)).pow(2) * &x(i + 2)) + &x(i).scale(&Rational::new(1, 2).into()))
        .collect()
}

fn covariance(sys: &ExtendedSystem, rows: &mut Rows) -> Result<(), CliError> {
    let es = sys.extended();
    let maps = [("identity", Diffeomorphism::identity(es)), ("causal map", sys.causal_map()?)];
    let probes = probes(es);
    for (name, d) in &maps {
        let j = jacobian_symplectic(d)?;
        let g = christoffel(d)?;
        let mut bad = Vec::new();
        let mut count = 0;
        for (i, a) in probes.iter().enumerate() {
            for b in &probes[i + 1..] {
                let direct = covariant_star_direct(a, b, &j, &g, 2)?;
                let pulled = covariant_star_pullback_truncated(a, b, d, 2)?;
                for k in 0..=2 {
                    let r = &direct.hbar_coefficient(k) - &pulled.hbar_coefficient(k);
                    if !r.is_zero() {
                        bad.push(format!("hbar^{k} for ({a}, {b}): {r}"));
                    }
                }
                count += 1;
            }
        }
        rows.push(
            "covariant-star",
            format!("direct = pullback through hbar^2, {name}, {count} probe pairs"),
            bad.is_empty(),
            residual_list(&bad),
        );
    }
    Ok(())
}
