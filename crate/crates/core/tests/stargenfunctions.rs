use stargen::distributions::*;
use stargen::moyal::moyal_bracket;
use stargen::parametrized::*;
use stargen::{Coefficient, PhaseSpace, Symbol};

fn sym(sys_space: &std::sync::Arc<PhaseSpace>, src: &str) -> Symbol {
    Symbol::parse(sys_space, src).unwrap()
}

fn delta(s: &Symbol) -> DeltaSymbol {
    DeltaSymbol::delta(s)
}

#[test]
fn fixture_history_form_is_the_shifted_delta_product() {
    let sys = fixture_coupled_particles(None).unwrap();
    let hs = sys.history();
    let (a, b) = default_labels(&sys).unwrap();
    let rho = build_stargenfunction(&sys, &a, &b, Representation::History).unwrap();
    let expected = DeltaSymbol::exp_i_over_hbar(&sym(hs, "(b1 - a1)*B1 + (b2 - a2)*B2"))
        .try_mul(&delta(&sym(hs, "phi")))
        .unwrap()
        .try_mul(&delta(&sym(hs, "A1 - (a1 + b1)/2")))
        .unwrap()
        .try_mul(&delta(&sym(hs, "A2 - (a2 + b2)/2")))
        .unwrap();
    assert_eq!(rho, expected);
    // Static in both times.
    assert!(rho.derivative(hs.coord_index(TIME).unwrap()).is_zero());
}

#[test]
fn diagonal_labels_drop_the_phase() {
    let sys = fixture_coupled_particles(None).unwrap();
    let hs = sys.history();
    let (a, _) = default_labels(&sys).unwrap();
    let rho = build_stargenfunction(&sys, &a, &a, Representation::History).unwrap();
    let expected = delta(&sym(hs, "phi"))
        .try_mul(&delta(&sym(hs, "A1 - a1")))
        .unwrap()
        .try_mul(&delta(&sym(hs, "A2 - a2")))
        .unwrap();
    assert_eq!(rho, expected);
}

#[test]
fn eigenvalue_equations_hold_on_both_sides() {
    let sys = fixture_coupled_particles(None).unwrap();
    let hs = sys.history();
    let (a, b) = default_labels(&sys).unwrap();
    let rho = build_stargenfunction(&sys, &a, &b, Representation::History).unwrap();
    for (op, l, r) in [("phi", "0", "0"), ("A1", "a1", "b1"), ("A2", "a2", "b2")] {
        let (left, right) = verify_stargen(&rho, &sym(hs, op), &sym(hs, l), &sym(hs, r)).unwrap();
        assert!(left.is_zero(), "{op} left: {left}");
        assert!(right.is_zero(), "{op} right: {right}");
    }
    // Wrong eigenvalue leaves a residual.
    let wrong = delta(&sym(hs, "phi"))
        .try_mul(&delta(&sym(hs, "A1 - a1 + 1")))
        .unwrap()
        .try_mul(&delta(&sym(hs, "A2 - a2")))
        .unwrap();
    let (left, right) = verify_stargen(&wrong, &sym(hs, "A1"), &sym(hs, "a1"), &sym(hs, "a1")).unwrap();
    assert!(!left.is_zero() && !right.is_zero());
    assert!(left.min_hbar_power().unwrap_or(0) >= 0);
}

#[test]
fn causal_form_matches_direct_construction_from_histories() {
    let sys = fixture_coupled_particles(None).unwrap();
    let es = sys.extended();
    let (a, b) = default_labels(&sys).unwrap();
    let rho = build_stargenfunction(&sys, &a, &b, Representation::Causal).unwrap();
    let h = sys.quantum_histories(DEFAULT_MAX_ORDER).unwrap();
    let mut phase = Symbol::zero(es);
    let mut expected = delta(&sym(es, "Pt + p1^2/(2*M) + p2^2/(2*m) + k*q1*p2^2"));
    for j in 0..2 {
        let (aj, bj) = (a[j].transfer(es).unwrap(), b[j].transfer(es).unwrap());
        phase = &phase + &(&(&bj - &aj) * &h.b[j]);
        let mid = (&aj + &bj).scale(&Coefficient::frac(1, 2));
        expected = expected.try_mul(&delta(&(&h.a[j] - &mid))).unwrap();
    }
    let expected = expected.try_mul(&DeltaSymbol::exp_i_over_hbar(&phase)).unwrap();
    assert_eq!(rho, expected);
    // Explicit shifted arguments.
    let a1 = sym(es, "q1 - p1*t/M - k*p2^2*t^2/(2*M) - (a1 + b1)/2");
    let a2 = sym(es, "q2 - (p2/m + 2*k*q1*p2)*t + k*p1*p2*t^2/M + k^2*p2^3*t^3/(3*M) - (a2 + b2)/2");
    let explicit = delta(&sym(es, "Pt + p1^2/(2*M) + p2^2/(2*m) + k*q1*p2^2"))
        .try_mul(&delta(&a1))
        .unwrap()
        .try_mul(&delta(&a2))
        .unwrap()
        .try_mul(&DeltaSymbol::exp_i_over_hbar(&sym(es, "(b1 - a1)*(p1 + k*p2^2*t) + (b2 - a2)*p2")))
        .unwrap();
    assert_eq!(rho, explicit);
}

#[test]
fn free_particle_causal_form() {
    let base = PhaseSpace::canonical(1, &["M"]).unwrap();
    let sys = ExtendedSystem::complete(&sym(&base, "p1^2/(2*M)"), DEFAULT_MAX_ORDER).unwrap();
    let zero = vec![Symbol::zero(sys.history())];
    let rho = build_stargenfunction(&sys, &zero, &zero, Representation::Causal).unwrap();
    let es = sys.extended();
    let expected = delta(&sym(es, "Pt + p1^2/(2*M)")).try_mul(&delta(&sym(es, "q1 - p1*t/M"))).unwrap();
    assert_eq!(rho, expected);
}

#[test]
fn degeneracy_marginals() {
    let sys = fixture_coupled_particles(None).unwrap();
    let hs = sys.history();
    let (a, _) = default_labels(&sys).unwrap();
    let diag = build_stargenfunction(&sys, &a, &a, Representation::History).unwrap();
    let m = marginalize_degeneracy(&diag, &["a2"]).unwrap();
    assert_eq!(m, delta(&sym(hs, "phi")).try_mul(&delta(&sym(hs, "A1 - a1"))).unwrap());

    let e = DeltaSymbol::exp_i_over_hbar(&sym(hs, "(b1 - a1)*B1"));
    let m = marginalize_degeneracy(&e, &["B1"]).unwrap();
    assert_eq!(m, delta(&sym(hs, "b1 - a1")).mul_poly(&sym(hs, "2*pi*hbar")).unwrap());

    // Non-integrable position: label inside a polynomial prefactor only.
    let bad = delta(&sym(hs, "phi")).mul_poly(&sym(hs, "a1")).unwrap();
    assert!(marginalize_degeneracy(&bad, &["a1"]).is_err());
}

#[test]
fn observable_stargenfunctions() {
    let sys = fixture_coupled_particles(None).unwrap();
    let (hs, es) = (sys.history(), sys.extended());
    let x = sym(hs, "x");
    let g = observable_stargenfunction(&sys, "q1", &x, Representation::History).unwrap();
    assert_eq!(g, delta(&sym(hs, "A1 + B1*t/M - k*B2^2*t^2/(2*M) - x")));
    let g = observable_stargenfunction(&sys, "p2", &sym(hs, "z0"), Representation::Causal).unwrap();
    assert_eq!(g, delta(&sym(es, "p2 - z0")));
    let r = observable_stargenfunction(&sys, "q2", &sym(hs, "z0"), Representation::History);
    assert!(matches!(r, Err(stargen::Error::NotClassical(_))));
}

#[test]
fn position_eigenfunction_evolves_by_both_brackets() {
    let sys = fixture_coupled_particles(None).unwrap();
    let hs = sys.history();
    let g = observable_stargenfunction(&sys, "q1", &sym(hs, "x"), Representation::History).unwrap();
    let h = sys.history_hamiltonian().unwrap();
    let dt = g.derivative(hs.coord_index(TIME).unwrap());
    assert!(!dt.is_zero());
    assert_eq!(moyal_bracket_right(&g, &h).unwrap(), dt);
    assert_eq!(poisson_right(&g, &h).unwrap(), dt);
    // Symbol-level statement of the same flow.
    let q1 = sys.heisenberg_symbol(&sym(sys.base(), "q1"), Dynamics::Quantum, DEFAULT_MAX_ORDER).unwrap();
    assert_eq!(moyal_bracket(&q1, &h).unwrap(), q1.partial(hs.coord_index(TIME).unwrap()));
}

#[test]
fn schrodinger_chain_is_formal() {
    let sys = fixture_coupled_particles(None).unwrap();
    let (a, b) = default_labels(&sys).unwrap();
    let chain = schrodinger_chain(&sys, &a, &b).unwrap();
    assert_eq!(chain.factors.len(), 5);
    assert!(!chain.is_canonical());
    assert!(chain.to_string().starts_with("Delta_*(p2^2*q1*k"));
}

#[test]
fn canonical_form_is_independent_of_rewrite_order() {
    use proptest::prelude::*;
    use proptest::test_runner::TestRunner;
    let sp = PhaseSpace::new(&["x", "y", "u", "v"], &[("x", "u"), ("y", "v")], &["c"]).unwrap();
    let pieces = [
        delta(&sym(&sp, "x - c")),
        DeltaSymbol::delta_k(&sym(&sp, "2*y + x"), 1),
        DeltaSymbol::exp_i_over_hbar(&sym(&sp, "x*u + c*v")),
        DeltaSymbol::from_poly(&sym(&sp, "x^2*y + u")),
        DeltaSymbol::delta_k(&sym(&sp, "-y + 3"), 2),
    ];
    let mut runner = TestRunner::default();
    runner
        .run(&(proptest::sample::subsequence((0..pieces.len()).collect::<Vec<_>>(), 2..=4), any::<u64>()), |(idx, seed)| {
            let mut order = idx.clone();
            let mut perm = idx.clone();
            // Deterministic shuffle from the seed.
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            order.sort();
            let mul = |ix: &[usize]| {
                ix.iter().try_fold(DeltaSymbol::from_poly(&Symbol::one(&sp)), |acc, &i| acc.try_mul(&pieces[i]))
            };
            match (mul(&order), mul(&perm)) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(&x, &y);
                    prop_assert_eq!(x.canonicalize(), x);
                }
                (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
            }
            Ok(())
        })
        .unwrap();
}
