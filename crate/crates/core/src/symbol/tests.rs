use super::*;
use proptest::prelude::*;

fn space2() -> Arc<PhaseSpace> {
    PhaseSpace::canonical(2, &["M", "m", "k"]).unwrap()
}

fn s(sp: &Arc<PhaseSpace>, src: &str) -> Symbol {
    Symbol::parse(sp, src).unwrap()
}

#[test]
fn additive_inverse_is_empty() {
    let sp = space2();
    let a = s(&sp, "q1");
    let z = &a + &(-&a);
    assert!(z.is_zero());
    assert_eq!(z.degree(), -1);
    assert_eq!(z.to_string(), "0");
}

#[test]
fn imaginary_parts_cancel() {
    let sp = space2();
    let sum = &s(&sp, "q1 + i*hbar*p1") + &s(&sp, "q1 - i*hbar*p1");
    assert_eq!(sum, s(&sp, "2*q1"));
}

#[test]
fn laurent_hbar_cancels() {
    let sp = space2();
    let prod = &s(&sp, "hbar^-1*q1") * &s(&sp, "hbar*p1");
    assert_eq!(prod, s(&sp, "q1*p1"));
}

#[test]
fn binomial_square() {
    let sp = space2();
    assert_eq!(s(&sp, "(q1+p1)^2"), s(&sp, "q1^2 + 2*q1*p1 + p1^2"));
}

#[test]
fn partial_derivatives() {
    let sp = space2();
    assert_eq!(s(&sp, "q1^2*p2").partial_by_name("q1").unwrap(), s(&sp, "2*q1*p2"));
    assert!(s(&sp, "p2").partial_by_name("q1").unwrap().is_zero());
    assert_eq!(s(&sp, "k*q1*p2^2").partial_by_name("p2").unwrap(), s(&sp, "2*k*q1*p2"));
    assert!(matches!(s(&sp, "q1").partial_by_name("x"), Err(Error::UnknownCoordinate(_))));
}

#[test]
fn poisson_with_coupled_hamiltonian() {
    let sp = space2();
    let h0 = s(&sp, "p1^2/(2*M) + p2^2/(2*m) + k*q1*p2^2");
    assert_eq!(s(&sp, "q1").poisson(&s(&sp, "p1")).unwrap(), Symbol::one(&sp));
    // Hand expansion: {q1, H0} = dH0/dp1 = p1/M.
    assert_eq!(s(&sp, "q1").poisson(&h0).unwrap(), s(&sp, "M^-1*p1"));
    assert!(s(&sp, "p2^2").poisson(&h0).unwrap().is_zero());
}

#[test]
fn substitution_of_flow() {
    let sp = space2();
    let target = PhaseSpace::new(&["t", "phi", "A1", "B1", "A2", "B2"], &[("t", "phi"), ("A1", "B1"), ("A2", "B2")], &["M", "m", "k"]).unwrap();
    let img = Symbol::parse(&target, "A1 + B1*t/M - k/(2*M)*B2^2*t^2").unwrap();
    let mut b = HashMap::new();
    b.insert("q1".to_string(), img.clone());
    assert_eq!(s(&sp, "q1").substitute(&b, &target).unwrap(), img);
    let err = s(&sp, "q1*p1").substitute(&b, &target).unwrap_err();
    assert_eq!(err, Error::Unbound("p1".into()));
}

#[test]
fn identity_substitution() {
    let sp = space2();
    let b: HashMap<String, Symbol> = ["q1", "p1"].iter().map(|n| (n.to_string(), s(&sp, n))).collect();
    assert_eq!(s(&sp, "q1*p1").substitute(&b, &sp).unwrap(), s(&sp, "q1*p1"));
}

#[test]
fn mixing_spaces_is_an_error() {
    let a = s(&space2(), "q1");
    let other = PhaseSpace::canonical(1, &[]).unwrap();
    let b = Symbol::parse(&other, "q1").unwrap();
    assert!(matches!(a.try_add(&b), Err(Error::SpaceMismatch(..))));
    assert!(matches!(a.poisson(&b), Err(Error::SpaceMismatch(..))));
}

#[test]
fn canonical_printing() {
    let sp = space2();
    assert_eq!(s(&sp, "p1*q1 + i*hbar/2").to_string(), "q1*p1 + (1/2)*i*hbar");
    assert_eq!(s(&sp, "-p1/M").to_string(), "-p1*M^-1");
    assert_eq!(s(&sp, "(1+2*i)*q2 - q1^3").to_string(), "-q1^3 + (1 + 2*i)*q2");
    assert_eq!(s(&sp, "-3/4").to_string(), "-(3/4)");
    assert_eq!(s(&sp, "-i").to_string(), "-i");
}

#[test]
fn parse_rejects_bad_input() {
    let sp = space2();
    assert!(matches!(Symbol::parse(&sp, "q1 +"), Err(Error::Parse { .. })));
    assert!(matches!(Symbol::parse(&sp, "0.5*q1"), Err(Error::Parse { .. })));
    assert!(matches!(Symbol::parse(&sp, "1/q1"), Err(Error::NotInvertible(_))));
    assert!(matches!(Symbol::parse(&sp, "zz"), Err(Error::UnknownName(_))));
}

#[test]
fn space_validation() {
    assert!(PhaseSpace::new(&["q", "p", "x"], &[("q", "p")], &[]).is_err());
    assert!(PhaseSpace::new(&["q", "p"], &[("q", "p"), ("p", "q")], &[]).is_err());
    assert!(PhaseSpace::new(&["q", "q"], &[("q", "q")], &[]).is_err());
    let sp = PhaseSpace::new(&["q", "p"], &[("q", "p")], &["hbar"]).unwrap();
    assert_eq!(sp.params(), &["hbar".to_string(), "pi".to_string()]);
    assert_eq!(sp.symplectic(0, 1), 1);
    assert_eq!(sp.symplectic(1, 0), -1);
}

#[test]
fn specialize_parameters() {
    let sp = space2();
    let a = s(&sp, "p1^2/(2*M) + k*q1");
    let b = a.specialize(&[("M", Rational::from_int(2)), ("k", Rational::ZERO)]).unwrap();
    assert_eq!(b, s(&sp, "p1^2/4"));
    assert!(a.specialize(&[("M", Rational::ZERO)]).is_err());
}

fn arb_symbol(sp: Arc<PhaseSpace>, max_terms: usize, max_exp: i16) -> impl Strategy<Value = Symbol> {
    let n = sp.ncoords();
    prop::collection::vec(
        (prop::collection::vec(0..=max_exp, n), -3i64..=3, -3i64..=3, 1i64..=3, -1i16..=1),
        0..=max_terms,
    )
    .prop_map(move |raw| {
        let terms = raw.into_iter().map(|(exps, re, im, den, h)| {
            let mut m = Monomial::ONE;
            for (i, e) in exps.into_iter().enumerate() {
                m.set(i, e, n);
            }
            m.set(sp.hbar_var(), h, n);
            (m, Coefficient::new(Rational::new(re, den), Rational::new(im, den)))
        });
        Symbol::from_terms(&sp, terms)
    })
}

fn triple() -> impl Strategy<Value = (Symbol, Symbol, Symbol)> {
    let sp = space2();
    (arb_symbol(sp.clone(), 4, 2), arb_symbol(sp.clone(), 4, 2), arb_symbol(sp, 4, 2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ring_axioms((a, b, c) in triple()) {
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
        prop_assert_eq!(&a * &b, &b * &a);
        prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
    }

    #[test]
    fn poisson_laws((a, b, c) in triple()) {
        let ab = a.poisson(&b).unwrap();
        prop_assert_eq!(ab.clone(), -&b.poisson(&a).unwrap());
        let leib = &(&b * &a.poisson(&c).unwrap()) + &(&ab * &c);
        prop_assert_eq!(a.poisson(&(&b * &c)).unwrap(), leib);
        let j = &(&a.poisson(&b.poisson(&c).unwrap()).unwrap() + &b.poisson(&c.poisson(&a).unwrap()).unwrap())
            + &c.poisson(&a.poisson(&b).unwrap()).unwrap();
        prop_assert!(j.is_zero());
    }

    #[test]
    fn partials_commute((a, _, _) in triple(), i in 0usize..4, j in 0usize..4) {
        prop_assert_eq!(a.partial(i).partial(j), a.partial(j).partial(i));
    }

    #[test]
    fn substitution_is_a_homomorphism((a, b, c) in triple(), d in arb_symbol(space2(), 3, 2)) {
        let sp = a.space().clone();
        let bind: HashMap<String, Symbol> = [("q1", c), ("p2", d), ("q2", s(&sp, "q2")), ("p1", s(&sp, "p1 + q2"))]
            .into_iter().map(|(n, v)| (n.to_string(), v)).collect();
        let lhs = (&a * &b).substitute(&bind, &sp).unwrap();
        let rhs = &a.substitute(&bind, &sp).unwrap() * &b.substitute(&bind, &sp).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn print_parse_round_trip((a, _, _) in triple()) {
        let text = a.to_string();
        prop_assert_eq!(Symbol::parse(a.space(), &text).unwrap(), a);
    }
}
