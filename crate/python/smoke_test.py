"""Smoke test for the stargen extension module.

Build and install it first:

    pip install ./crates/python --no-build-isolation
"""

import math

import stargen


def check(cond, what):
    print(("ok    " if cond else "FAIL  ") + what)
    return cond


def main():
    results = []

    plane = stargen.PhaseSpace(["q", "p"], [("q", "p")])
    q, p = plane.symbol("q"), plane.symbol("p")
    results.append(check(plane.params[:2] == ["hbar", "pi"], "hbar and pi are generators"))
    results.append(check(str(stargen.star(q, p)) == "q*p + (1/2)*i*hbar", "q * p = qp + i hbar/2"))
    results.append(check(str(stargen.moyal_bracket(q, p)) == "1", "[q, p]_M = 1"))
    cubic = q ** 3
    results.append(check(stargen.moyal_bracket(cubic, p ** 3) != cubic.poisson(p ** 3), "cubic bracket picks up hbar^2"))

    sys = stargen.ExtendedSystem.coupled()
    h = sys.histories()
    results.append(check(str(stargen.moyal_bracket(h["A1"], h["B1"])) == "1", "[A1, B1]_M = 1 on the fixture"))
    results.append(check(stargen.moyal_bracket(h["B2"], sys.constraint).is_zero(), "B2 commutes with phi"))
    results.append(check(h == sys.histories(classical=True), "Moyal and Poisson histories agree"))
    forward, inverse = sys.causal_map()
    results.append(check(str(forward["p2"]) == "B2" and str(inverse["B2"]) == "p2", "causal map p2 <-> B2"))
    results.append(check(len(sys.christoffel()) > 0, "causal connection is nonzero"))
    ext = sys.extended_space
    a, b = ext.symbol("q1*p2"), ext.symbol("q2^2")
    cov = sys.covariant_star(a, b)
    results.append(check(cov != stargen.star(a, b), "causal chart: covariant product differs from Moyal"))
    results.append(check((cov - a * b).subs("hbar", 0).is_zero(), "covariant product is pointwise at hbar = 0"))

    harmonic = plane.symbol("p^2/2 + q^2/2")
    grid = stargen.Grid([("q", -10.0, 10.0, 64), ("p", -10.0, 10.0, 64)])
    f0 = grid.gaussian([1.0, 0.5], [1.0, 1.0])
    f1 = grid.evolve(harmonic, f0, 0.01, 50)
    g1 = grid.evolve(harmonic, f0, 0.01, 50, evolution="liouville")
    results.append(check(abs(grid.integrate(f1) - 1.0) < 1e-10, "norm conserved under Moyal flow"))
    results.append(check(max(abs(x - y) for x, y in zip(f1, g1)) < 1e-12, "quadratic H: Moyal = Liouville"))
    try:
        grid.evolve(harmonic, f0, 1.5, 2000, evolution="liouville")
        results.append(check(False, "unstable step raises NumericalAbort"))
    except stargen.NumericalAbort:
        results.append(check(True, "unstable step raises NumericalAbort"))

    passed = sum(results)
    print(f"{passed}/{len(results)} passed")
    return 0 if passed == len(results) else 1


if __name__ == "__main__":
    raise SystemExit(main())
