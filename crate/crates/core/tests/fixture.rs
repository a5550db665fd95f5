use std::path::PathBuf;

use stargen::covariant::christoffel;
use stargen::distributions::*;
use stargen::grid::Numeric;
use stargen::parametrized::*;
use stargen::Symbol;

const PARAMS: [(&str, f64); 3] = [("M", 1.3), ("m", 0.7), ("k", 0.45)];

/// History coordinates (phi, B1, B2, t, A1, A2) from (Pt, p1, p2, t, q1, q2).
fn to_history(x: &[f64; 6]) -> [f64; 6] {
    let [big_m, m, k] = PARAMS.map(|p| p.1);
    let [pt, p1, p2, t, q1, q2] = *x;
    [
        pt + p1 * p1 / (2.0 * big_m) + p2 * p2 / (2.0 * m) + k * q1 * p2 * p2,
        p1 + k * p2 * p2 * t,
        p2,
        t,
        q1 - p1 * t / big_m - k * p2 * p2 * t * t / (2.0 * big_m),
        q2 - (p2 / m + 2.0 * k * q1 * p2) * t + k * p1 * p2 * t * t / big_m + k * k * p2.powi(3) * t.powi(3) / (3.0 * big_m),
    ]
}

/// Inverse of [`to_history`].
fn from_history(o: &[f64; 6]) -> [f64; 6] {
    let [big_m, m, k] = PARAMS.map(|p| p.1);
    let [phi, b1, b2, t, a1, a2] = *o;
    [
        phi - (b1 * b1 / (2.0 * big_m) + b2 * b2 / (2.0 * m) + k * a1 * b2 * b2),
        b1 - k * b2 * b2 * t,
        b2,
        t,
        a1 + b1 * t / big_m - k * b2 * b2 * t * t / (2.0 * big_m),
        a2 + (b2 / m + 2.0 * k * a1 * b2) * t + k * b1 * b2 * t * t / big_m - k * k * b2.powi(3) * t.powi(3) / (3.0 * big_m),
    ]
}

fn shifted(x: &[f64; 6], i: usize, h: f64) -> [f64; 6] {
    let mut y = *x;
    y[i] += h;
    y
}

/// `Σ_b ∂x'^i/∂O^b ∂²O^b/∂x'^j∂x'^k` by central differences.
fn connection_by_differences(x: &[f64; 6]) -> [[[f64; 6]; 6]; 6] {
    let o = to_history(x);
    let h1 = 1e-5;
    let mut jac = [[0.0; 6]; 6];
    for b in 0..6 {
        let (fp, fm) = (from_history(&shifted(&o, b, h1)), from_history(&shifted(&o, b, -h1)));
        for i in 0..6 {
            jac[i][b] = (fp[i] - fm[i]) / (2.0 * h1);
        }
    }
    let h2 = 1e-3;
    let mut hess = [[[0.0; 6]; 6]; 6];
    for j in 0..6 {
        for k in 0..6 {
            let pp = to_history(&shifted(&shifted(x, j, h2), k, h2));
            let pm = to_history(&shifted(&shifted(x, j, h2), k, -h2));
            let mp = to_history(&shifted(&shifted(x, j, -h2), k, h2));
            let mm = to_history(&shifted(&shifted(x, j, -h2), k, -h2));
            for b in 0..6 {
                hess[b][j][k] = (pp[b] - pm[b] - mp[b] + mm[b]) / (4.0 * h2 * h2);
            }
        }
    }
    let mut g = [[[0.0; 6]; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            for k in 0..6 {
                g[i][j][k] = (0..6).map(|b| jac[i][b] * hess[b][j][k]).sum();
            }
        }
    }
    g
}

#[test]
fn connection_agrees_with_finite_differences() {
    let sys = fixture_coupled_particles(None).unwrap();
    let es = sys.extended();
    let order = ["Pt", "p1", "p2", "t", "q1", "q2"];
    let idx: Vec<usize> = order.iter().map(|c| es.coord_index(c).unwrap()).collect();
    let conn = christoffel(&sys.causal_map().unwrap()).unwrap();
    let all: Vec<&Symbol> = conn.entries.iter().flatten().flatten().collect();
    let gens = Numeric::new(1.0, &PARAMS).generator_values(es, all).unwrap();
    for x in [[0.2, -0.4, 0.9, 0.6, 1.1, -0.3], [-1.0, 0.5, -0.7, 1.4, -0.2, 0.8]] {
        let oracle = connection_by_differences(&x);
        let mut at = vec![0.0; es.ncoords()];
        for (n, &v) in idx.iter().zip(&x) {
            at[*n] = v;
        }
        for i in 0..6 {
            for j in 0..6 {
                for k in 0..6 {
                    let got = conn.entries[idx[i]][idx[j]][idx[k]].eval(&at, &gens).0;
                    let want = oracle[i][j][k];
                    assert!((got - want).abs() < 1e-5 * (1.0 + want.abs()), "G^{}_{}{} at {x:?}: {got} vs {want}", i + 1, j + 1, k + 1);
                }
            }
        }
    }
}

#[test]
fn connection_entries_that_differ_from_the_printed_table() {
    let sys = fixture_coupled_particles(None).unwrap();
    let es = sys.extended();
    let conn = christoffel(&sys.causal_map().unwrap()).unwrap();
    let (pt, p2, t) = (es.coord_index("Pt").unwrap(), es.coord_index("p2").unwrap(), es.coord_index("t").unwrap());
    let q1 = es.coord_index("q1").unwrap();
    let a1 = "(q1 - p1*t/M - k*p2^2*t^2/(2*M))";
    // The Pt component along p2 p2 keeps the 1/m from the kinetic term.
    assert_eq!(conn.entries[pt][p2][p2], Symbol::parse(es, &format!("1/m + 2*k*{a1}")).unwrap());
    assert!(conn.entries[q1][p2][t].is_zero());
    // At a point where A1 vanishes the finite-difference value is 1/m.
    let x = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let g = connection_by_differences(&x);
    assert!((g[0][2][2] - 1.0 / PARAMS[1].1).abs() < 1e-6);
    assert!(connection_by_differences(&[0.3, 0.2, 0.9, 1.5, 0.4, 0.1])[4][2][3].abs() < 1e-6);
}

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("STARGEN_BLESS").is_some() {
        std::fs::write(&path, format!("{actual}\n")).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected.trim_end(), "{name}");
}

#[test]
fn canonical_text_forms() {
    let sys = fixture_coupled_particles(None).unwrap();
    let h = sys.quantum_histories(DEFAULT_MAX_ORDER).unwrap();
    let text: Vec<String> = h.a.iter().zip(&h.b).enumerate().flat_map(|(j, (a, b))| [format!("A{} = {a}", j + 1), format!("B{} = {b}", j + 1)]).collect();
    golden("histories.txt", &text.join("\n"));

    let hs = sys.history();
    let a = [Symbol::var(hs, "A1").unwrap()];
    let b = [Symbol::var(hs, "B1").unwrap()];
    let labels = ([Symbol::var(hs, "a1").unwrap()], [Symbol::var(hs, "b1").unwrap()]);
    let shifted = exp_shift_star_delta(&a, &b, &labels.0, &labels.1, 4).unwrap();
    golden("shifted_delta.txt", &shifted.to_string());

    let (a, b) = default_labels(&sys).unwrap();
    golden("history_stargenfunction.txt", &build_stargenfunction(&sys, &a, &b, Representation::History).unwrap().to_string());
    golden("causal_stargenfunction.txt", &build_stargenfunction(&sys, &a, &b, Representation::Causal).unwrap().to_string());
}
