//! `stargen evolve`: grid propagation driven by a JSON config, with
//! snapshots, a checksummed manifest and a diagnostics summary.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use stargen::covariant::{jacobian_symplectic, measure_factor};
use stargen::grid::*;
use stargen::parametrized::{TIME, TIME_MOMENTUM};

use crate::error::CliError;
use crate::system::System;

/// RK4's stability interval on the imaginary axis is `2√2`.
const RK4_IMAGINARY_BOUND: f64 = 2.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Causal,
    Schrodinger,
    History,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Evolution {
    Moyal,
    Liouville,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureChoice {
    /// `dq dp` on the time slice.
    Flat,
    /// `|det J'|^{-1/2} dq dp` from the causal map, sampled at `t = 0` on the
    /// constraint surface.
    Causal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryName {
    Periodic,
    ZeroPadded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Spectral,
    Fd4,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Points per axis: one number for all axes or one per axis.
    pub points: PerAxis<usize>,
    /// `[min, max]` per axis; defaults to `[-half_width, half_width]`.
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    pub boundary: BoundaryName,
    pub scheme: SchemeName,
}

fn default_half_width() -> f64 {
    6.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum PerAxis<T> {
    All(T),
    Each(Vec<T>),
}

impl<T: Clone> PerAxis<T> {
    fn expand(&self, n: usize, what: &str) -> Result<Vec<T>, CliError> {
        match self {
            PerAxis::All(v) => Ok(vec![v.clone(); n]),
            PerAxis::Each(v) if v.len() == n => Ok(v.clone()),
            PerAxis::Each(v) => Err(CliError::Input(format!("{what}: expected {n} entries, got {}", v.len()))),
        }
    }
}

/// Gaussian `Π exp(-(x - c)²/w²) / (√π w)` over the base coordinates.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub width: Option<PerAxis<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub fixture: Option<String>,
    #[serde(default)]
    pub system: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub representation: Representation,
    pub evolution: Evolution,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    pub grid: GridConfig,
    #[serde(default)]
    pub initial: Option<Initial>,
    pub dt: f64,
    pub steps: usize,
    #[serde(default)]
    pub snapshot_every: Option<usize>,
    #[serde(default = "default_measure")]
    pub measure: MeasureChoice,
}

fn default_hbar() -> f64 {
    1.0
}

fn default_measure() -> MeasureChoice {
    MeasureChoice::Flat
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut cfg: Config = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        // System files are looked up next to the config first.
        if let (Some(sys), Some(dir)) = (&cfg.system, path.parent()) {
            let beside = dir.join(sys);
            if !Path::new(sys).is_absolute() && beside.is_file() {
                cfg.system = Some(beside.to_string_lossy().into_owned());
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(CliError::Input(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CliError::Input(format!("dt must be positive, got {}", self.dt)));
        }
        match (self.representation, self.evolution) {
            (Representation::History, _) => Err(CliError::Input(
                "the history representation is static; evolve the causal (liouville) or schrodinger representation".into(),
            )),
            (Representation::Causal, Evolution::Moyal) => {
                Err(CliError::Input("the causal representation evolves by the liouville equation".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotEntry {
    pub file: String,
    pub step: usize,
    pub time: f64,
    pub sha256: String,
}

pub struct Outcome {
    pub manifest: Value,
    pub warnings: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn grid_spec(cfg: &GridConfig, names: &[String]) -> Result<GridSpec, CliError> {
    let n = names.len();
    let points = cfg.points.expand(n, "grid.points")?;
    let bounds = match &cfg.bounds {
        Some(b) if b.len() == n => b.clone(),
        Some(b) => return Err(CliError::Input(format!("grid.bounds: expected {n} entries, got {}", b.len()))),
        None => vec![[-cfg.half_width, cfg.half_width]; n],
    };
    let axes = names.iter().zip(points).zip(bounds).map(|((name, p), [lo, hi])| Axis::new(name.clone(), lo, hi, p)).collect();
    let boundary = match cfg.boundary {
        BoundaryName::Periodic => Boundary::Periodic,
        BoundaryName::ZeroPadded => Boundary::ZeroPadded,
    };
    let scheme = match cfg.scheme {
        SchemeName::Spectral => Scheme::Spectral,
        SchemeName::Fd4 => Scheme::Fd4,
    };
    Ok(GridSpec::new(axes, boundary, scheme)?)
}

fn initial_state(spec: &GridSpec, init: Option<&Initial>) -> Result<GridState, CliError> {
    let n = spec.ndim();
    let center = init.and_then(|i| i.center.clone()).unwrap_or_else(|| vec![0.0; n]);
    if center.len() != n {
        return Err(CliError::Input(format!("initial.center: expected {n} entries, got {}", center.len())));
    }
    let width = match init.and_then(|i| i.width.as_ref()) {
        Some(w) => w.expand(n, "initial.width")?,
        None => vec![1.0; n],
    };
    if width.iter().any(|w| !(*w > 0.0)) {
        return Err(CliError::Input("initial.width must be positive".into()));
    }
    Ok(GridState::from_fn(spec.clone(), 0.0, |x| {
        x.iter().zip(&center).zip(&width).map(|((x, c), w)| (-((x - c) / w).powi(2)).exp() / (PI.sqrt() * w)).product()
    })?)
}

/// `|det J'|^{-1/2}` of the causal map on the grid, at `t = 0`, `Pt = -H0`.
fn causal_weight(system: &System, spec: &GridSpec, numeric: &Numeric) -> Result<Vec<f64>, CliError> {
    let sys = system.extended()?;
    let det = measure_factor(&jacobian_symplectic(&sys.causal_map()?)?)?;
    let es = sys.extended();
    let base = sys.base();
    let h0 = sys.h0();
    let gens_e = numeric.generator_values(es, [&det])?;
    let gens_b = numeric.generator_values(base, [h0])?;
    let slot: Vec<usize> = base.coords().iter().map(|c| es.coord_index(c)).collect::<stargen::Result<_>>()?;
    let (t, pt) = (es.coord_index(TIME)?, es.coord_index(TIME_MOMENTUM)?);
    let mut at = vec![0.0; es.ncoords()];
    let w = spec.sample(|x| {
        for (s, v) in slot.iter().zip(x) {
            at[*s] = *v;
        }
        at[t] = 0.0;
        at[pt] = -h0.eval(x, &gens_b).0;
        det.eval(&at, &gens_e).0.abs().powf(-0.5)
    });
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(CliError::Numerical(format!("measure weight is singular at flat index {i}")));
    }
    Ok(w)
}

fn rhs_diagnostics(moyal: &GridOperator, liouville: &GridOperator, f: &GridState) -> Value {
    let m = moyal.apply(&f.values);
    let l = liouville.apply(&f.values);
    let max_abs = m.iter().zip(&l).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let diff: f64 = m.iter().zip(&l).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = l.iter().map(|v| v * v).sum::<f64>().sqrt();
    json!({
        "time": f.time,
        "max_abs_difference": max_abs,
        "relative_l2_difference": if scale > 0.0 { diff / scale } else { diff },
    })
}

/// Runs the config, writing every artifact under `out`.
pub fn run(cfg: &Config, hbar_override: Option<f64>, out: &Path) -> Result<Outcome, CliError> {
    let system = System::resolve(cfg.fixture.as_deref(), cfg.system.as_deref())?;
    let hbar = hbar_override.unwrap_or(cfg.hbar);
    if !(hbar > 0.0 && hbar.is_finite()) {
        return Err(CliError::Input(format!("hbar must be positive, got {hbar}")));
    }
    let params: Vec<(&str, f64)> = cfg.params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let numeric = Numeric::new(hbar, &params);
    let names = system.h0.space().coords().to_vec();
    let spec = grid_spec(&cfg.grid, &names)?;
    let mut f0 = initial_state(&spec, cfg.initial.as_ref())?;
    if cfg.measure == MeasureChoice::Causal {
        f0 = f0.with_measure(causal_weight(&system, &spec, &numeric)?)?;
    }

    let moyal = GridOperator::moyal(&system.h0, &spec, &numeric)?;
    let liouville = GridOperator::liouville(&system.h0, &spec, &numeric)?;
    let op = match cfg.evolution {
        Evolution::Moyal => &moyal,
        Evolution::Liouville => &liouville,
    };
    let mut warnings = Vec::new();
    let cfl = op.cfl_number(cfg.dt);
    if cfl > RK4_IMAGINARY_BOUND {
        warnings.push(format!("CFL number {cfl:.3} exceeds the RK4 stability bound {RK4_IMAGINARY_BOUND:.3}; expect blow-up"));
    }

    std::fs::create_dir_all(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    let every = cfg.snapshot_every.unwrap_or(cfg.steps.max(1)).max(1);
    let mut snapshots = Vec::new();
    let mut save = |f: &GridState, step: usize| -> Result<(), CliError> {
        let file = format!("snapshot_{step:06}.bin");
        let path = out.join(&file);
        write_snapshot(&path, f)?;
        snapshots.push(SnapshotEntry { sha256: sha256_file(&path)?, file, step, time: f.time });
        Ok(())
    };
    save(&f0, 0)?;

    let n0 = normalize_check(&f0);
    let mut drift: f64 = 0.0;
    let mut step = 0;
    let mut pending: Option<CliError> = None;
    let result = evolve(op, &f0, cfg.dt, cfg.steps, |s| {
        step += 1;
        drift = drift.max((normalize_check(s) - n0).abs());
        if (step % every == 0 || step == cfg.steps) && pending.is_none() {
            if let Err(e) = save(s, step) {
                pending = Some(e);
            }
        }
    });
    let last = match result {
        Ok(f) => f,
        Err(e @ stargen::Error::NumericalAbort { .. }) => {
            let mut msg = e.to_string();
            if !warnings.is_empty() {
                msg = format!("{msg} ({})", warnings.join("; "));
            }
            return Err(CliError::Numerical(msg));
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(e) = pending {
        return Err(e);
    }
    if drift > 1e-2 * n0.abs().max(1e-300) {
        warnings.push(format!("normalization drifted by {drift:.3e} (initial {n0:.6})"));
    }

    // Gnuplot slice through the first conjugate pair at the grid centre.
    let pair = system.h0.space().pairs()[0];
    let fixed: Vec<usize> = spec.shape().iter().map(|n| n / 2).collect();
    let slice = out.join("final_slice.dat");
    write_gnuplot_slice(&slice, &last, pair.0, pair.1, &fixed)?;

    let correction = GridOperator::moyal_correction(&system.h0, &spec, &numeric)?;
    let half = Numeric { hbar: hbar / 2.0, ..numeric.clone() };
    let correction_half = GridOperator::moyal_correction(&system.h0, &spec, &half)?;
    let c_full = l2(&correction.apply(&f0.values));
    let c_half = l2(&correction_half.apply(&f0.values));
    let exponent = if c_full > 0.0 && c_half > 0.0 { Some((c_full / c_half).log2()) } else { None };

    let summary = json!({
        "normalization": {
            "initial": n0,
            "final": normalize_check(&last),
            "max_drift": drift,
        },
        "moyal_minus_liouville": {
            "bracket_order": moyal.max_order(),
            "initial": rhs_diagnostics(&moyal, &liouville, &f0),
            "final": rhs_diagnostics(&moyal, &liouville, &last),
            "correction_l2": c_full,
            "correction_hbar_exponent": exponent,
        },
        "cfl_number": cfl,
    });
    let grid = json!({
        "axes": spec.axes().iter().map(|a| json!({"name": a.name, "min": a.min, "max": a.max, "points": a.points})).collect::<Vec<_>>(),
        "boundary": cfg.grid.boundary,
        "scheme": cfg.grid.scheme,
    });
    let manifest = json!({
        "system": system.label,
        "h0": system.h0.to_string(),
        "params": cfg.params,
        "representation": cfg.representation,
        "evolution": cfg.evolution,
        "measure": cfg.measure,
        "hbar": hbar,
        "dt": cfg.dt,
        "steps": cfg.steps,
        "grid": grid,
        "snapshots": snapshots,
        "slice": { "file": "final_slice.dat", "axes": [names[pair.0].clone(), names[pair.1].clone()], "sha256": sha256_file(&slice)? },
        "summary": summary,
        "warnings": warnings,
    });
    let path: PathBuf = out.join("manifest.json");
    std::fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&manifest).expect("json")))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(Outcome { manifest, warnings })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
