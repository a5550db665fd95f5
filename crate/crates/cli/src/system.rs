//! System definitions: the built-in fixture, key-value files, and inline
//! `key=value;key=value` strings.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use stargen::parametrized::{fixture_coupled_particles, ExtendedSystem, DEFAULT_MAX_ORDER};
use stargen::{PhaseSpace, Rational, Symbol};

use crate::error::CliError;

/// Names the expression grammar reserves.
const RESERVED: [&str; 3] = ["hbar", "pi", "i"];

#[derive(Debug, Clone)]
pub struct System {
    pub label: String,
    pub h0: Symbol,
    pub max_order: usize,
    pub fixture: bool,
}

impl System {
    pub fn coupled() -> Result<Self, CliError> {
        let sys = fixture_coupled_particles(None)?;
        Ok(System { label: "coupled".into(), h0: sys.h0().clone(), max_order: DEFAULT_MAX_ORDER, fixture: true })
    }

    /// `--fixture NAME` or `--system FILE|INLINE`; neither is an input error.
    pub fn resolve(fixture: Option<&str>, system: Option<&str>) -> Result<Self, CliError> {
        match (fixture, system) {
            (Some("coupled"), None) => Self::coupled(),
            (Some(other), None) => Err(CliError::Input(format!("unknown fixture `{other}` (available: coupled)"))),
            (None, Some(s)) => Self::load(s),
            (Some(_), Some(_)) => Err(CliError::Input("give either --fixture or --system, not both".into())),
            (None, None) => Err(CliError::Input("a system is required: --fixture coupled or --system <file>".into())),
        }
    }

    pub fn load(arg: &str) -> Result<Self, CliError> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{arg}: {e}")))?;
            let label = path.file_stem().map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
            Self::parse(&text, &label)
        } else if arg.contains('=') {
            Self::parse(&arg.replace(';', "\n"), arg)
        } else {
            Err(CliError::Input(format!("{arg}: no such file")))
        }
    }

    /// Keys: `h0` (required), `coords` (`q1 p1 q2 p2`, consecutive pairs),
    /// `params`, `name`, `max_order`. `#` starts a comment.
    pub fn parse(text: &str, label: &str) -> Result<Self, CliError> {
        let mut h0 = None;
        let mut coords = None;
        let mut params = None;
        let mut name = label.to_string();
        let mut max_order = DEFAULT_MAX_ORDER;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| CliError::Input(format!("line {}: expected `key = value`", n + 1)))?;
            let value = value.trim();
            match key.trim() {
                "h0" => h0 = Some(value.to_string()),
                "coords" => coords = Some(words(value)),
                "params" => params = Some(words(value)),
                "name" => name = value.to_string(),
                "max_order" => {
                    max_order = value.parse().map_err(|_| CliError::Input(format!("line {}: bad max_order `{value}`", n + 1)))?
                }
                other => return Err(CliError::Input(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        let h0 = h0.ok_or_else(|| CliError::Input("system definition has no `h0`".into()))?;
        let space = match coords {
            Some(c) => {
                if c.len() % 2 != 0 || c.is_empty() {
                    return Err(CliError::Input("coords must list (q, p) pairs".into()));
                }
                let params = params.unwrap_or_else(|| free_names(&[&h0], &c));
                build_space(&c, &params)?
            }
            None => infer_space(&[&h0], params.as_deref())?,
        };
        Ok(System { label: name, h0: Symbol::parse(&space, &h0)?, max_order, fixture: false })
    }

    /// Parametrized system with nothing attached; flows are computed on demand
    /// so that non-terminating ones surface as errors.
    pub fn extended(&self) -> Result<ExtendedSystem, CliError> {
        Ok(ExtendedSystem::parametrize(&self.h0)?)
    }
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| c == ',' || c.is_whitespace()).filter(|w| !w.is_empty()).map(String::from).collect()
}

/// Identifiers of an expression, skipping function names.
pub fn identifiers(src: &str) -> Vec<String> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let rest = src[i..].trim_start();
            if !rest.starts_with('(') {
                out.push(src[start..i].to_string());
            }
        } else if c.is_ascii_digit() {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.') {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

fn free_names(exprs: &[&str], coords: &[String]) -> Vec<String> {
    let set: BTreeSet<String> = exprs
        .iter()
        .flat_map(|e| identifiers(e))
        .filter(|n| !RESERVED.contains(&n.as_str()) && !coords.contains(n))
        .collect();
    set.into_iter().collect()
}

/// `coords` as consecutive (q, p) pairs, laid out as all q's then all p's.
fn build_space(coords: &[String], params: &[String]) -> Result<Arc<PhaseSpace>, CliError> {
    let qs: Vec<&str> = coords.iter().step_by(2).map(String::as_str).collect();
    let ps: Vec<&str> = coords.iter().skip(1).step_by(2).map(String::as_str).collect();
    let layout: Vec<&str> = qs.iter().chain(&ps).copied().collect();
    let pairs: Vec<(&str, &str)> = qs.iter().copied().zip(ps.iter().copied()).collect();
    let params: Vec<&str> = params.iter().map(String::as_str).collect();
    Ok(PhaseSpace::new(&layout, &pairs, &params)?)
}

/// Space whose pairs are `(q<s>, p<s>)` for every suffix `s` seen in the
/// expressions; any other name becomes a parameter. With no coordinate in
/// sight the space is the single pair `(q, p)`.
pub fn infer_space(exprs: &[&str], params: Option<&[String]>) -> Result<Arc<PhaseSpace>, CliError> {
    let mut suffixes = BTreeSet::new();
    for e in exprs {
        for id in identifiers(e) {
            let mut chars = id.chars();
            if let Some('q' | 'p') = chars.next() {
                let rest = chars.as_str();
                if rest.chars().all(|c| c.is_ascii_digit()) {
                    suffixes.insert((rest.parse::<u64>().ok(), rest.to_string()));
                }
            }
        }
    }
    if suffixes.is_empty() {
        suffixes.insert((None, String::new()));
    }
    let coords: Vec<String> = suffixes.iter().flat_map(|(_, s)| [format!("q{s}"), format!("p{s}")]).collect();
    let params = match params {
        Some(p) => p.to_vec(),
        None => free_names(exprs, &coords),
    };
    build_space(&coords, &params)
}

/// `1/2`, `3`, `-0.25` as an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational, CliError> {
    let bad = || CliError::Input(format!("`{s}` is not a rational or decimal number"));
    let t = s.trim();
    if let Some((int, frac)) = t.split_once('.') {
        let neg = int.starts_with('-');
        let digits = format!("{}{frac}", int.trim_start_matches(['-', '+']));
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let num: i64 = digits.parse().map_err(|_| bad())?;
        let r = Rational::new(num, 10i64.pow(frac.len() as u32));
        return Ok(if neg { -r } else { r });
    }
    t.parse().map_err(|_| bad())
}
